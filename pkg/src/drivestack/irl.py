"""Preference-weight fitting for the lane-change planner.

The planner scores candidate paths with w . H; this module fits w from
demonstrated choices under a softmax choice model: the demonstrator picks
path j with probability exp(w.H_j) / sum_k exp(w.H_k).  The log-likelihood
of the demonstrations is maximized by plain gradient ascent.

A synthetic demonstrator with known ground-truth weights generates the
datasets: random traffic scenes are drawn from the seeded environment, the
candidate set is built exactly as the planner would, and the demonstrator
picks its argmax path.  Recovery is judged by top-1 agreement on held-out
scenes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, IrlConfig
from .dynamics import beta_bound
from .planning import (CandidatePath, generate_candidates,
                       lane_change_time_bounds, path_features, select_path)

FEATURE_NAMES = ("h_stability", "h_comfort", "h_duration", "h_proximity")


class DivergenceError(RuntimeError):
    """Weight norm exceeded the configured divergence limit during ascent."""


@dataclass(frozen=True)
class ChoiceScenario:
    """One demonstration: a candidate set and the index the demonstrator picked."""

    seed: int
    ego_speed: float
    ego_lane: int
    direction: int
    durations: tuple[float, ...]
    features: np.ndarray        # (n_candidates, 4)
    choice: int

    @property
    def candidates(self) -> list[CandidatePath]:
        # Reconstructed stubs carrying duration only (enough for tie-breaks).
        return [CandidatePath(y_origin=0.0, displacement=1.0, duration=tc, speed=1.0)
                for tc in self.durations]


def candidate_probabilities(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    ex = np.exp(shifted)
    return ex / np.sum(ex)


def irl_objective(weights: np.ndarray, scenarios: list[ChoiceScenario]) -> float:
    """Sum of demonstration log-likelihoods under the softmax choice model."""
    total = 0.0
    for sc in scenarios:
        scores = sc.features @ weights
        m = np.max(scores)
        total += scores[sc.choice] - (m + math.log(np.sum(np.exp(scores - m))))
    return float(total)


def irl_gradient(weights: np.ndarray, scenarios: list[ChoiceScenario]) -> np.ndarray:
    """d objective / d weights: sum of (chosen features - expected features)."""
    grad = np.zeros_like(weights, dtype=float)
    for sc in scenarios:
        probs = candidate_probabilities(sc.features @ weights)
        grad += sc.features[sc.choice] - probs @ sc.features
    return grad


@dataclass(frozen=True)
class IrlResult:
    weights: np.ndarray
    objective_trace: np.ndarray   # objective before each update, then final


def train_irl(scenarios: list[ChoiceScenario], config: IrlConfig) -> IrlResult:
    if not scenarios:
        raise ValueError("train_irl requires at least one scenario")
    w = np.array(config.init_weights, dtype=float)
    trace = np.empty(config.episodes + 1)
    for e in range(config.episodes):
        trace[e] = irl_objective(w, scenarios)
        w = w + config.learning_rate * irl_gradient(w, scenarios)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > config.divergence_limit:
            raise DivergenceError(f"weights diverged at epoch {e}")
    trace[-1] = irl_objective(w, scenarios)
    return IrlResult(weights=w, objective_trace=trace)


def top1_agreement(weights: np.ndarray, scenarios: list[ChoiceScenario]) -> float:
    """Fraction of scenarios where argmax under ``weights`` matches the choice."""
    if not scenarios:
        raise ValueError("top1_agreement requires at least one scenario")
    hits = sum(
        1 for sc in scenarios
        if select_path(sc.candidates, sc.features, weights) == sc.choice)
    return hits / len(scenarios)


# -- synthetic demonstrations -------------------------------------------------


def build_scenario(seed: int, cfg: ExperimentConfig) -> ChoiceScenario | None:
    """One demonstration scene -> candidate set -> ground-truth choice.

    Scenes put the demonstrator at cruise speed behind a binding leader whose
    gap is back-computed so the feasible duration band ends a configured
    stretch above the handling floor.  Preferences over duration are only
    identifiable in that regime; with a wide-open band the candidates differ
    by almost nothing but duration itself.  A few background vehicles give the
    proximity feature texture.  Returns None when the drawn scene leaves fewer
    than three candidates.
    """
    rng = np.random.default_rng(seed)
    sc = cfg.scenario
    irl_cfg = cfg.irl
    vx = float(rng.uniform(irl_cfg.demo_speed_lo, irl_cfg.demo_speed_hi))
    ego_lane = int(rng.integers(0, sc.lane_count))
    if ego_lane == 0:
        direction = 1
    elif ego_lane == sc.lane_count - 1:
        direction = -1
    else:
        direction = int(rng.choice([-1, 1]))
    y_origin = sc.lane_center(ego_lane)
    x_origin = sc.ego_start_x
    v_lead = float(np.clip(vx + rng.uniform(-irl_cfg.demo_speed_jitter,
                                            irl_cfg.demo_speed_jitter),
                           sc.v_min, sc.v_max))
    v_rel = max(0.0, vx - v_lead)
    displacement = direction * sc.lane_width
    floor = 1.875 * abs(displacement) / (vx * beta_bound(cfg.vehicle))
    tc_upper = floor * float(rng.uniform(irl_cfg.demo_stretch_lo,
                                         irl_cfg.demo_stretch_hi))
    gap = sc.safe_spacing + v_rel * tc_upper \
        + (cfg.planner.max_decel / 2.0) * tc_upper ** 2

    bounds = lane_change_time_bounds(displacement, vx, gap, v_lead,
                                     cfg.vehicle, cfg.planner, sc.safe_spacing)
    if not bounds.feasible:
        return None
    candidates = generate_candidates(y_origin, displacement, vx, x_origin,
                                     bounds, cfg.planner)
    if len(candidates) < 3:
        return None

    rows = [[x_origin + gap + cfg.vehicle.body_length,
             y_origin + displacement, v_lead]]
    for _ in range(int(rng.integers(irl_cfg.demo_extra_lo,
                                    irl_cfg.demo_extra_hi + 1))):
        rows.append([x_origin + float(rng.uniform(-60.0, 90.0)),
                     sc.lane_center(int(rng.integers(0, sc.lane_count))),
                     float(rng.uniform(sc.v_min, sc.v_max))])
    traffic = np.array(rows)

    features = np.array([
        path_features(c, traffic, cfg.reward.sigma_lat, cfg.reward.sigma_lon)
        for c in candidates])
    expert = np.array(irl_cfg.expert_weights, dtype=float)
    choice = select_path(candidates, features, expert)
    return ChoiceScenario(seed=seed, ego_speed=vx, ego_lane=ego_lane,
                          direction=direction,
                          durations=tuple(c.duration for c in candidates),
                          features=features, choice=choice)


def build_dataset(count: int, start_seed: int,
                  cfg: ExperimentConfig) -> list[ChoiceScenario]:
    """First ``count`` feasible scenes from seeds start_seed, start_seed+1, ..."""
    out: list[ChoiceScenario] = []
    seed = start_seed
    while len(out) < count:
        sc = build_scenario(seed, cfg)
        if sc is not None:
            out.append(sc)
        seed += 1
        if seed - start_seed > 50 * count + 100:
            raise RuntimeError("feasible-scene yield too low; check scenario config")
    return out


def save_dataset(path: str | Path, scenarios: list[ChoiceScenario]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "seed", "ego_speed", "ego_lane", "direction",
                         "candidate", "duration", *FEATURE_NAMES, "chosen"])
        for i, sc in enumerate(scenarios):
            for j, tc in enumerate(sc.durations):
                writer.writerow([
                    i, sc.seed, repr(float(sc.ego_speed)), sc.ego_lane,
                    sc.direction, j, repr(float(tc)),
                    *(repr(float(v)) for v in sc.features[j]),
                    int(j == sc.choice)])


def load_dataset(path: str | Path) -> list[ChoiceScenario]:
    rows: dict[int, list[dict[str, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["scenario"]), []).append(row)
    scenarios = []
    for idx in sorted(rows):
        group = sorted(rows[idx], key=lambda r: int(r["candidate"]))
        features = np.array([[float(r[name]) for name in FEATURE_NAMES]
                             for r in group])
        chosen = [j for j, r in enumerate(group) if int(r["chosen"])]
        if len(chosen) != 1:
            raise ValueError(f"scenario {idx}: expected exactly one chosen row")
        head = group[0]
        scenarios.append(ChoiceScenario(
            seed=int(head["seed"]), ego_speed=float(head["ego_speed"]),
            ego_lane=int(head["ego_lane"]), direction=int(head["direction"]),
            durations=tuple(float(r["duration"]) for r in group),
            features=features, choice=chosen[0]))
    return scenarios
