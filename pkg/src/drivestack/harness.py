"""Closed-loop episodes: decisions to maneuvers to controllers to plant.

This module wires the decision agent's discrete actions through the path
planner and the two predictive controllers into the traffic environment.
Keeping actions span one decision interval; a lane change is a macro action
that runs to completion, with its reward accumulated semi-MDP style (sum of
per-interval rewards discounted within the maneuver, stored with an effective
discount of gamma^D for D consumed intervals).

Also hosts the training loop, the evaluation runner, and the two comparison
studies (framework variants and value-learning strategies), plus the CSV
emitters for learning curves and beta/yaw-rate phase planes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .agent import (FULL_CATALOG, REDUCED_CATALOG, ActionSpec,
                    BootstrappedAgent, epsilon_schedule)
from .config import (MID_CHANGING_PRESET, MID_KEEPING_PRESET,
                     ExperimentConfig, changing_weights, keeping_weights)
from .control import PiSpeedHold, lane_changing_mpc, lane_keeping_mpc
from .dynamics import ControlInput
from .irl import build_dataset, train_irl
from .metrics import CHANGE_PHASE, KEEP_PHASE, EpisodeLog, MetricNormalizers
from .planning import (CandidatePath, generate_candidates,
                       lane_change_time_bounds, path_features, select_path)
from .traffic import HighwayEnv, PlacementError, idm_acceleration

# Headline deltas reported for the original framework study; emitted next to
# our measurements for orientation only, never asserted.
REFERENCE_FRAMEWORK_GAINS = {"velocity_pct": 2.12, "reward_pct": 10.25}
REFERENCE_COLLISION_DROPS = {"vs_dqn_pct": 62.31, "vs_double_pct": 43.59}

TransitionSink = Callable[[np.ndarray, int, float, np.ndarray, bool, float],
                          None]
Policy = Callable[[np.ndarray], int]


@dataclass(frozen=True)
class FrameworkVariant:
    """How decisions map to maneuvers.

    ``integrated`` exposes the full action catalog (speed moves and lane
    changes at three controller-weight presets each) and picks lane-change
    durations with the preference-weighted planner.  ``semi-integrated``
    keeps the planner but pins the weights to the middle presets.
    ``sequential`` pins the weights and replaces the planner with a fixed
    duration, clamped into the feasible band of the moment.
    """

    tag: str
    catalog: tuple[ActionSpec, ...]
    planner_active: bool
    fixed_duration: float = 2.0


INTEGRATED = FrameworkVariant("integrated", FULL_CATALOG, True)
SEMI_INTEGRATED = FrameworkVariant("semi-integrated", REDUCED_CATALOG, True)
SEQUENTIAL = FrameworkVariant("sequential", REDUCED_CATALOG, False)
VARIANTS = {v.tag: v for v in (INTEGRATED, SEMI_INTEGRATED, SEQUENTIAL)}

_HOLD_FALLBACK = ActionSpec("keep", 0.0, MID_KEEPING_PRESET)

# Sustained emergency braking saturates at a crawl instead of a standstill:
# the bicycle plant is undefined near zero longitudinal speed.
_CRAWL_SPEED = 1.0


def accelerate_index(catalog: Sequence[ActionSpec]) -> int:
    """Index of the mid-preset accelerate action (scripted free-flow policy)."""
    for i, spec in enumerate(catalog):
        if spec.kind == "keep" and spec.speed_delta > 0.0 \
                and spec.preset == MID_KEEPING_PRESET:
            return i
    raise ValueError("catalog has no mid-preset accelerate action")


@dataclass(frozen=True)
class ManeuverRecord:
    """One executed lane change: when it began and what the planner chose."""

    start_time: float
    duration: float
    target_lane: int
    bounds: tuple[float, float]


@dataclass
class EpisodeResult:
    total_reward: float = 0.0    # undiscounted sum of per-interval rewards
    mean_speed: float = 0.0
    collision: bool = False
    decisions: int = 0           # agent polls (semi-MDP transitions stored)
    ticks: int = 0               # decision intervals elapsed
    maneuvers: list[ManeuverRecord] = field(default_factory=list)
    log: EpisodeLog | None = None


class _Runner:
    """Single-episode execution state; built fresh by ``run_episode``."""

    def __init__(self, env: HighwayEnv, cfg: ExperimentConfig,
                 variant: FrameworkVariant, path_weights: np.ndarray,
                 collect_log: bool) -> None:
        sc = cfg.scenario
        self.env = env
        self.cfg = cfg
        self.variant = variant
        self.path_weights = np.asarray(path_weights, dtype=float)
        self.controls_per_tick = round(sc.decision_interval / sc.control_period)
        self.plants_per_control = round(sc.control_period / sc.plant_dt)
        self.total_ticks = round(sc.horizon / sc.decision_interval)
        self.log = EpisodeLog() if collect_log else None
        self.result = EpisodeResult(log=self.log)
        self.speed_sum = 0.0
        self.speed_count = 0
        self.action_index = 0
        self.maneuver_id = 0
        self.phase = KEEP_PHASE

    # -- plant-level helpers ---------------------------------------------------

    def _apply(self, ax_cmd: float, delta_f: float, y_ref: float) -> None:
        """Hold one control command for a full control period of plant steps."""
        env = self.env
        dt = self.cfg.scenario.plant_dt
        vx0 = env.ego.vx
        period = self.plants_per_control * dt
        ax_cmd = max(ax_cmd, (_CRAWL_SPEED - vx0) / period)
        steps = 0
        for _ in range(self.plants_per_control):
            env.step(ControlInput(ax=ax_cmd, delta_f=delta_f), dt)
            steps += 1
            if env.collision:
                break
        self.speed_sum += env.ego.vx
        self.speed_count += 1
        if self.log is not None:
            s = env.ego
            self.log.append(
                time=env.time, phase=self.phase, x=s.x, y=s.y, vx=s.vx,
                vy=s.vy, yaw=s.yaw, yaw_rate=s.yaw_rate, ax_cmd=ax_cmd,
                ax_exec=(s.vx - vx0) / (steps * dt), delta_f=delta_f,
                y_ref=y_ref, reward=env.compute_reward().total,
                action=self.action_index,
                maneuver=self.maneuver_id if self.phase == CHANGE_PHASE else 0)

    def _centering_steer(self) -> float:
        """Small lateral correction toward the lane center while keeping.

        Active only outside a deadband, which in practice means the short
        settling stretch after a lane change; the model speed is quantized to
        0.5 m/s so the controller's cached condensed matrices are reused.
        """
        env = self.env
        s = env.ego
        center = env.nearest_lane_center()
        if abs(s.y - center) <= 0.02 and abs(s.yaw) <= 0.002 \
                and abs(s.vy) <= 0.05 and abs(s.yaw_rate) <= 0.05:
            return 0.0
        vx = max(self.cfg.scenario.v_min, round(2.0 * s.vx) / 2.0)
        hold = CandidatePath(y_origin=center, displacement=0.0, duration=1.0,
                             speed=vx, x_origin=0.0)
        cmd = lane_changing_mpc(
            np.array([s.vy, s.yaw_rate, s.yaw, s.y]), vx, hold,
            elapsed=2.0, weights=changing_weights(MID_CHANGING_PRESET),
            limits=self.cfg.limits, params=self.cfg.vehicle)
        return cmd.delta_f if cmd.feasible else 0.0

    # -- decision-level execution ------------------------------------------------

    def keeping_tick(self, spec: ActionSpec) -> float:
        """One decision interval of speed keeping; returns the interval reward."""
        env, cfg = self.env, self.cfg
        sc = cfg.scenario
        weights = keeping_weights(spec.preset)
        target = min(max(env.ego.vx + spec.speed_delta, sc.v_min), sc.v_max)
        for _ in range(self.controls_per_tick):
            gap, lead_speed = env.leader_gap(env.ego_lane())
            cmd = lane_keeping_mpc(env.ego.vx, target, weights, cfg.limits,
                                   leader_gap=gap, leader_speed=lead_speed)
            self._apply(cmd.ax, self._centering_steer(),
                        y_ref=env.nearest_lane_center())
            if env.collision:
                break
        reward = env.compute_reward().total
        self.result.total_reward += reward
        return reward

    def _follower_safe(self, target_lane: int) -> bool:
        """Entering the lane must not force the rear vehicle past safe braking."""
        env = self.env
        follower = env.nearest_follower(target_lane)
        if follower is None:
            return True
        gap = env.ego.x - follower.x - self.cfg.vehicle.body_length
        if gap <= 0.0:
            return False
        imposed = idm_acceleration(gap, follower.speed, env.ego.vx,
                                   follower.idm)
        return imposed >= -self.cfg.mobil.safe_braking

    def begin_change(self) -> tuple[CandidatePath, int] | None:
        """Resolve direction and duration for a lane-change request.

        Direction goes to the adjacent lane with the larger usable clearance
        min(current-lane space, that lane's space ahead); the duration band is
        checked per side, so an infeasible favorite falls through to the other
        side, and a request with no feasible side returns None.
        """
        env, cfg = self.env, self.cfg
        sc = cfg.scenario
        lane = env.ego_lane()
        d_cur, v_cur = env.leader_gap(lane)
        options = []
        for target in (lane - 1, lane + 1):
            if not 0 <= target < sc.lane_count:
                continue
            if not self._follower_safe(target):
                continue
            d_adj, v_adj = env.leader_gap(target)
            gap, gap_speed = (d_cur, v_cur) if d_cur <= d_adj \
                else (d_adj, v_adj)
            displacement = sc.lane_center(target) - env.ego.y
            bounds = lane_change_time_bounds(
                displacement, env.ego.vx, gap, gap_speed, cfg.vehicle,
                cfg.planner, sc.safe_spacing)
            if not bounds.feasible:
                continue
            options.append((min(d_cur, d_adj), d_adj, -target, target,
                            displacement, bounds))
        if not options:
            return None
        _, _, _, target, displacement, bounds = max(options)

        if self.variant.planner_active:
            candidates = generate_candidates(env.ego.y, displacement,
                                             env.ego.vx, env.ego.x, bounds,
                                             cfg.planner)
            if not candidates:
                return None
            traffic = env.hdv_kinematics()
            feats = np.array([
                path_features(p, traffic, cfg.reward.sigma_lat,
                              cfg.reward.sigma_lon)
                for p in candidates]).reshape(len(candidates), 4)
            path = candidates[select_path(candidates, feats,
                                          self.path_weights)]
        else:
            tc = min(max(self.variant.fixed_duration, bounds.lower),
                     bounds.upper)
            path = CandidatePath(y_origin=env.ego.y, displacement=displacement,
                                 duration=tc, speed=env.ego.vx,
                                 x_origin=env.ego.x)
        self.result.maneuvers.append(ManeuverRecord(
            start_time=env.time, duration=path.duration, target_lane=target,
            bounds=(bounds.lower, bounds.upper)))
        return path, target

    def change_ticks(self, spec: ActionSpec, path: CandidatePath,
                     budget: int) -> tuple[float, int]:
        """Execute the maneuver; returns (discounted reward sum, ticks used)."""
        env, cfg = self.env, self.cfg
        sc = cfg.scenario
        gamma = cfg.agent.discount
        weights = changing_weights(spec.preset)
        pi = PiSpeedHold(cfg.pi, cfg.limits)
        ticks = min(math.ceil(path.duration / sc.decision_interval - 1e-9),
                    budget)
        self.maneuver_id += 1
        self.phase = CHANGE_PHASE
        start_time = env.time
        accumulated = 0.0
        used = 0
        for j in range(ticks):
            for _ in range(self.controls_per_tick):
                s = env.ego
                elapsed = env.time - start_time
                ax = pi.update(path.speed, s.vx, sc.control_period)
                cmd = lane_changing_mpc(
                    np.array([s.vy, s.yaw_rate, s.yaw, s.y]), path.speed,
                    path, elapsed, weights, cfg.limits, cfg.vehicle)
                ref_t = min(elapsed + sc.control_period, path.duration)
                self._apply(ax, cmd.delta_f,
                            y_ref=path.reference(ref_t).y)
                if env.collision:
                    break
            reward = env.compute_reward().total
            self.result.total_reward += reward
            accumulated += gamma ** j * reward
            used = j + 1
            if env.collision:
                break
        self.phase = KEEP_PHASE
        return accumulated, used

    def run(self, policy: Policy, sink: TransitionSink | None) -> EpisodeResult:
        env = self.env
        gamma = self.cfg.agent.discount
        tick = 0
        while tick < self.total_ticks and not env.collision:
            obs = env.encode_observation()
            action = int(policy(obs))
            spec = self.variant.catalog[action]
            self.action_index = action
            started = self.begin_change() if spec.kind == "change" else None
            if started is not None:
                path, _ = started
                reward, used = self.change_ticks(spec, path,
                                                 self.total_ticks - tick)
            else:
                live = spec if spec.kind == "keep" else _HOLD_FALLBACK
                reward = self.keeping_tick(live)
                used = 1
            tick += used
            self.result.decisions += 1
            if sink is not None:
                sink(obs, action, reward, env.encode_observation(),
                     env.collision, gamma ** used)
        self.result.ticks = tick
        self.result.collision = env.collision
        self.result.mean_speed = self.speed_sum / max(self.speed_count, 1)
        return self.result


def run_episode(env: HighwayEnv, policy: Policy, variant: FrameworkVariant,
                cfg: ExperimentConfig, path_weights: np.ndarray | Sequence[float],
                transition_sink: TransitionSink | None = None,
                collect_log: bool = False) -> EpisodeResult:
    """Run one episode on an already-reset environment.

    ``policy`` maps the encoded observation to a catalog index;
    ``transition_sink`` (if given) receives one semi-MDP transition per
    decision: (obs, action, reward, next_obs, terminal, effective discount).
    """
    runner = _Runner(env, cfg, variant, np.asarray(path_weights, dtype=float),
                     collect_log)
    return runner.run(policy, transition_sink)


# -- planner weight fitting ----------------------------------------------------


def fit_planner_weights(cfg: ExperimentConfig, start_seed: int = 0) -> np.ndarray:
    """Fit path-preference weights on a synthetic demonstration set."""
    scenarios = build_dataset(cfg.irl.train_scenarios, start_seed, cfg)
    return train_irl(scenarios, cfg.irl).weights


# -- training -------------------------------------------------------------------


def episode_seed(run_seed: int, episode: int) -> int:
    """Environment seed for one training episode; policy-independent."""
    return int(np.random.SeedSequence([run_seed, episode]).generate_state(1)[0])


@dataclass
class TrainingResult:
    agent: BootstrappedAgent
    rows: list[dict]             # per-episode learning-curve records
    invalid_episodes: int = 0

    def final_collision_rate(self, window: int = 100) -> float:
        tail = self.rows[-window:]
        if not tail:
            return math.nan
        return sum(r["collision"] for r in tail) / len(tail)


def run_training(cfg: ExperimentConfig, variant: FrameworkVariant,
                 path_weights: np.ndarray | Sequence[float], seed: int,
                 episodes: int | None = None,
                 env: HighwayEnv | None = None) -> TrainingResult:
    """Train one agent on the variant's catalog; returns it with its curve."""
    sc = cfg.scenario
    count = cfg.agent.episodes if episodes is None else episodes
    agent = BootstrappedAgent(sc.observation_dim, len(variant.catalog),
                              cfg.agent, seed=seed)
    if env is None:
        env = HighwayEnv(sc, cfg.idm, cfg.mobil, cfg.reward, cfg.vehicle)
    weights = np.asarray(path_weights, dtype=float)
    result = TrainingResult(agent=agent, rows=[])

    def sink(obs, action, reward, next_obs, terminal, discount):
        agent.store(obs, action, reward, next_obs, terminal, discount)
        agent.train_step()

    for e in range(count):
        try:
            env.reset(episode_seed(seed, e))
        except PlacementError:
            result.invalid_episodes += 1
            continue
        head = agent.sample_head()
        eps = epsilon_schedule(e, cfg.agent)
        try:
            ep = run_episode(env, lambda obs: agent.act_training(obs, head, eps),
                             variant, cfg, weights, transition_sink=sink)
        except np.linalg.LinAlgError:
            result.invalid_episodes += 1
            continue
        result.rows.append({
            "episode": e, "reward": ep.total_reward,
            "collision": int(ep.collision), "mean_speed": ep.mean_speed,
            "head": head, "epsilon": eps,
        })
    return result


CURVE_COLUMNS = ("episode", "reward", "collision", "mean_speed", "head",
                 "epsilon")


def save_learning_curve(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CURVE_COLUMNS})


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvalReport:
    variant: str
    seeds: tuple[int, ...]
    rewards: list[float]
    mean_speeds: list[float]
    collisions: list[bool]
    indicator_means: dict[str, float]
    maneuver_count: int
    invalid_seeds: list[int]
    logs: list[EpisodeLog] | None = None

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else math.nan

    @property
    def mean_speed(self) -> float:
        return float(np.mean(self.mean_speeds)) if self.mean_speeds else math.nan

    @property
    def collision_rate(self) -> float:
        if not self.collisions:
            return math.nan
        return sum(self.collisions) / len(self.collisions)


def evaluate(agent: BootstrappedAgent, cfg: ExperimentConfig,
             variant: FrameworkVariant,
             path_weights: np.ndarray | Sequence[float],
             seeds: Sequence[int], out_dir: str | Path | None = None,
             keep_logs: bool = False) -> EvalReport:
    """Voting-policy evaluation over a seed list, with per-episode metrics.

    Indicator aggregates are means over the episodes where the corresponding
    phase occurred (an episode with no lane change has no lateral metrics).
    Per-episode logs are written as CSV when ``out_dir`` is given.
    """
    env = HighwayEnv(cfg.scenario, cfg.idm, cfg.mobil, cfg.reward, cfg.vehicle)
    norm = MetricNormalizers.from_config(cfg.vehicle, cfg.scenario, cfg.limits)
    weights = np.asarray(path_weights, dtype=float)
    report = EvalReport(variant=variant.tag, seeds=tuple(seeds), rewards=[],
                        mean_speeds=[], collisions=[], indicator_means={},
                        maneuver_count=0, invalid_seeds=[],
                        logs=[] if keep_logs else None)
    per_episode: dict[str, list[float]] = {k: [] for k in (
        "lon_tracking", "lon_cruising", "lon_effort",
        "lat_tracking", "lat_stability", "lat_effort")}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for seed in seeds:
        try:
            env.reset(seed)
            ep = run_episode(env, agent.act_greedy, variant, cfg, weights,
                             collect_log=True)
        except (PlacementError, np.linalg.LinAlgError):
            report.invalid_seeds.append(seed)
            continue
        report.rewards.append(ep.total_reward)
        report.mean_speeds.append(ep.mean_speed)
        report.collisions.append(ep.collision)
        report.maneuver_count += len(ep.maneuvers)
        lon = ep.log.longitudinal(norm)
        lat = ep.log.lateral(norm)
        if lon.defined:
            per_episode["lon_tracking"].append(lon.tracking)
            per_episode["lon_cruising"].append(lon.cruising)
            per_episode["lon_effort"].append(lon.effort)
        if lat.defined:
            per_episode["lat_tracking"].append(lat.tracking)
            per_episode["lat_stability"].append(lat.stability)
            per_episode["lat_effort"].append(lat.effort)
        if out is not None:
            ep.log.save(out / f"episode_{variant.tag}_{seed}.csv")
        if report.logs is not None:
            report.logs.append(ep.log)
    report.indicator_means = {
        k: (float(np.mean(v)) if v else math.nan)
        for k, v in per_episode.items()}
    return report


def phase_plane_rows(logs: Iterable[EpisodeLog]) -> list[tuple[float, float]]:
    """(beta, yaw rate) samples from every lane-change control period."""
    rows = []
    for log in logs:
        phases = log.column("phase")
        betas = log.column("beta")
        rates = log.column("yaw_rate")
        for i in range(len(phases)):
            if phases[i] == CHANGE_PHASE:
                rows.append((float(betas[i]), float(rates[i])))
    return rows


def save_phase_plane(logs: Iterable[EpisodeLog], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "yaw_rate"])
        for beta, rate in phase_plane_rows(logs):
            writer.writerow([repr(beta), repr(rate)])


# -- comparison studies -----------------------------------------------------------


def _pct_delta(value: float, base: float) -> float:
    if base == 0.0:
        return math.nan
    return 100.0 * (value - base) / abs(base)


@dataclass
class FrameworkComparison:
    reports: dict[str, EvalReport]
    curves: dict[str, list[dict]]
    deltas: dict[str, dict[str, float]]   # variant -> deltas vs sequential
    reference: dict[str, float]

    def summary_lines(self) -> list[str]:
        lines = []
        for tag, report in self.reports.items():
            lines.append(
                f"{tag}: mean speed {report.mean_speed:.2f} m/s, "
                f"mean reward {report.mean_reward:.1f}, "
                f"collision rate {report.collision_rate:.2f}")
        for tag, delta in self.deltas.items():
            lines.append(
                f"{tag} vs sequential: velocity {delta['velocity_pct']:+.2f}%, "
                f"reward {delta['reward_pct']:+.2f}%, "
                f"collision rate {delta['collision_delta']:+.3f}")
        lines.append(
            "reference deltas (integrated vs sequential, non-binding): "
            f"velocity +{REFERENCE_FRAMEWORK_GAINS['velocity_pct']}%, "
            f"reward +{REFERENCE_FRAMEWORK_GAINS['reward_pct']}%")
        return lines


def compare_frameworks(cfg: ExperimentConfig, train_seed: int,
                       eval_seeds: Sequence[int],
                       episodes: int | None = None,
                       path_weights: np.ndarray | Sequence[float] | None = None,
                       out_dir: str | Path | None = None) -> FrameworkComparison:
    """Train and evaluate all three variants on matched seeds.

    Training uses one shared seed (identical environment streams); evaluation
    shares ``eval_seeds`` across variants so deltas are paired.  Phase-plane
    and learning-curve CSVs land in ``out_dir`` when given.
    """
    weights = np.asarray(path_weights, dtype=float) \
        if path_weights is not None else fit_planner_weights(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    reports: dict[str, EvalReport] = {}
    curves: dict[str, list[dict]] = {}
    for tag, variant in VARIANTS.items():
        training = run_training(cfg, variant, weights, train_seed,
                                episodes=episodes)
        report = evaluate(training.agent, cfg, variant, weights, eval_seeds,
                          out_dir=out, keep_logs=True)
        reports[tag] = report
        curves[tag] = training.rows
        if out is not None:
            save_learning_curve(training.rows, out / f"curve_{tag}.csv")
            save_phase_plane(report.logs, out / f"phase_plane_{tag}.csv")
    base = reports["sequential"]
    deltas = {
        tag: {
            "velocity_pct": _pct_delta(r.mean_speed, base.mean_speed),
            "reward_pct": _pct_delta(r.mean_reward, base.mean_reward),
            "collision_delta": r.collision_rate - base.collision_rate,
        }
        for tag, r in reports.items() if tag != "sequential"
    }
    return FrameworkComparison(reports=reports, curves=curves, deltas=deltas,
                               reference=dict(REFERENCE_FRAMEWORK_GAINS))


@dataclass
class StrategyRun:
    label: str
    head_count: int
    double_q: bool
    rows: list[dict]
    final_collision_rate: float
    final_mean_reward: float


@dataclass
class StrategyComparison:
    runs: list[StrategyRun]
    reference: dict[str, float]

    def summary_lines(self) -> list[str]:
        lines = [
            f"{run.label}: final-100 collision rate "
            f"{run.final_collision_rate:.3f}, final-100 mean reward "
            f"{run.final_mean_reward:.1f}"
            for run in self.runs]
        lines.append(
            "reference collision-rate reductions (non-binding): "
            f"{REFERENCE_COLLISION_DROPS['vs_dqn_pct']}% vs single-head, "
            f"{REFERENCE_COLLISION_DROPS['vs_double_pct']}% vs double-Q")
        return lines


def compare_drl(cfg: ExperimentConfig, train_seed: int,
                episodes: int | None = None,
                head_sweep: Sequence[int] = (2, 4, 8),
                path_weights: np.ndarray | Sequence[float] | None = None,
                out_dir: str | Path | None = None) -> StrategyComparison:
    """Head-count and target-rule comparison on the integrated variant.

    Trains a single-head learner, a single-head double-Q learner, the default
    multi-head learner, and a sweep of other head counts, all on the same
    environment stream.
    """
    import dataclasses as _dc

    weights = np.asarray(path_weights, dtype=float) \
        if path_weights is not None else fit_planner_weights(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    setups = [("dqn", 1, False), ("double-dqn", 1, True),
              (f"bootstrapped-k{cfg.agent.head_count}",
               cfg.agent.head_count, False)]
    setups += [(f"bootstrapped-k{k}", k, False)
               for k in head_sweep if k != cfg.agent.head_count]
    runs = []
    for label, heads, double in setups:
        run_cfg = _dc.replace(cfg, agent=_dc.replace(
            cfg.agent, head_count=heads, double_q=double))
        training = run_training(run_cfg, INTEGRATED, weights, train_seed,
                                episodes=episodes)
        window = training.rows[-100:]
        runs.append(StrategyRun(
            label=label, head_count=heads, double_q=double,
            rows=training.rows,
            final_collision_rate=training.final_collision_rate(),
            final_mean_reward=float(np.mean([r["reward"] for r in window]))
            if window else math.nan))
        if out is not None:
            save_learning_curve(training.rows, out / f"curve_{label}.csv")
    return StrategyComparison(runs=runs,
                              reference=dict(REFERENCE_COLLISION_DROPS))
