"""Lane-change path generation and scoring.

A lane change is a quintic lateral slide of signed displacement F executed
over a duration tc while longitudinal speed is held.  The planner:

1. bounds tc below by a sideslip limit (peak lateral rate over speed must stay
   under atan(0.02 mu g)) and above by a gap condition (worst-case braking of
   the binding leader must leave the safe spacing intact until the change
   completes), clipped to a configured band;
2. lays a 0.1 s grid of candidate durations across the band;
3. scores each candidate with four accumulated features (sideslip, heading
   churn, duration, proximity to extrapolated traffic);
4. picks the candidate maximizing the preference-weighted score.

The preference weights come from the likelihood fitting in ``irl``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PlannerConfig, VehicleParams
from .dynamics import beta_bound

GRID_DECIMALS = 6  # snap grid durations to avoid float drift in comparisons


@dataclass(frozen=True)
class QuinticProfile:
    """Zero-slope, zero-curvature quintic ramp from 0 to ``displacement``."""

    displacement: float
    duration: float

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ValueError("duration must be strictly positive")

    def _u(self, t: float) -> float:
        if not 0.0 <= t <= self.duration + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        return min(t / self.duration, 1.0)

    def position(self, t: float) -> float:
        u = self._u(t)
        return self.displacement * u ** 3 * (10.0 + u * (-15.0 + 6.0 * u))

    def rate(self, t: float) -> float:
        u = self._u(t)
        return self.displacement * 30.0 * u ** 2 * (1.0 - u) ** 2 / self.duration

    def accel(self, t: float) -> float:
        u = self._u(t)
        return self.displacement * 60.0 * u * (1.0 - 3.0 * u + 2.0 * u ** 2) \
            / self.duration ** 2

    @property
    def peak_rate(self) -> float:
        """max |dY/dt| = 1.875 |F| / tc, attained at tc/2."""
        return 1.875 * abs(self.displacement) / self.duration


@dataclass(frozen=True)
class PathReference:
    """Lateral reference at one instant: position, rate, sideslip, heading."""

    y: float
    y_rate: float
    beta: float
    phi: float


@dataclass(frozen=True)
class CandidatePath:
    """A quintic lane-change candidate anchored in road coordinates."""

    y_origin: float
    displacement: float
    duration: float
    speed: float          # longitudinal speed held during the change
    x_origin: float = 0.0

    @property
    def profile(self) -> QuinticProfile:
        return QuinticProfile(self.displacement, self.duration)

    @property
    def eta(self) -> int:
        """Number of path samples (nominal 0.1 s spacing, endpoint included)."""
        return max(1, round(self.duration / 0.1))

    @property
    def sample_times(self) -> np.ndarray:
        delta = self.duration / self.eta
        return delta * np.arange(1, self.eta + 1)

    def reference(self, t: float) -> PathReference:
        prof = self.profile
        rate = prof.rate(t)
        return PathReference(
            y=self.y_origin + prof.position(t),
            y_rate=rate,
            beta=rate / self.speed,
            phi=math.atan(rate / self.speed),
        )

    @property
    def y_target(self) -> float:
        return self.y_origin + self.displacement


@dataclass(frozen=True)
class DurationBounds:
    """Feasible [lower, upper] band for tc, with which constraint binds."""

    lower: float
    upper: float
    feasible: bool
    lower_binding: str    # "sideslip" or "floor"
    upper_binding: str    # "gap" or "cap"


def lane_change_time_bounds(displacement: float, vx: float, leader_gap: float,
                            leader_speed: float, vehicle: VehicleParams,
                            planner: PlannerConfig, safe_spacing: float) -> DurationBounds:
    """Duration band for a lane change of ``displacement`` at speed ``vx``.

    ``leader_gap``/``leader_speed`` describe the binding leader: the smaller of
    the current-lane and target-lane bumper gaps (math.inf when both lanes are
    clear ahead).  The upper bound keeps the gap above ``safe_spacing`` until
    completion even if the leader is slower and the planner's worst-case
    deceleration reserve is spent.
    """
    beta_max = beta_bound(vehicle)
    raw_lower = 1.875 * abs(displacement) / (vx * beta_max)
    lower = max(raw_lower, planner.tc_floor)
    lower_binding = "sideslip" if raw_lower >= planner.tc_floor else "floor"

    if math.isinf(leader_gap):
        upper = planner.tc_cap
        upper_binding = "cap"
    else:
        margin = leader_gap - safe_spacing
        v_rel = max(0.0, vx - leader_speed)
        half_decel = planner.max_decel / 2.0
        if margin <= 0.0:
            return DurationBounds(lower, lower, False, lower_binding, "gap")
        raw_upper = (-v_rel + math.sqrt(v_rel ** 2 + 4.0 * half_decel * margin)) \
            / (2.0 * half_decel)
        upper = min(raw_upper, planner.tc_cap)
        upper_binding = "gap" if raw_upper <= planner.tc_cap else "cap"

    return DurationBounds(lower, upper, lower <= upper, lower_binding, upper_binding)


def candidate_durations(bounds: DurationBounds, grid: float) -> list[float]:
    """Grid of durations across the band; the upper endpoint always included."""
    if not bounds.feasible:
        return []
    first = math.ceil(round(bounds.lower / grid, GRID_DECIMALS)) * grid
    ticks = []
    t = first
    while t <= bounds.upper + 1e-9:
        ticks.append(round(t, GRID_DECIMALS))
        t += grid
    upper = round(bounds.upper, GRID_DECIMALS)
    if not ticks or ticks[-1] < upper:
        ticks.append(upper)
    return ticks


def generate_candidates(y_origin: float, displacement: float, vx: float,
                        x_origin: float, bounds: DurationBounds,
                        planner: PlannerConfig) -> list[CandidatePath]:
    return [CandidatePath(y_origin=y_origin, displacement=displacement,
                          duration=tc, speed=vx, x_origin=x_origin)
            for tc in candidate_durations(bounds, planner.tc_grid)]


def path_features(path: CandidatePath, traffic: np.ndarray,
                  sigma_lat: float = -3.0, sigma_lon: float = -0.5) -> np.ndarray:
    """Accumulated path features [sideslip, heading churn, duration, proximity].

    Each is a sample mean over the path's eta points (duration uses tc^2/eta).
    ``traffic`` is an (n, 3) snapshot of [x, y, speed] rows extrapolated at
    constant velocity; proximity sums the same exponential field the reward
    uses, over vehicles and samples.
    """
    prof = path.profile
    times = path.sample_times
    eta = path.eta

    rates = np.array([prof.rate(t) for t in times])
    betas = rates / path.speed
    h_stability = float(np.sum(betas ** 2)) / eta

    phis = np.arctan(betas)
    delta = path.duration / eta
    phi_prev = np.concatenate(([0.0], phis[:-1]))
    phi_rates = (phis - phi_prev) / delta
    h_comfort = float(np.sum(phi_rates ** 2)) / eta

    h_duration = path.duration ** 2 / eta

    h_proximity = 0.0
    if traffic.size:
        ys = path.y_origin + np.array([prof.position(t) for t in times])
        xs = path.x_origin + path.speed * times
        for m in range(traffic.shape[0]):
            mx = traffic[m, 0] + traffic[m, 2] * times
            my = traffic[m, 1]
            h_proximity += float(np.sum(
                np.exp(sigma_lat * (ys - my) ** 2 + sigma_lon * (xs - mx) ** 2)))
        h_proximity /= eta

    return np.array([h_stability, h_comfort, h_duration, h_proximity])


def score_paths(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Preference scores w . H for a stack of feature rows."""
    return np.asarray(features) @ np.asarray(weights)


def select_path(candidates: list[CandidatePath], features: np.ndarray,
                weights: np.ndarray) -> int:
    """Index of the best-scoring candidate; ties go to the shortest duration."""
    if not candidates:
        raise ValueError("select_path requires at least one candidate")
    scores = score_paths(features, weights)
    best = np.flatnonzero(scores >= scores.max() - 1e-12)
    return int(min(best, key=lambda i: candidates[i].duration))
