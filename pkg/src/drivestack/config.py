"""Configuration dataclasses for the whole stack, plus JSON round-tripping.

Every tunable lives here so experiments are reproducible from a single file.
Defaults describe a three-lane highway cruising scenario with six surrounding
human-driven vehicles (HDVs) and a sedan-class ego vehicle.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class VehicleParams:
    """Bicycle-model vehicle parameters.

    ``mu`` (road adhesion) and ``gravity`` feed the handling-stability bounds;
    ``body_length``/``body_width`` define the collision footprint.
    """

    mass: float = 1274.0          # kg
    yaw_inertia: float = 606.1    # kg m^2
    lf: float = 1.016             # CG to front axle, m
    lr: float = 1.562             # CG to rear axle, m
    kf: float = 85000.0           # front cornering stiffness, N/rad
    kr: float = 112000.0          # rear cornering stiffness, N/rad
    mu: float = 0.85              # road adhesion, dimensionless
    gravity: float = 9.81         # m/s^2
    body_length: float = 4.5      # m
    body_width: float = 1.8       # m

    def __post_init__(self) -> None:
        for name in ("mass", "yaw_inertia", "lf", "lr", "kf", "kr", "mu",
                     "gravity", "body_length", "body_width"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"VehicleParams.{name} must be strictly positive")
        if not (0.0 < self.mu <= 1.2):
            raise ValueError("VehicleParams.mu must lie in (0, 1.2]")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model car-following parameters."""

    desired_speed: float = 30.0   # v0, m/s (per-vehicle; randomized at spawn)
    time_headway: float = 1.5     # T, s
    max_accel: float = 1.5        # a, m/s^2
    comfort_decel: float = 2.0    # b, m/s^2
    min_gap: float = 2.0          # s0, m
    exponent: float = 4.0         # delta

    def __post_init__(self) -> None:
        if min(self.desired_speed, self.time_headway, self.max_accel,
               self.comfort_decel, self.min_gap) <= 0.0:
            raise ValueError("IdmParams fields must be strictly positive")


@dataclass(frozen=True)
class MobilParams:
    """MOBIL lane-change parameters plus execution kinematics for HDVs."""

    politeness: float = 0.3           # p
    accel_threshold: float = 0.1      # delta a_th, m/s^2
    safe_braking: float = 4.0         # b_safe, m/s^2
    check_period: float = 0.5         # s between lane-change evaluations
    cooldown: float = 5.0             # s after a change before the next check
    change_duration: float = 3.0      # s to slide to the target lane


@dataclass(frozen=True)
class RewardConfig:
    """Shaped reward: speed incentive, proximity penalty field, lane-change penalty.

    total = w_speed * r_speed + w_collision * r_collision + w_lane_change * r_lane_change
    """

    w_speed: float = 20.0
    w_collision: float = -5.0
    w_lane_change: float = -0.1
    sigma_lat: float = -3.0       # scales (Y_ev - Y_m)^2 in the proximity field
    sigma_lon: float = -0.5       # scales (X_ev - X_m)^2 in the proximity field
    sigma_lane: float = -0.1      # Gaussian width (m) of the off-centerline term
    p_lane: float = 2.5           # off-centerline term scale
    lane_term_clamp: float = 10.0 # upper clamp of the off-centerline term


@dataclass(frozen=True)
class ScenarioConfig:
    """Highway scenario: geometry, traffic density, speeds, timing, seeds.

    ``sentinel_distance`` fills absent observation slots (leader slot gets
    dX=-sentinel, follower slot +sentinel, dY=dV=0).  Network encoding of the
    observation (see ``HighwayEnv.encode_observation``): ego lateral position
    is scaled by the road width, ego longitudinal progress by
    Vmax*horizon, speeds by the [Vmin, Vmax] band, relative longitudinal gaps
    clipped at the sentinel and scaled by it.
    """

    lane_count: int = 3
    lane_width: float = 3.75      # m
    road_length: float = 400.0    # m; spawn window for HDVs (road itself is open-ended)
    hdv_count: int = 6
    v_min: float = 16.67          # m/s (60 km/h)
    v_max: float = 33.33          # m/s (120 km/h)
    spawn_speed_margin: float = 2.0   # HDV v0 ~ U(v_min+margin, v_max-margin)
    ego_lane: int = 1
    ego_speed: float = 25.0       # m/s at reset
    ego_start_x: float = 30.0     # m
    horizon: float = 40.0         # episode length, s
    decision_interval: float = 0.1  # s
    control_period: float = 0.05    # s
    plant_dt: float = 0.01          # s
    safe_spacing: float = 15.0      # s_saf, m
    sentinel_distance: float = 200.0  # m
    min_spawn_gap_extra: float = 5.0  # spawn gap = safe_spacing + this, m

    def __post_init__(self) -> None:
        if self.lane_count < 2:
            raise ValueError("lane_count must be >= 2")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be < v_max")
        if not (0 <= self.ego_lane < self.lane_count):
            raise ValueError("ego_lane out of range")

    @property
    def road_width(self) -> float:
        return self.lane_count * self.lane_width

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    @property
    def observation_dim(self) -> int:
        return 3 * (2 * self.lane_count + 1)


@dataclass(frozen=True)
class PlannerConfig:
    """Lane-change path generation: duration bounds, sampling, gap condition."""

    tc_floor: float = 0.5         # s, lower clip of the duration band
    tc_cap: float = 6.0           # s, upper clip of the duration band
    tc_grid: float = 0.1          # s, spacing of candidate durations
    sample_interval: float = 0.1  # s, nominal path sample spacing
    max_decel: float = 4.0        # m/s^2, deceleration magnitude in the gap condition


@dataclass(frozen=True)
class IrlConfig:
    """Preference-weight fitting by likelihood gradient ascent.

    The synthetic demonstrator is comfort-weighted: its optimum duration sits
    a few grid ticks above the handling floor.  Demonstration scenes are drawn
    where traffic binds the duration band (cruise speeds, a leader near the
    safe-spacing limit): with a free band every duration scores almost alike
    through the small stability/comfort features, and the fixed-step ascent
    cannot separate them within the configured epoch budget.
    """

    learning_rate: float = 0.08
    episodes: int = 150
    init_weights: tuple[float, float, float, float] = (-1.0, -1.0, -1.0, -1.0)
    divergence_limit: float = 1e6
    train_scenarios: int = 50
    eval_scenarios: int = 10
    expert_weights: tuple[float, float, float, float] = (-1.0, -6.0, -1.0, -1.0)
    demo_speed_lo: float = 24.0     # demonstration ego speed band, m/s
    demo_speed_hi: float = 32.0
    demo_stretch_lo: float = 1.05   # duration-band upper bound as a multiple
    demo_stretch_hi: float = 1.35   # of the handling floor
    demo_speed_jitter: float = 2.0  # leader speed within +/- this of ego, m/s
    demo_extra_lo: int = 2          # background vehicles per scene
    demo_extra_hi: int = 4


@dataclass(frozen=True)
class ControlLimits:
    """Actuation and state bounds shared by the predictive controllers."""

    ax_min: float = -4.0          # m/s^2
    ax_max: float = 4.0           # m/s^2
    delta_min: float = -0.1       # rad
    delta_max: float = 0.1        # rad
    v_min: float = 16.67          # m/s
    v_max: float = 33.33          # m/s
    safe_spacing: float = 15.0    # m
    horizon: int = 20             # prediction steps
    period: float = 0.05          # s

    def __post_init__(self) -> None:
        if self.ax_min >= self.ax_max or self.delta_min >= self.delta_max \
                or self.v_min >= self.v_max:
            raise ValueError("ControlLimits: each min must be < its max")
        if self.horizon < 2:
            raise ValueError("ControlLimits.horizon must be >= 2")


@dataclass(frozen=True)
class MpcWeights:
    """Cost weights: (p1, r1) for speed keeping, (p21, p22, r2) for lane changing."""

    p1: float = 1.0
    r1: float = 4.0
    p21: float = 1.0
    p22: float = 10.0
    r2: float = 10.0

    def __post_init__(self) -> None:
        if min(self.p1, self.r1, self.p21, self.p22, self.r2) <= 0.0:
            raise ValueError("MpcWeights must be strictly positive")


# Preset tables selected by the decision agent. Keeping presets tie r1 = 4*p1,
# changing presets tie p22 = 10*p21; three levels each.
KEEPING_PRESETS: tuple[tuple[float, float], ...] = ((0.5, 2.0), (1.0, 4.0), (2.0, 8.0))
CHANGING_PRESETS: tuple[tuple[float, float, float], ...] = (
    (0.5, 5.0, 20.0),
    (1.0, 10.0, 10.0),
    (2.0, 20.0, 5.0),
)
MID_KEEPING_PRESET = 1
MID_CHANGING_PRESET = 1


def keeping_weights(level: int) -> MpcWeights:
    p1, r1 = KEEPING_PRESETS[level]
    return MpcWeights(p1=p1, r1=r1)


def changing_weights(level: int) -> MpcWeights:
    p21, p22, r2 = CHANGING_PRESETS[level]
    return MpcWeights(p21=p21, p22=p22, r2=r2)


@dataclass(frozen=True)
class PiGains:
    """Speed-hold PI gains used while a lane change is executing."""

    kp: float = 1.2
    ki: float = 0.6


@dataclass(frozen=True)
class AgentConfig:
    """Multi-head Q-learning agent configuration."""

    head_count: int = 6
    discount: float = 0.95
    learning_rate: float = 1e-4
    batch_size: int = 64
    buffer_capacity: int = 15000
    target_sync_period: int = 500   # gradient steps between target-network copies
    mask_prob: float = 0.5          # Bernoulli(p) per head per transition
    episodes: int = 2000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.3   # fraction of episodes over which epsilon anneals
    double_q: bool = False          # online-argmax / target-evaluate targets
    shared_layers: tuple[int, ...] = (128, 64)
    head_layers: tuple[int, ...] = (64,)

    def __post_init__(self) -> None:
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")
        if not (0.0 < self.mask_prob <= 1.0):
            raise ValueError("mask_prob must lie in (0, 1]")
        if self.head_count < 1:
            raise ValueError("head_count must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Bundle of every configuration block, loadable from one JSON file."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    irl: IrlConfig = field(default_factory=IrlConfig)
    limits: ControlLimits = field(default_factory=ControlLimits)
    pi: PiGains = field(default_factory=PiGains)
    agent: AgentConfig = field(default_factory=AgentConfig)


_SECTION_TYPES = {
    "vehicle": VehicleParams,
    "idm": IdmParams,
    "mobil": MobilParams,
    "reward": RewardConfig,
    "scenario": ScenarioConfig,
    "planner": PlannerConfig,
    "irl": IrlConfig,
    "limits": ControlLimits,
    "pi": PiGains,
    "agent": AgentConfig,
}


def _build_section(cls: type, data: dict[str, Any]) -> Any:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    unknown = set(data) - set(_SECTION_TYPES)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        name: _build_section(cls, data[name])
        for name, cls in _SECTION_TYPES.items()
        if name in data
    }
    return ExperimentConfig(**sections)


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
