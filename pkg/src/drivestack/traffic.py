"""Multi-lane highway environment with IDM/MOBIL surrounding traffic.

The ego vehicle follows the bicycle-model plant; surrounding human-driven
vehicles (HDVs) follow the Intelligent Driver Model for car following and a
MOBIL rule for lane changes, executed as a smooth 3 s lateral slide during
which the vehicle occupies both lanes for gap logic.

Rewards, collision detection, and the fixed-slot observation encoding live
here as well.  All per-episode randomness (placements, desired speeds, MOBIL
check phases) is drawn at reset time from a seeded generator, so the traffic
configuration stream is independent of the ego policy.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .config import (IdmParams, MobilParams, RewardConfig, ScenarioConfig,
                     VehicleParams)
from .dynamics import ControlInput, VehicleState, step_dynamics

_FREE_GAP = 1e9  # effective "no leader" gap


class PlacementError(RuntimeError):
    """Could not place the requested traffic density with the required gaps."""


def idm_acceleration(gap: float, v: float, v_lead: float, params: IdmParams) -> float:
    """IDM car-following acceleration (m/s^2); requires a positive gap."""
    if gap <= 0.0:
        raise ValueError("idm_acceleration requires gap > 0")
    desired = params.min_gap + max(
        0.0,
        v * params.time_headway
        + v * (v - v_lead) / (2.0 * math.sqrt(params.max_accel * params.comfort_decel)),
    )
    return params.max_accel * (
        1.0 - (v / params.desired_speed) ** params.exponent - (desired / gap) ** 2
    )


@dataclass(frozen=True)
class Neighbor:
    """Bumper-to-bumper gap to a neighboring vehicle and its speed."""

    gap: float
    speed: float


def _accel(gap: float | None, v: float, v_lead: float | None, params: IdmParams) -> float:
    if gap is None:
        return idm_acceleration(_FREE_GAP, v, v, params)
    return idm_acceleration(gap, v, v_lead if v_lead is not None else v, params)


def mobil_lane_change(v: float, idm: IdmParams, mobil: MobilParams,
                      body_length: float,
                      cur_leader: Neighbor | None, cur_follower: Neighbor | None,
                      tgt_leader: Neighbor | None, tgt_follower: Neighbor | None,
                      tgt_follower_idm: IdmParams | None = None,
                      cur_follower_idm: IdmParams | None = None) -> bool:
    """MOBIL criterion: change lanes iff safe and the weighted gain clears the threshold.

    Gaps in the ``Neighbor`` records are measured from this vehicle's bumpers.
    Followers' IDM parameter sets default to this vehicle's own.
    """
    tf_idm = tgt_follower_idm or idm
    cf_idm = cur_follower_idm or idm

    # Safety veto: never change into overlap, never impose braking beyond b_safe.
    if tgt_leader is not None and tgt_leader.gap <= 0.0:
        return False
    if tgt_follower is not None and tgt_follower.gap <= 0.0:
        return False
    a_self_new = _accel(tgt_leader.gap if tgt_leader else None, v,
                        tgt_leader.speed if tgt_leader else None, idm)
    if a_self_new < -mobil.safe_braking:
        return False
    if tgt_follower is not None:
        a_tf_new = _accel(tgt_follower.gap, tgt_follower.speed, v, tf_idm)
        if a_tf_new < -mobil.safe_braking:
            return False
    else:
        a_tf_new = 0.0

    a_self_old = _accel(cur_leader.gap if cur_leader else None, v,
                        cur_leader.speed if cur_leader else None, idm)
    if tgt_follower is not None:
        # Before the change, the target follower trails the target leader.
        if tgt_leader is not None:
            gap_old = tgt_follower.gap + body_length + tgt_leader.gap
            a_tf_old = _accel(gap_old, tgt_follower.speed, tgt_leader.speed, tf_idm)
        else:
            a_tf_old = _accel(None, tgt_follower.speed, None, tf_idm)
        tf_gain = a_tf_new - a_tf_old
    else:
        tf_gain = 0.0

    if cur_follower is not None:
        a_cf_old = _accel(cur_follower.gap, cur_follower.speed, v, cf_idm)
        if cur_leader is not None:
            gap_new = cur_follower.gap + body_length + cur_leader.gap
            a_cf_new = _accel(gap_new, cur_follower.speed, cur_leader.speed, cf_idm)
        else:
            a_cf_new = _accel(None, cur_follower.speed, None, cf_idm)
        cf_gain = a_cf_new - a_cf_old
    else:
        cf_gain = 0.0

    incentive = (a_self_new - a_self_old) + mobil.politeness * (tf_gain + cf_gain)
    return incentive > mobil.accel_threshold


def quintic_blend(u: float) -> float:
    """Smooth 0->1 blend with zero first/second derivatives at both ends."""
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


@dataclass
class Hdv:
    """Surrounding vehicle state plus its car-following/lane-change bookkeeping."""

    x: float
    y: float
    speed: float
    lane: int                       # target lane while a change is executing
    idm: IdmParams
    change_from: int | None = None
    change_start_y: float = 0.0
    change_elapsed: float = 0.0
    next_check: float = 0.0
    cooldown_until: float = 0.0

    @property
    def changing(self) -> bool:
        return self.change_from is not None


@dataclass(frozen=True)
class RewardBreakdown:
    r_speed: float
    r_collision: float
    r_lane_change: float
    total: float


def rectangles_overlap(cx1: float, cy1: float, yaw1: float, length1: float, width1: float,
                       cx2: float, cy2: float, yaw2: float, length2: float, width2: float) -> bool:
    """Oriented-rectangle overlap via the separating-axis test."""
    half1 = (length1 / 2.0, width1 / 2.0)
    half2 = (length2 / 2.0, width2 / 2.0)
    axes1 = ((math.cos(yaw1), math.sin(yaw1)), (-math.sin(yaw1), math.cos(yaw1)))
    axes2 = ((math.cos(yaw2), math.sin(yaw2)), (-math.sin(yaw2), math.cos(yaw2)))
    dx, dy = cx2 - cx1, cy2 - cy1
    for ax, ay in (*axes1, *axes2):
        r1 = half1[0] * abs(ax * axes1[0][0] + ay * axes1[0][1]) \
            + half1[1] * abs(ax * axes1[1][0] + ay * axes1[1][1])
        r2 = half2[0] * abs(ax * axes2[0][0] + ay * axes2[0][1]) \
            + half2[1] * abs(ax * axes2[1][0] + ay * axes2[1][1])
        if abs(ax * dx + ay * dy) >= r1 + r2:
            return False
    return True


class HighwayEnv:
    """Episode environment; one instance is single-threaded."""

    def __init__(self, scenario: ScenarioConfig, idm: IdmParams, mobil: MobilParams,
                 reward: RewardConfig, vehicle: VehicleParams) -> None:
        self.scenario = scenario
        self.base_idm = idm
        self.mobil = mobil
        self.reward_config = reward
        self.vehicle = vehicle
        self.time = 0.0
        self.collision = False
        self.ego = VehicleState(vx=scenario.ego_speed, vy=0.0, yaw=0.0,
                                yaw_rate=0.0, x=scenario.ego_start_x,
                                y=scenario.lane_center(scenario.ego_lane))
        self.ego_start_x = self.ego.x
        self.hdvs: list[Hdv] = []

    # -- setup ---------------------------------------------------------------

    def reset(self, seed: int) -> "HighwayEnv":
        """Seeded reset: ego mid-lane, HDVs placed with enforced spawn gaps."""
        rng = np.random.default_rng(seed)
        sc = self.scenario
        self.time = 0.0
        self.collision = False
        self.ego = VehicleState(vx=sc.ego_speed, vy=0.0, yaw=0.0, yaw_rate=0.0,
                                x=sc.ego_start_x, y=sc.lane_center(sc.ego_lane))
        self.ego_start_x = self.ego.x
        self.hdvs = []
        spawn_gap = sc.safe_spacing + sc.min_spawn_gap_extra
        speed_lo = sc.v_min + sc.spawn_speed_margin
        speed_hi = sc.v_max - sc.spawn_speed_margin
        for _ in range(sc.hdv_count):
            placed = False
            for _ in range(400):
                lane = int(rng.integers(0, sc.lane_count))
                x = float(rng.uniform(0.0, sc.road_length))
                same_lane_xs = [h.x for h in self.hdvs if h.lane == lane]
                if lane == sc.ego_lane:
                    same_lane_xs.append(self.ego.x)
                if all(abs(x - ox) >= spawn_gap for ox in same_lane_xs):
                    v0 = float(rng.uniform(speed_lo, speed_hi))
                    speed = float(rng.uniform(speed_lo, speed_hi))
                    self.hdvs.append(Hdv(
                        x=x, y=sc.lane_center(lane), speed=speed, lane=lane,
                        idm=replace(self.base_idm, desired_speed=v0),
                        next_check=float(rng.uniform(0.0, self.mobil.check_period)),
                    ))
                    placed = True
                    break
            if not placed:
                raise PlacementError(
                    f"cannot place {sc.hdv_count} vehicles with {spawn_gap:.1f} m spawn gaps")
        return self

    def reset_manual(self, ego: VehicleState, hdvs: Sequence[Hdv]) -> "HighwayEnv":
        """Scripted reset for targeted scenarios and tests."""
        self.time = 0.0
        self.collision = False
        self.ego = ego
        self.ego_start_x = ego.x
        self.hdvs = [dataclasses.replace(h) for h in hdvs]
        return self

    # -- geometry helpers ----------------------------------------------------

    def lanes_of(self, y: float, committed: Iterable[int] = ()) -> set[int]:
        """Lane indices overlapped by a body of standard width centered at y."""
        sc = self.scenario
        half = self.vehicle.body_width / 2.0
        lanes = set(committed)
        for edge in (y - half, y + half):
            lane = int(math.floor(edge / sc.lane_width))
            if 0 <= lane < sc.lane_count:
                lanes.add(lane)
        return lanes

    def _hdv_lanes(self, h: Hdv) -> set[int]:
        committed = [h.lane] + ([h.change_from] if h.change_from is not None else [])
        return self.lanes_of(h.y, committed)

    def ego_lane(self) -> int:
        lane = int(math.floor(self.ego.y / self.scenario.lane_width))
        return min(max(lane, 0), self.scenario.lane_count - 1)

    def nearest_leader(self, lane: int, x: float | None = None) -> Hdv | None:
        x0 = self.ego.x if x is None else x
        ahead = [h for h in self.hdvs if lane in self._hdv_lanes(h) and h.x > x0]
        return min(ahead, key=lambda h: h.x) if ahead else None

    def nearest_follower(self, lane: int, x: float | None = None) -> Hdv | None:
        x0 = self.ego.x if x is None else x
        behind = [h for h in self.hdvs if lane in self._hdv_lanes(h) and h.x < x0]
        return max(behind, key=lambda h: h.x) if behind else None

    def leader_gap(self, lane: int) -> tuple[float, float]:
        """Bumper gap and speed of the nearest leader on ``lane`` (inf if none)."""
        lead = self.nearest_leader(lane)
        if lead is None:
            return math.inf, self.ego.vx
        return lead.x - self.ego.x - self.vehicle.body_length, lead.speed

    def hdv_kinematics(self) -> np.ndarray:
        """Snapshot (n, 3) of HDV [x, y, speed] for constant-velocity extrapolation."""
        return np.array([[h.x, h.y, h.speed] for h in self.hdvs]).reshape(-1, 3)

    # -- stepping ------------------------------------------------------------

    def step(self, control: ControlInput, dt: float) -> "HighwayEnv":
        """Advance ego and all HDVs by one plant step; refresh the collision flag."""
        accels = [self._hdv_accel(h) for h in self.hdvs]
        self.ego = step_dynamics(self.ego, control, dt, self.vehicle)
        for h, a in zip(self.hdvs, accels):
            h.speed = max(0.0, h.speed + a * dt)
            h.x += h.speed * dt
            if h.changing:
                h.change_elapsed += dt
                u = min(1.0, h.change_elapsed / self.mobil.change_duration)
                target = self.scenario.lane_center(h.lane)
                h.y = h.change_start_y + (target - h.change_start_y) * quintic_blend(u)
                if u >= 1.0:
                    h.y = target
                    h.change_from = None
                    h.cooldown_until = self.time + self.mobil.cooldown
        self.time += dt
        self._run_mobil_checks()
        self.collision = self.collision or self._ego_collision()
        return self

    def _vehicle_ahead(self, h: Hdv, lane: int) -> tuple[float, float] | None:
        """Bumper gap and speed of the closest vehicle ahead of HDV ``h`` on ``lane``."""
        best_x = math.inf
        best_speed = 0.0
        for other in self.hdvs:
            if other is h or lane not in self._hdv_lanes(other):
                continue
            if other.x > h.x and other.x < best_x:
                best_x, best_speed = other.x, other.speed
        if lane in self.lanes_of(self.ego.y) and h.x < self.ego.x < best_x:
            best_x, best_speed = self.ego.x, self.ego.vx
        if math.isinf(best_x):
            return None
        return best_x - h.x - self.vehicle.body_length, best_speed

    def _hdv_accel(self, h: Hdv) -> float:
        lanes = {h.lane} | ({h.change_from} if h.change_from is not None else set())
        accel = None
        for lane in lanes:
            ahead = self._vehicle_ahead(h, lane)
            if ahead is None:
                a = idm_acceleration(_FREE_GAP, h.speed, h.speed, h.idm)
            elif ahead[0] <= 0.0:
                a = -self.mobil.safe_braking  # collision imminent
            else:
                a = idm_acceleration(ahead[0], h.speed, ahead[1], h.idm)
            accel = a if accel is None else min(accel, a)
        return accel if accel is not None else 0.0

    def _neighbor_from(self, h: Hdv, lane: int, ahead: bool) -> Neighbor | None:
        """Nearest neighbor record (incl. ego) on ``lane`` relative to HDV ``h``."""
        body = self.vehicle.body_length
        cands: list[tuple[float, float]] = []
        for other in self.hdvs:
            if other is not h and lane in self._hdv_lanes(other):
                cands.append((other.x, other.speed))
        if lane in self.lanes_of(self.ego.y):
            cands.append((self.ego.x, self.ego.vx))
        if ahead:
            sel = [(x, v) for x, v in cands if x > h.x]
            if not sel:
                return None
            x, v = min(sel, key=lambda t: t[0])
            return Neighbor(gap=x - h.x - body, speed=v)
        sel = [(x, v) for x, v in cands if x < h.x]
        if not sel:
            return None
        x, v = max(sel, key=lambda t: t[0])
        return Neighbor(gap=h.x - x - body, speed=v)

    def _run_mobil_checks(self) -> None:
        for h in self.hdvs:
            if h.changing or self.time < h.next_check:
                continue
            h.next_check = self.time + self.mobil.check_period
            if self.time < h.cooldown_until:
                continue
            for target in (h.lane - 1, h.lane + 1):
                if not (0 <= target < self.scenario.lane_count):
                    continue
                if mobil_lane_change(
                        h.speed, h.idm, self.mobil, self.vehicle.body_length,
                        cur_leader=self._neighbor_from(h, h.lane, ahead=True),
                        cur_follower=self._neighbor_from(h, h.lane, ahead=False),
                        tgt_leader=self._neighbor_from(h, target, ahead=True),
                        tgt_follower=self._neighbor_from(h, target, ahead=False)):
                    h.change_from = h.lane
                    h.lane = target
                    h.change_start_y = h.y
                    h.change_elapsed = 0.0
                    break

    def _ego_collision(self) -> bool:
        body_l, body_w = self.vehicle.body_length, self.vehicle.body_width
        reach = body_l + 1.0
        for h in self.hdvs:
            if abs(h.x - self.ego.x) > reach or abs(h.y - self.ego.y) > body_l:
                continue
            if rectangles_overlap(self.ego.x, self.ego.y, self.ego.yaw, body_l, body_w,
                                  h.x, h.y, 0.0, body_l, body_w):
                return True
        return False

    # -- observation and reward ------------------------------------------------

    def observe(self) -> np.ndarray:
        """Fixed-slot observation in SI units.

        Layout: ego [Y, X, V] then, per lane in index order, the relative
        triple (ego minus vehicle) of the nearest leader and nearest follower.
        Absent slots get the far-away sentinel (dX = -/+ sentinel_distance).
        """
        sc = self.scenario
        ego_t = [self.ego.y, self.ego.x, self.ego.vx]
        out = list(ego_t)
        for lane in range(sc.lane_count):
            for ahead in (True, False):
                h = (self.nearest_leader(lane) if ahead else self.nearest_follower(lane))
                if h is None:
                    dx = -sc.sentinel_distance if ahead else sc.sentinel_distance
                    out.extend([0.0, dx, 0.0])
                else:
                    out.extend([self.ego.y - h.y, self.ego.x - h.x,
                                self.ego.vx - h.speed])
        return np.array(out)

    def encode_observation(self, obs: np.ndarray | None = None) -> np.ndarray:
        """Scale the observation for the value network (documented in config)."""
        sc = self.scenario
        if obs is None:
            obs = self.observe()
        enc = np.empty_like(obs)
        width = sc.road_width
        band = sc.v_max - sc.v_min
        enc[0] = obs[0] / width
        enc[1] = (obs[1] - self.ego_start_x) / (sc.v_max * sc.horizon)
        enc[2] = (obs[2] - sc.v_min) / band
        for k in range(3, obs.size, 3):
            enc[k] = obs[k] / width
            enc[k + 1] = np.clip(obs[k + 1], -sc.sentinel_distance,
                                 sc.sentinel_distance) / sc.sentinel_distance
            enc[k + 2] = obs[k + 2] / band
        return enc

    def nearest_lane_center(self, y: float | None = None) -> float:
        sc = self.scenario
        yy = self.ego.y if y is None else y
        lane = min(max(int(math.floor(yy / sc.lane_width)), 0), sc.lane_count - 1)
        return sc.lane_center(lane)

    def compute_reward(self) -> RewardBreakdown:
        rc = self.reward_config
        sc = self.scenario
        r_speed = (self.ego.vx - sc.v_min) / (sc.v_max - sc.v_min)
        r_speed = min(max(r_speed, 0.0), 1.0)
        r_col = 0.0
        for h in self.hdvs:
            r_col += math.exp(rc.sigma_lat * (self.ego.y - h.y) ** 2
                              + rc.sigma_lon * (self.ego.x - h.x) ** 2)
        off = self.ego.y - self.nearest_lane_center()
        lane_term = rc.p_lane * math.exp(off ** 2 / (2.0 * rc.sigma_lane ** 2))
        lane_term = min(max(lane_term, 0.0), rc.lane_term_clamp)
        total = rc.w_speed * r_speed + rc.w_collision * r_col + rc.w_lane_change * lane_term
        return RewardBreakdown(r_speed=r_speed, r_collision=r_col,
                               r_lane_change=lane_term, total=total)
