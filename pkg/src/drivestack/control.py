"""Quadratic programming and the two predictive controllers.

``solve_qp`` is a dual active-set method for strictly convex QPs with
inequality constraints (min 0.5 x'Hx + f'x subject to Gx <= ub): start at the
unconstrained optimum, repeatedly add the most violated constraint, and drop
active constraints whose multipliers would go negative.  It terminates with
KKT residuals at linear-algebra roundoff, or reports infeasibility.
``solve_qp_reference`` is an independent cross-check: accelerated projected
gradient on the dual, slow but simple, used by tests to confirm objectives.

On top of the solver sit two receding-horizon controllers:

- ``lane_keeping_mpc``: longitudinal acceleration tracking a target speed
  under actuation, speed-band, and (optionally) spacing constraints against
  a constant-velocity leader.
- ``lane_changing_mpc``: front steering tracking a quintic lateral path on
  the frozen-speed lateral model, with yaw-rate and tire slip-angle bounds.

``PiSpeedHold`` is the small longitudinal helper used while a lane change is
executing, when the planner wants speed held rather than optimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ControlLimits, MpcWeights, PiGains, VehicleParams
from .dynamics import compose_euler_steps, lateral_matrices
from .planning import CandidatePath

_DUAL_TOL = 1e-12


@dataclass(frozen=True)
class QpProblem:
    """min 0.5 x'Hx + f'x  s.t.  Gx <= ub, with H symmetric positive definite."""

    h: np.ndarray
    f: np.ndarray
    g: np.ndarray
    ub: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        object.__setattr__(self, "ub", np.asarray(self.ub, dtype=float))
        n = self.f.shape[0]
        if self.h.shape != (n, n):
            raise ValueError("H must be (n, n) matching f")
        if self.g.ndim != 2 or self.g.shape[1] != n:
            raise ValueError("G must be (m, n)")
        if self.ub.shape != (self.g.shape[0],):
            raise ValueError("ub must be (m,)")

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.h @ x + self.f @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    multipliers: np.ndarray
    status: str              # "optimal" or "infeasible"
    iterations: int
    active: tuple[int, ...]


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float      # ||Hx + f + G'lam||_inf
    primal: float            # max(0, max_i (Gx - ub)_i)
    dual: float              # max(0, max_i -lam_i)
    complementarity: float   # max_i |lam_i (Gx - ub)_i|

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual,
                   self.complementarity)


def kkt_residuals(problem: QpProblem, x: np.ndarray,
                  multipliers: np.ndarray) -> KktResiduals:
    slack = problem.g @ x - problem.ub if problem.m else np.zeros(0)
    grad = problem.h @ x + problem.f
    if problem.m:
        grad = grad + problem.g.T @ multipliers
    return KktResiduals(
        stationarity=float(np.max(np.abs(grad))),
        primal=float(max(0.0, slack.max())) if problem.m else 0.0,
        dual=float(max(0.0, -multipliers.min())) if problem.m else 0.0,
        complementarity=float(np.max(np.abs(multipliers * slack)))
        if problem.m else 0.0,
    )


def solve_qp(problem: QpProblem, *, feas_tol: float = 1e-9,
             max_iter: int | None = None) -> QpSolution:
    """Dual active-set solver; exact at termination, detects infeasibility."""
    h, f, g, ub = problem.h, problem.f, problem.g, problem.ub
    n, m = problem.n, problem.m
    if max_iter is None:
        max_iter = 50 * (n + m + 1)

    x = np.linalg.solve(h, -f)
    if m == 0:
        return QpSolution(x, np.zeros(0), "optimal", 0, ())

    active: list[int] = []
    u: list[float] = []
    iterations = 0

    while True:
        slack = g @ x - ub
        p = int(np.argmax(slack))
        if slack[p] <= feas_tol:
            lam = np.zeros(m)
            for idx, ui in zip(active, u):
                lam[idx] = ui
            return QpSolution(x, lam, "optimal", iterations, tuple(active))

        n_p = g[p]
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise RuntimeError("active-set iteration limit exceeded")
            hinv_np = np.linalg.solve(h, n_p)
            if active:
                nmat = g[active].T
                hinv_n = np.linalg.solve(h, nmat)
                smat = nmat.T @ hinv_n
                r = np.linalg.solve(smat, nmat.T @ hinv_np)
                z = hinv_np - hinv_n @ r
            else:
                r = np.zeros(0)
                z = hinv_np

            t1, k1 = math.inf, -1
            for idx, (ui, ri) in enumerate(zip(u, r)):
                if ri > _DUAL_TOL and ui / ri < t1:
                    t1, k1 = ui / ri, idx
            denom = float(n_p @ z)
            s_p = float(n_p @ x - ub[p])
            t2 = s_p / denom if denom > _DUAL_TOL else math.inf

            if math.isinf(t1) and math.isinf(t2):
                lam = np.zeros(m)
                for idx, ui in zip(active, u):
                    lam[idx] = ui
                return QpSolution(x, lam, "infeasible", iterations,
                                  tuple(active))

            t = min(t1, t2)
            x = x - t * z
            u = [ui - t * ri for ui, ri in zip(u, r)]
            u_p += t
            if t2 <= t1:
                active.append(p)
                u.append(u_p)
                break
            del active[k1]
            del u[k1]


def solve_qp_reference(problem: QpProblem, *,
                       iterations: int = 20000) -> QpSolution:
    """Accelerated projected gradient on the dual; assumes a feasible problem."""
    h, f, g, ub = problem.h, problem.f, problem.g, problem.ub
    if problem.m == 0:
        return QpSolution(np.linalg.solve(h, -f), np.zeros(0), "optimal", 0,
                          ())
    hinv_gt = np.linalg.solve(h, g.T)
    mmat = g @ hinv_gt
    c = g @ np.linalg.solve(h, f) + ub
    lipschitz = float(np.linalg.norm(mmat, 2))
    step = 1.0 / lipschitz if lipschitz > 0.0 else 1.0

    def dual_obj(lam: np.ndarray) -> float:
        return float(0.5 * lam @ mmat @ lam + c @ lam)

    lam = np.zeros(problem.m)
    look = lam
    tk = 1.0
    prev = dual_obj(lam)
    done = 0
    for it in range(iterations):
        nxt = np.maximum(look - step * (mmat @ look + c), 0.0)
        cur = dual_obj(nxt)
        if cur > prev:         # adaptive restart: momentum overshot
            tk = 1.0
            look = nxt
        else:
            tk1 = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            look = nxt + ((tk - 1.0) / tk1) * (nxt - lam)
            tk = tk1
        done = it + 1
        if it % 100 == 99:
            # fixed-point residual of the projected gradient map
            moved = nxt - np.maximum(nxt - step * (mmat @ nxt + c), 0.0)
            if float(np.max(np.abs(moved))) < 1e-14 * (1.0 + abs(cur)):
                lam = nxt
                break
        lam, prev = nxt, cur
    x = np.linalg.solve(h, -(f + g.T @ lam))
    return QpSolution(x, lam, "optimal", done, ())


# -- stability envelope ------------------------------------------------------------


@dataclass(frozen=True)
class StabilityBounds:
    """Friction-limited handling envelope at a frozen longitudinal speed."""

    yaw_rate_max: float
    alpha_f_max: float
    alpha_r_max: float


def stability_bounds(vx: float, params: VehicleParams) -> StabilityBounds:
    mu_g = params.mu * params.gravity
    wheelbase = params.lf + params.lr
    load = params.mass * mu_g
    return StabilityBounds(
        yaw_rate_max=mu_g / vx,
        alpha_f_max=math.atan(load * params.lr / (2.0 * params.kf * wheelbase)),
        alpha_r_max=math.atan(load * params.lf / (2.0 * params.kr * wheelbase)),
    )


# -- longitudinal controller -------------------------------------------------------


@dataclass(frozen=True)
class KeepingCommand:
    ax: float
    feasible: bool
    planned: np.ndarray


def _recovery_steps(limits: ControlLimits) -> int:
    """Post-horizon braking steps until any closing speed is exhausted."""
    return int(math.ceil(limits.v_max / (-limits.ax_min * limits.period)))


def _braking_clearance(speed: float, gap: float, leader_speed: float,
                       limits: ControlLimits) -> float:
    """Minimum gap reached under immediate maximum braking."""
    dt = limits.period
    v, worst = speed, gap
    for _ in range(limits.horizon + _recovery_steps(limits)):
        v += dt * limits.ax_min
        gap += dt * (leader_speed - v)
        worst = min(worst, gap)
        if v <= leader_speed:
            break
    return worst


@lru_cache(maxsize=32)
def _keeping_static(weights: MpcWeights, limits: ControlLimits,
                    spacing: bool) -> tuple[np.ndarray, ...]:
    """Speed-independent pieces of the keeping QP (treat results as read-only)."""
    n, dt = limits.horizon, limits.period
    lower = np.tril(np.ones((n, n)))
    h = 2.0 * (weights.p1 * dt * dt * lower.T @ lower
               + weights.r1 * np.eye(n))
    f_dir = 2.0 * weights.p1 * dt * (lower.T @ np.ones(n))
    rows = [np.eye(n), -np.eye(n), dt * lower, -dt * lower]
    if spacing:
        cum = lower @ lower
        rows.append(dt * dt * cum)
        # Recovery envelope: require that maximum braking applied after the
        # horizon keeps the gap above the floor, so the short horizon cannot
        # commit to an unrecoverable approach.  Row tau constrains terminal
        # position and terminal speed; the braking displacement itself is a
        # constant folded into the right-hand side.
        for tau in range(1, _recovery_steps(limits) + 1):
            rows.append(dt * dt * cum[-1] + tau * dt * dt * lower[-1])
    return h, f_dir, np.vstack(rows)


def lane_keeping_mpc(speed: float, target_speed: float, weights: MpcWeights,
                     limits: ControlLimits, leader_gap: float = math.inf,
                     leader_speed: float = 0.0) -> KeepingCommand:
    """Acceleration command tracking ``target_speed`` behind an optional leader.

    ``leader_gap`` is the current bumper-to-bumper distance; the controller
    keeps it at or above ``limits.safe_spacing`` assuming the leader holds its
    speed, and never commits to an approach that post-horizon maximum braking
    could not recover from.  When even immediate maximum braking dips below
    the floor, the command saturates at ``ax_min`` and ``feasible`` drops.

    A start below the speed band (the state emergency braking leaves behind)
    suspends the band's floor rows, so recovery back into the band is driven
    by the tracking objective instead of turning the problem infeasible.
    """
    n, dt = limits.horizon, limits.period
    fallback = np.full(n, limits.ax_min)
    has_leader = math.isfinite(leader_gap)

    if has_leader and _braking_clearance(speed, leader_gap, leader_speed,
                                         limits) \
            < limits.safe_spacing - 1e-9:
        return KeepingCommand(limits.ax_min, False, fallback)

    h, f_dir, g = _keeping_static(weights, limits, has_leader)
    f = (speed - target_speed) * f_dir
    band_floor = speed - limits.v_min if speed >= limits.v_min else 1e9
    rhs = [np.full(n, limits.ax_max), np.full(n, -limits.ax_min),
           np.full(n, limits.v_max - speed), np.full(n, band_floor)]
    if has_leader:
        steps = np.arange(1, n + 1)
        margin = leader_gap - limits.safe_spacing
        closing = leader_speed - speed
        rhs.append(margin + closing * dt * steps)
        taus = np.arange(1, _recovery_steps(limits) + 1)
        rhs.append(margin + closing * dt * (n + taus)
                   - dt * dt * limits.ax_min * taus * (taus + 1) / 2.0)

    solution = solve_qp(QpProblem(h, f, g, np.concatenate(rhs)))
    if solution.status != "optimal":
        return KeepingCommand(limits.ax_min, False, fallback)
    return KeepingCommand(float(solution.x[0]), True, solution.x)


# -- lateral controller ------------------------------------------------------------


@dataclass(frozen=True)
class ChangingCommand:
    delta_f: float
    feasible: bool
    horizon: int
    planned: np.ndarray


@dataclass(frozen=True)
class _ChangingStatic:
    """State-independent pieces of the changing QP (treat as read-only)."""

    h: np.ndarray
    g: np.ndarray
    a_head: np.ndarray       # heading response to inputs, (Np, Np)
    a_y: np.ndarray          # lateral-position response to inputs
    m_head: np.ndarray       # heading response to x0, (Np, 4)
    m_y: np.ndarray
    m_rate: np.ndarray
    m_front: np.ndarray
    m_rear: np.ndarray
    env: StabilityBounds


@lru_cache(maxsize=256)
def _changing_static(vx: float, weights: MpcWeights, limits: ControlLimits,
                     params: VehicleParams, horizon: int,
                     substeps: int) -> _ChangingStatic:
    disc = compose_euler_steps(lateral_matrices(vx, params),
                               limits.period / substeps, substeps)
    ad, bd = disc.a, disc.b

    powers = [np.eye(4)]
    for _ in range(horizon):
        powers.append(ad @ powers[-1])
    phi = np.vstack(powers[1:])                       # (4*Np, 4)
    gamma = np.zeros((4 * horizon, horizon))
    for t in range(1, horizon + 1):
        for j in range(t):
            gamma[4 * (t - 1):4 * t, j] = (powers[t - 1 - j] @ bd)[:, 0]

    heading_rows = 4 * np.arange(horizon) + 2
    y_rows = 4 * np.arange(horizon) + 3
    rate_rows = 4 * np.arange(horizon) + 1

    a_head = gamma[heading_rows]
    a_y = gamma[y_rows]
    h = 2.0 * (weights.p21 * a_head.T @ a_head + weights.p22 * a_y.T @ a_y
               + weights.r2 * np.eye(horizon))

    env = stability_bounds(vx, params)
    eye = np.eye(horizon)
    a_rate = gamma[rate_rows]

    # Front slip at step t uses the state reached at t and the input applied
    # there; the t = 0 term depends only on the first input.
    cf = np.array([1.0 / vx, params.lf / vx, 0.0, 0.0])
    cr = np.array([1.0 / vx, -params.lr / vx, 0.0, 0.0])
    front = np.zeros((horizon, horizon))
    m_front = np.zeros((horizon, 4))
    front[0, 0] = -1.0
    m_front[0] = cf
    for t in range(1, horizon):
        front[t] = cf @ gamma[4 * (t - 1):4 * t]
        front[t, t] -= 1.0
        m_front[t] = cf @ phi[4 * (t - 1):4 * t]
    rear = np.vstack([cr @ gamma[4 * (t - 1):4 * t]
                      for t in range(1, horizon + 1)])
    m_rear = np.vstack([cr @ phi[4 * (t - 1):4 * t]
                        for t in range(1, horizon + 1)])

    g = np.vstack([eye, -eye, a_rate, -a_rate, front, -front, rear, -rear])
    return _ChangingStatic(h=h, g=g, a_head=a_head, a_y=a_y,
                           m_head=phi[heading_rows], m_y=phi[y_rows],
                           m_rate=phi[rate_rows], m_front=m_front,
                           m_rear=m_rear, env=env)


def _changing_problem(lat_state: np.ndarray, vx: float, path: CandidatePath,
                      elapsed: float, weights: MpcWeights,
                      limits: ControlLimits, params: VehicleParams,
                      horizon: int, substeps: int) -> QpProblem:
    st = _changing_static(vx, weights, limits, params, horizon, substeps)

    times = elapsed + limits.period * np.arange(1, horizon + 1)
    y_ref = np.empty(horizon)
    heading_ref = np.empty(horizon)
    for i, t in enumerate(times):
        if t <= path.duration:
            ref = path.reference(t)
            y_ref[i], heading_ref[i] = ref.y, ref.phi
        else:
            y_ref[i], heading_ref[i] = path.y_target, 0.0

    c_head = st.m_head @ lat_state - heading_ref
    c_y = st.m_y @ lat_state - y_ref
    f = 2.0 * (weights.p21 * st.a_head.T @ c_head
               + weights.p22 * st.a_y.T @ c_y)

    c_rate = st.m_rate @ lat_state
    front_c = st.m_front @ lat_state
    rear_c = st.m_rear @ lat_state
    env = st.env
    rhs = np.concatenate([
        np.full(horizon, limits.delta_max), np.full(horizon,
                                                    -limits.delta_min),
        env.yaw_rate_max - c_rate, env.yaw_rate_max + c_rate,
        env.alpha_f_max - front_c, env.alpha_f_max + front_c,
        env.alpha_r_max - rear_c, env.alpha_r_max + rear_c,
    ])
    return QpProblem(st.h, f, st.g, rhs)


def lane_changing_mpc(lat_state: np.ndarray, vx: float, path: CandidatePath,
                      elapsed: float, weights: MpcWeights,
                      limits: ControlLimits, params: VehicleParams,
                      substeps: int = 5) -> ChangingCommand:
    """Steering command tracking a quintic path on the frozen-speed model.

    ``lat_state`` is [Vy, yaw rate, yaw, Y] in road coordinates; ``elapsed``
    is time since the maneuver began.  An infeasible envelope triggers one
    retry at half the horizon, then a zero-steer fallback with the flag down.
    """
    lat_state = np.asarray(lat_state, dtype=float)
    for horizon in (limits.horizon, max(2, limits.horizon // 2)):
        problem = _changing_problem(lat_state, vx, path, elapsed, weights,
                                    limits, params, horizon, substeps)
        solution = solve_qp(problem)
        if solution.status == "optimal":
            return ChangingCommand(float(solution.x[0]), True, horizon,
                                   solution.x)
    return ChangingCommand(0.0, False, 0, np.zeros(limits.horizon))


# -- speed hold --------------------------------------------------------------------


class PiSpeedHold:
    """PI acceleration command holding a target speed during lane changes."""

    def __init__(self, gains: PiGains, limits: ControlLimits) -> None:
        self.gains = gains
        self.limits = limits
        self.integral = 0.0

    def reset(self) -> None:
        self.integral = 0.0

    def update(self, target_speed: float, speed: float, dt: float) -> float:
        error = target_speed - speed
        self.integral += error * dt
        if self.gains.ki > 0.0:
            self.integral = min(max(self.integral,
                                    self.limits.ax_min / self.gains.ki),
                                self.limits.ax_max / self.gains.ki)
        command = self.gains.kp * error + self.gains.ki * self.integral
        return min(max(command, self.limits.ax_min), self.limits.ax_max)
