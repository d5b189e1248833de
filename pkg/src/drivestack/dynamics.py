"""Single-track (bicycle) vehicle dynamics.

State is zeta = [Vx, Vy, phi, gamma, X, Y]: longitudinal/lateral body-frame
velocities, yaw angle, yaw rate, and global position.  Input is
v = [ax, delta_f]: longitudinal acceleration and front-wheel steering angle.

The tire model is linear in slip angle with the restoring (negative-feedback)
sign convention, so the lateral subsystem is asymptotically stable across the
highway speed band; the quasi-LPV linearization below is the exact Jacobian at
straight-running states.  Small-angle global kinematics are used throughout:
Xdot = Vx - Vy*phi, Ydot = Vx*phi + Vy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import VehicleParams

# Below this longitudinal speed the slip-angle divisions degenerate.
DEGENERATE_SPEED = 0.1

STATE_DIM = 6
INPUT_DIM = 2

# Lateral subsystem state ordering used by the steering controller.
LATERAL_STATES = ("vy", "yaw_rate", "yaw", "y")


class DegenerateSpeedError(ValueError):
    """Longitudinal speed at or below the slip-angle validity floor."""


class InstabilityError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class VehicleState:
    vx: float
    vy: float
    yaw: float
    yaw_rate: float
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.yaw, self.yaw_rate, self.x, self.y])

    @staticmethod
    def from_array(arr: np.ndarray) -> "VehicleState":
        return VehicleState(*(float(v) for v in arr))


@dataclass(frozen=True)
class ControlInput:
    ax: float
    delta_f: float


@dataclass(frozen=True)
class LinearModel:
    """Linear(ized) model zeta_dot = A zeta + B v (or its discrete analogue)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError("A must be square")
        if self.b.ndim != 2 or self.b.shape[0] != self.a.shape[0]:
            raise ValueError("B row count must match A")
        if not (np.isfinite(self.a).all() and np.isfinite(self.b).all()):
            raise ValueError("model entries must be finite")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


def _require_speed(vx: float) -> None:
    if vx <= DEGENERATE_SPEED:
        raise DegenerateSpeedError(
            f"longitudinal speed {vx:.3f} m/s is at or below the "
            f"{DEGENERATE_SPEED} m/s validity floor"
        )


def tire_slip_angles(state: VehicleState, delta_f: float,
                     params: VehicleParams) -> tuple[float, float]:
    """Front/rear tire slip angles (rad)."""
    _require_speed(state.vx)
    alpha_f = (params.lf * state.yaw_rate + state.vy) / state.vx - delta_f
    alpha_r = (state.vy - params.lr * state.yaw_rate) / state.vx
    return alpha_f, alpha_r


def sideslip(state: VehicleState) -> float:
    """Vehicle sideslip angle beta = Vy/Vx (rad)."""
    _require_speed(state.vx)
    return state.vy / state.vx


def state_derivative(state: VehicleState, control: ControlInput,
                     params: VehicleParams) -> np.ndarray:
    """Nonlinear time derivative of the state vector."""
    alpha_f, alpha_r = tire_slip_angles(state, control.delta_f, params)
    # Restoring lateral tire forces (stable convention).
    fyf = -2.0 * params.kf * alpha_f
    fyr = -2.0 * params.kr * alpha_r
    dvx = control.ax + state.vy * state.yaw_rate
    dvy = (fyf + fyr) / params.mass - state.vx * state.yaw_rate
    dgamma = (params.lf * fyf - params.lr * fyr) / params.yaw_inertia
    dyaw = state.yaw_rate
    dx = state.vx - state.vy * state.yaw
    dy = state.vx * state.yaw + state.vy
    return np.array([dvx, dvy, dyaw, dgamma, dx, dy])


def continuous_matrices(state: VehicleState, params: VehicleParams) -> LinearModel:
    """Quasi-LPV linear model frozen at the operating (Vx, Vy).

    At straight-running states (Vy=gamma=phi=0) this is the exact Jacobian of
    ``state_derivative``.
    """
    _require_speed(state.vx)
    vx, vy = state.vx, state.vy
    m, jz = params.mass, params.yaw_inertia
    kf, kr, lf, lr = params.kf, params.kr, params.lf, params.lr

    a = np.zeros((STATE_DIM, STATE_DIM))
    a[0, 3] = vy
    a[1, 1] = -2.0 * (kf + kr) / (m * vx)
    a[1, 3] = -2.0 * (kf * lf - kr * lr) / (m * vx) - vx
    a[2, 3] = 1.0
    a[3, 1] = -2.0 * (kf * lf - kr * lr) / (jz * vx)
    a[3, 3] = -2.0 * (kf * lf ** 2 + kr * lr ** 2) / (jz * vx)
    a[4, 0] = 1.0
    a[4, 2] = -vy
    a[5, 1] = 1.0
    a[5, 2] = vx

    b = np.zeros((STATE_DIM, INPUT_DIM))
    b[0, 0] = 1.0
    b[1, 1] = 2.0 * kf / m
    b[3, 1] = 2.0 * kf * lf / jz
    return LinearModel(a=a, b=b)


def lateral_matrices(vx: float, params: VehicleParams) -> LinearModel:
    """Lateral subsystem [Vy, gamma, phi, Y] driven by delta_f, at frozen Vx."""
    _require_speed(vx)
    m, jz = params.mass, params.yaw_inertia
    kf, kr, lf, lr = params.kf, params.kr, params.lf, params.lr
    a = np.array([
        [-2.0 * (kf + kr) / (m * vx), -2.0 * (kf * lf - kr * lr) / (m * vx) - vx, 0.0, 0.0],
        [-2.0 * (kf * lf - kr * lr) / (jz * vx), -2.0 * (kf * lf ** 2 + kr * lr ** 2) / (jz * vx), 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, vx, 0.0],
    ])
    b = np.array([[2.0 * kf / m], [2.0 * kf * lf / jz], [0.0], [0.0]])
    return LinearModel(a=a, b=b)


def step_dynamics(state: VehicleState, control: ControlInput, dt: float,
                  params: VehicleParams) -> VehicleState:
    """Advance the nonlinear model one fixed step with classic RK4."""
    if not (0.0 < dt <= 0.05):
        raise ValueError("dt must lie in (0, 0.05]")

    def f(arr: np.ndarray) -> np.ndarray:
        return state_derivative(VehicleState.from_array(arr), control, params)

    z0 = state.as_array()
    k1 = f(z0)
    k2 = f(z0 + 0.5 * dt * k1)
    k3 = f(z0 + 0.5 * dt * k2)
    k4 = f(z0 + dt * k3)
    z1 = z0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(z1).all():
        raise InstabilityError("integration produced a non-finite state")
    return VehicleState.from_array(z1)


def discretize(model: LinearModel, dt: float) -> LinearModel:
    """Forward-Euler zero-order-hold approximation: Ad = I + A dt, Bd = B dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    ad = np.eye(model.n) + model.a * dt
    bd = model.b * dt
    return LinearModel(a=ad, b=bd)


def compose_euler_steps(model: LinearModel, sub_dt: float, count: int) -> LinearModel:
    """Compose ``count`` Euler substeps into one discrete transition.

    Used by the steering controller to discretize at its control period while
    keeping the substep small enough for numerical stability:
    Ad = (I + A*sub_dt)^count, Bd = sum_i (I + A*sub_dt)^i B*sub_dt.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    sub = discretize(model, sub_dt)
    ad = np.eye(model.n)
    bd = np.zeros_like(sub.b)
    for _ in range(count):
        bd = sub.a @ bd + sub.b
        ad = sub.a @ ad
    return LinearModel(a=ad, b=bd)


def lateral_state(state: VehicleState) -> np.ndarray:
    """Extract [Vy, gamma, phi, Y] in the ordering used by ``lateral_matrices``."""
    return np.array([state.vy, state.yaw_rate, state.yaw, state.y])


def beta_bound(params: VehicleParams) -> float:
    """Sideslip magnitude bound atan(0.02 mu g) used by planner and metrics."""
    return math.atan(0.02 * params.mu * params.gravity)
