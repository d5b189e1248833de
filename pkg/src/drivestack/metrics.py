"""Episode logging and the longitudinal / lateral performance indicators.

Indicators are normalized mean absolute values over the K logged samples of
a segment (lane keeping for the longitudinal set, lane changing for the
lateral set):

    longitudinal: tracking  (1/(K |ax_max|))  sum |ax - ax_ref|
                  cruising  (1/(K  Vx_max ))  sum |Vx - Vx_max|
                  effort    (1/(K |ax_max|))  sum |ax|
    lateral:      tracking  (1/(K  Y_max  ))  sum |Y - Y_ref|
                  stability (1/(K beta_max))  sum |beta|
                  effort    (1/(K delta_max)) sum |delta_f|

An empty segment leaves the indicators NaN with ``defined`` False.

``EpisodeLog`` records one row per control period and round-trips exactly
through CSV (floats serialized via repr), so the file-based post-processor
``metrics_from_csv`` reproduces in-loop values bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ControlLimits, ScenarioConfig, VehicleParams
from .dynamics import beta_bound

EPISODE_COLUMNS = (
    "time", "phase", "x", "y", "vx", "vy", "yaw", "yaw_rate", "beta",
    "ax_cmd", "ax_exec", "delta_f", "y_ref", "reward", "action", "maneuver",
)

KEEP_PHASE = "keep"
CHANGE_PHASE = "change"


@dataclass(frozen=True)
class MetricNormalizers:
    ax_max: float
    v_max: float
    y_max: float
    beta_max: float
    delta_max: float

    @staticmethod
    def from_config(vehicle: VehicleParams, scenario: ScenarioConfig,
                    limits: ControlLimits) -> "MetricNormalizers":
        return MetricNormalizers(
            ax_max=abs(limits.ax_max), v_max=scenario.v_max,
            y_max=scenario.lane_width, beta_max=beta_bound(vehicle),
            delta_max=abs(limits.delta_max))


@dataclass(frozen=True)
class LongitudinalMetrics:
    tracking: float
    cruising: float
    effort: float
    samples: int

    @property
    def defined(self) -> bool:
        return self.samples > 0


@dataclass(frozen=True)
class LateralMetrics:
    tracking: float
    stability: float
    effort: float
    samples: int

    @property
    def defined(self) -> bool:
        return self.samples > 0


def longitudinal_metrics(ax: np.ndarray, ax_ref: np.ndarray, vx: np.ndarray,
                         norm: MetricNormalizers) -> LongitudinalMetrics:
    ax, ax_ref, vx = (np.asarray(a, dtype=float) for a in (ax, ax_ref, vx))
    k = ax.size
    if k == 0:
        return LongitudinalMetrics(math.nan, math.nan, math.nan, 0)
    return LongitudinalMetrics(
        tracking=float(np.abs(ax - ax_ref).sum() / (k * norm.ax_max)),
        cruising=float(np.abs(vx - norm.v_max).sum() / (k * norm.v_max)),
        effort=float(np.abs(ax).sum() / (k * norm.ax_max)),
        samples=k)


def lateral_metrics(y: np.ndarray, y_ref: np.ndarray, beta: np.ndarray,
                    delta_f: np.ndarray,
                    norm: MetricNormalizers) -> LateralMetrics:
    y, y_ref, beta, delta_f = (np.asarray(a, dtype=float)
                               for a in (y, y_ref, beta, delta_f))
    k = y.size
    if k == 0:
        return LateralMetrics(math.nan, math.nan, math.nan, 0)
    return LateralMetrics(
        tracking=float(np.abs(y - y_ref).sum() / (k * norm.y_max)),
        stability=float(np.abs(beta).sum() / (k * norm.beta_max)),
        effort=float(np.abs(delta_f).sum() / (k * norm.delta_max)),
        samples=k)


@dataclass
class EpisodeLog:
    """Control-period samples of one episode, CSV round-trip exact."""

    rows: list[dict] = field(default_factory=list)

    def append(self, *, time: float, phase: str, x: float, y: float,
               vx: float, vy: float, yaw: float, yaw_rate: float,
               ax_cmd: float, ax_exec: float, delta_f: float, y_ref: float,
               reward: float, action: int, maneuver: int) -> None:
        if phase not in (KEEP_PHASE, CHANGE_PHASE):
            raise ValueError(f"unknown phase {phase!r}")
        self.rows.append({
            "time": time, "phase": phase, "x": x, "y": y, "vx": vx,
            "vy": vy, "yaw": yaw, "yaw_rate": yaw_rate, "beta": vy / vx,
            "ax_cmd": ax_cmd, "ax_exec": ax_exec, "delta_f": delta_f,
            "y_ref": y_ref, "reward": reward, "action": action,
            "maneuver": maneuver,
        })

    def column(self, name: str) -> np.ndarray:
        if name == "phase":
            return np.array([r["phase"] for r in self.rows])
        dtype = int if name in ("action", "maneuver") else float
        return np.array([r[name] for r in self.rows], dtype=dtype)

    def _select(self, phase: str, names: tuple[str, ...]) -> list[np.ndarray]:
        keep = self.column("phase") == phase if self.rows else np.zeros(
            0, dtype=bool)
        return [self.column(n)[keep] if self.rows else np.zeros(0)
                for n in names]

    def longitudinal(self, norm: MetricNormalizers) -> LongitudinalMetrics:
        ax, ax_ref, vx = self._select(KEEP_PHASE,
                                      ("ax_exec", "ax_cmd", "vx"))
        return longitudinal_metrics(ax, ax_ref, vx, norm)

    def lateral(self, norm: MetricNormalizers) -> LateralMetrics:
        y, y_ref, beta, delta = self._select(
            CHANGE_PHASE, ("y", "y_ref", "beta", "delta_f"))
        return lateral_metrics(y, y_ref, beta, delta, norm)

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EPISODE_COLUMNS)
            for row in self.rows:
                writer.writerow([
                    row[c] if c in ("phase", "action", "maneuver")
                    else repr(float(row[c])) for c in EPISODE_COLUMNS])

    @staticmethod
    def load(path: str | Path) -> "EpisodeLog":
        log = EpisodeLog()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != EPISODE_COLUMNS:
                raise ValueError("unexpected episode CSV header")
            for raw in reader:
                row = {}
                for name, value in zip(EPISODE_COLUMNS, raw):
                    if name == "phase":
                        row[name] = value
                    elif name in ("action", "maneuver"):
                        row[name] = int(value)
                    else:
                        row[name] = float(value)
                log.rows.append(row)
        return log


def metrics_from_csv(path: str | Path, norm: MetricNormalizers
                     ) -> tuple[LongitudinalMetrics, LateralMetrics]:
    """Recompute both indicator sets from a saved episode CSV."""
    log = EpisodeLog.load(path)
    return log.longitudinal(norm), log.lateral(norm)
