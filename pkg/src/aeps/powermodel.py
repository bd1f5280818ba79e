"""Closed-form power demand of a flight path.

Instantaneous demand is a parametric speed baseline plus two curvature
surcharges: one on the local |curvature| and one on total path length times
mission-mean |curvature|.  The stock coefficient set keeps the surcharges in
the sub-watt range; the "scaled" preset multiplies them by 1e4 so maneuvering
actually moves the needle in benchmark scenarios.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory, features

__all__ = [
    "BaselineParams",
    "DemandParams",
    "DemandProfile",
    "DEMAND_PRESETS",
    "baseline_power",
    "instant_demand",
    "demand_profile",
]


@dataclass(frozen=True)
class BaselineParams:
    """Quadratic speed baseline p0 + p1*v + p2*v^2, watts."""

    p0: float = 60.0
    p1: float = 2.0
    p2: float = 0.5

    def __post_init__(self):
        if self.p0 <= 0:
            raise ValueError("p0 must be > 0 (hover still costs power)")
        if self.p1 < 0 or self.p2 < 0:
            raise ValueError("p1 and p2 must be >= 0")


@dataclass(frozen=True)
class DemandParams:
    """Curvature surcharge coefficients.

    k_curv multiplies the per-sample |curvature|; k_dist_curv multiplies
    path length times mission-mean |curvature|.
    """

    k_curv: float = 1e-4
    k_dist_curv: float = 2e-5

    def __post_init__(self):
        if self.k_curv < 0 or self.k_dist_curv < 0:
            raise ValueError("demand coefficients must be >= 0")


# "paper" keeps the published coefficient values; "scaled" amplifies them 1e4x
# so benchmark-scale paths (tens of meters) produce visible demand contrast.
DEMAND_PRESETS = {
    "paper": DemandParams(k_curv=1e-4, k_dist_curv=2e-5),
    "scaled": DemandParams(k_curv=1.0, k_dist_curv=0.2),
}


def baseline_power(speed, params: BaselineParams = BaselineParams()):
    """Baseline demand in watts for a speed (scalar or array) in m/s."""
    speed = np.asarray(speed, dtype=float)
    if np.any(speed < 0):
        raise ValueError("speed must be >= 0")
    out = params.p0 + params.p1 * speed + params.p2 * speed * speed
    return float(out) if out.ndim == 0 else out


def instant_demand(
    baseline: float,
    abs_curvature: float,
    length_d: float,
    mean_abs_curvature: float,
    params: DemandParams = DemandParams(),
) -> float:
    """One demand sample in watts."""
    if min(baseline, abs_curvature, length_d, mean_abs_curvature) < 0:
        raise ValueError("demand inputs must be >= 0")
    return baseline + params.k_curv * abs_curvature + params.k_dist_curv * length_d * mean_abs_curvature


@dataclass(frozen=True)
class DemandProfile:
    """Per-sample demand over a trajectory, watts at a uniform interval."""

    times: np.ndarray
    demand: np.ndarray
    sample_interval: float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "demand", np.asarray(self.demand, dtype=float))
        if len(self.times) != len(self.demand):
            raise ValueError("times and demand length mismatch")
        if np.any(self.demand < 0):
            raise ValueError("demand must be >= 0")

    @property
    def total_energy(self) -> float:
        """Joules by left rectangle rule over the sample intervals."""
        return float(np.sum(self.demand[:-1]) * self.sample_interval)

    @property
    def mean_power(self) -> float:
        return float(np.mean(self.demand))

    def scaled_to_mean(self, target_mean: float) -> "DemandProfile":
        """Same shape, rescaled so mean demand equals target_mean (if > 0)."""
        mean = self.mean_power
        if mean <= 0 or target_mean <= 0:
            return self
        return DemandProfile(self.times, self.demand * (target_mean / mean), self.sample_interval)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "demand_w"])
            for t, d in zip(self.times, self.demand):
                writer.writerow([repr(float(t)), repr(float(d))])

    @classmethod
    def from_csv(cls, path) -> "DemandProfile":
        data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        times = np.asarray(data["t"], dtype=float)
        dt = float(times[1] - times[0]) if len(times) > 1 else 0.1
        return cls(times, np.asarray(data["demand_w"], dtype=float), dt)


def demand_profile(
    trajectory: Trajectory,
    baseline: BaselineParams = BaselineParams(),
    params: DemandParams = DemandParams(),
) -> DemandProfile:
    """Demand at every sample of a uniform trajectory.

    The local term uses the per-sample curvature; the distance term uses the
    whole trajectory's length and mean |curvature|, so it is a constant offset.
    """
    feats = features(trajectory)
    demand = (
        baseline_power(feats.speed, baseline)
        + params.k_curv * feats.curvature
        + params.k_dist_curv * feats.length_d * feats.mean_abs_curvature
    )
    return DemandProfile(trajectory.times.copy(), demand, float(trajectory.sample_interval))
