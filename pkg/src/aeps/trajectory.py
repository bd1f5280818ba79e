"""Path geometry: waypoint trajectories, resampling, speed and curvature series.

Everything downstream (demand profiles, the mission loop, the metrics) works on
uniform-interval trajectories, so ``resample`` is the normalizing entry point.
Curvature is estimated per interior sample from the circumscribed circle of
three consecutive points, which is exact on circular arcs at any sampling
angle and converges to ||r' x r''|| / ||r'||^3 as the interval shrinks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidTrajectoryError",
    "Waypoint",
    "Trajectory",
    "TrajectoryFeatures",
    "resample",
    "speed_series",
    "curvature_series",
    "arc_length",
    "features",
    "per_second_average",
]

# Below this speed a sample counts as hover and curvature is defined as 0.
SPEED_EPS = 1e-6


class InvalidTrajectoryError(ValueError):
    """Malformed waypoint data: too short, non-finite, or non-monotone times."""


@dataclass(frozen=True)
class Waypoint:
    """A single timed position sample in meters / seconds."""

    position: np.ndarray
    time: float


@dataclass(frozen=True)
class Trajectory:
    """Ordered 3-D waypoint sequence.

    ``sample_interval`` is set once the trajectory has been resampled onto a
    uniform grid; raw (possibly non-uniform) trajectories carry ``None``.
    """

    times: np.ndarray
    positions: np.ndarray
    sample_interval: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        if times.ndim != 1 or positions.ndim != 2 or positions.shape[1] != 3:
            raise InvalidTrajectoryError("expected times (n,) and positions (n, 3)")
        if len(times) != len(positions):
            raise InvalidTrajectoryError("times and positions length mismatch")
        if len(times) < 2:
            raise InvalidTrajectoryError("a trajectory needs at least 2 waypoints")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(positions))):
            raise InvalidTrajectoryError("non-finite waypoint data")
        if np.any(np.diff(times) <= 0):
            raise InvalidTrajectoryError("timestamps must be strictly increasing")
        if self.sample_interval is not None:
            if self.sample_interval <= 0:
                raise InvalidTrajectoryError("sample_interval must be > 0")
            if np.max(np.abs(np.diff(times) - self.sample_interval)) > 1e-9:
                raise InvalidTrajectoryError("declared sample_interval is not uniform")

    @classmethod
    def from_waypoints(cls, waypoints: list[Waypoint]) -> "Trajectory":
        times = np.array([w.time for w in waypoints], dtype=float)
        positions = np.array([w.position for w in waypoints], dtype=float)
        return cls(times, positions)

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "z"])
            for t, p in zip(self.times, self.positions):
                writer.writerow([repr(float(t))] + [repr(float(c)) for c in p])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        times = data["t"]
        positions = np.column_stack([data["x"], data["y"], data["z"]])
        traj = cls(times, positions)
        dts = np.diff(times)
        if len(dts) and np.max(np.abs(dts - dts[0])) <= 1e-9:
            return cls(times, positions, sample_interval=float(dts[0]))
        return traj


@dataclass(frozen=True)
class TrajectoryFeatures:
    """Aggregate geometry used by the demand model.

    length_d: polyline arc length in meters.
    mean_abs_curvature: arithmetic mean of the per-sample |curvature| series.
    """

    length_d: float
    mean_abs_curvature: float
    curvature: np.ndarray
    speed: np.ndarray


def resample(trajectory: Trajectory, interval: float) -> Trajectory:
    """Linearly interpolate onto a uniform time grid.

    First and last waypoints are preserved exactly; the realized interval is
    duration / round(duration / interval), so it equals the request whenever
    the duration divides evenly.  Idempotent at the same interval.
    """
    if interval <= 0:
        raise InvalidTrajectoryError("resample interval must be > 0")
    duration = trajectory.duration
    n_seg = max(1, int(round(duration / interval)))
    new_times = np.linspace(trajectory.times[0], trajectory.times[-1], n_seg + 1)
    cols = [
        np.interp(new_times, trajectory.times, trajectory.positions[:, k])
        for k in range(3)
    ]
    return Trajectory(new_times, np.column_stack(cols), sample_interval=duration / n_seg)


def _require_uniform(trajectory: Trajectory) -> float:
    if trajectory.sample_interval is None:
        raise InvalidTrajectoryError("operation needs a resampled (uniform) trajectory")
    return float(trajectory.sample_interval)


def speed_series(trajectory: Trajectory) -> np.ndarray:
    """Per-sample speed in m/s: central differences inside, one-sided at ends."""
    dt = _require_uniform(trajectory)
    p = trajectory.positions
    v = np.empty(len(p))
    v[0] = np.linalg.norm(p[1] - p[0]) / dt
    v[-1] = np.linalg.norm(p[-1] - p[-2]) / dt
    if len(p) > 2:
        v[1:-1] = np.linalg.norm(p[2:] - p[:-2], axis=1) / (2.0 * dt)
    return v


def curvature_series(trajectory: Trajectory) -> np.ndarray:
    """Per-sample |curvature| in 1/m.

    Interior samples get the circumscribed-circle curvature of the point and
    its two neighbours, 2*||u x v|| / (||u|| ||v|| ||u+v||); endpoints copy the
    nearest interior value.  Near-stationary samples (central-difference speed
    below SPEED_EPS) yield 0 rather than an error, so hover segments are legal.
    """
    dt = _require_uniform(trajectory)
    p = trajectory.positions
    if len(p) < 3:
        raise InvalidTrajectoryError("curvature needs at least 3 samples")
    u = p[1:-1] - p[:-2]
    v = p[2:] - p[1:-1]
    w = p[2:] - p[:-2]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    nw = np.linalg.norm(w, axis=1)
    cross = np.linalg.norm(np.cross(u, v), axis=1)
    denom = nu * nv * nw
    speed_c = nw / (2.0 * dt)
    ok = (speed_c >= SPEED_EPS) & (denom > 0.0)
    kappa_int = np.zeros(len(u))
    np.divide(2.0 * cross, denom, out=kappa_int, where=ok)
    kappa = np.empty(len(p))
    kappa[1:-1] = kappa_int
    kappa[0] = kappa_int[0]
    kappa[-1] = kappa_int[-1]
    return kappa


def arc_length(positions: np.ndarray) -> float:
    """Polyline length in meters."""
    positions = np.asarray(positions, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))


def features(trajectory: Trajectory) -> TrajectoryFeatures:
    """Geometry aggregates of a uniform trajectory; see TrajectoryFeatures."""
    kappa = curvature_series(trajectory)
    return TrajectoryFeatures(
        length_d=arc_length(trajectory.positions),
        mean_abs_curvature=float(np.mean(kappa)),
        curvature=kappa,
        speed=speed_series(trajectory),
    )


def per_second_average(series: np.ndarray, sample_interval: float) -> np.ndarray:
    """Average a sampled series into 1 s bins (the last bin may be partial)."""
    series = np.asarray(series, dtype=float)
    per_bin = max(1, int(round(1.0 / sample_interval)))
    out = [
        float(np.mean(series[i : i + per_bin])) for i in range(0, len(series), per_bin)
    ]
    return np.array(out)
