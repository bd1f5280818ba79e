"""Sampled-trajectory geometry: resampling, speed, curvature, features."""

import numpy as np
import pytest

from aeps import (
    InvalidTrajectoryError,
    Trajectory,
    Waypoint,
    arc_length,
    curvature_series,
    features,
    per_second_average,
    resample,
    speed_series,
)


def circle(radius, speed, z=2.0, turns=1.0, dt=0.1):
    period = 2 * np.pi * radius / speed
    t = np.arange(0.0, turns * period + dt / 2, dt)
    ang = speed * t / radius
    pos = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.full_like(t, z)], axis=1)
    return Trajectory(t, pos, sample_interval=dt)


def straight(length=40.0, speed=4.0, dt=0.1):
    t = np.arange(0.0, length / speed + dt / 2, dt)
    pos = np.stack([speed * t, np.zeros_like(t), np.full_like(t, 2.0)], axis=1)
    return Trajectory(t, pos, sample_interval=dt)


# -- construction and resampling ---------------------------------------------


def test_from_waypoints_two_points():
    traj = Trajectory.from_waypoints(
        [Waypoint((0.0, 0.0, 1.0), 0.0), Waypoint((10.0, 0.0, 1.0), 10.0)]
    )
    out = resample(traj, 10.0)
    assert out.n_samples == 2
    np.testing.assert_allclose(out.positions[-1], [10.0, 0.0, 1.0])


def test_resample_straight_segment():
    traj = Trajectory.from_waypoints(
        [Waypoint((0.0, 0.0, 0.0), 0.0), Waypoint((10.0, 0.0, 0.0), 1.0)]
    )
    out = resample(traj, 0.1)
    assert out.n_samples == 11
    # every sample stays on the segment
    assert np.all(np.abs(out.positions[:, 1]) < 1e-12)
    assert np.all(np.abs(out.positions[:, 2]) < 1e-12)
    np.testing.assert_allclose(np.diff(out.positions[:, 0]), 1.0, atol=1e-9)


def test_resample_idempotent():
    traj = circle(radius=5.0, speed=4.0)
    once = resample(traj, 0.1)
    twice = resample(once, 0.1)
    np.testing.assert_allclose(once.times, twice.times, atol=1e-12)
    np.testing.assert_allclose(once.positions, twice.positions, atol=1e-9)


def test_resample_preserves_arc_length():
    traj = circle(radius=6.0, speed=5.0)
    fine = resample(traj, 0.05)
    assert arc_length(fine.positions) == pytest.approx(arc_length(traj.positions), rel=0.01)


def test_nonmonotone_times_rejected():
    t = np.array([0.0, 0.1, 0.1, 0.3])
    pos = np.zeros((4, 3))
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(t, pos)


def test_length_mismatch_rejected():
    with pytest.raises(InvalidTrajectoryError):
        Trajectory(np.array([0.0, 0.1]), np.zeros((3, 3)))


def test_csv_round_trip(tmp_path):
    traj = circle(radius=3.0, speed=4.0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    back = Trajectory.from_csv(path)
    np.testing.assert_allclose(back.times, traj.times, atol=1e-12)
    np.testing.assert_allclose(back.positions, traj.positions, atol=1e-12)


# -- speed and curvature ------------------------------------------------------


def test_straight_speed_and_curvature():
    traj = straight(length=40.0, speed=4.0)
    np.testing.assert_allclose(speed_series(traj), 4.0, atol=1e-9)
    assert np.max(np.abs(curvature_series(traj))) <= 1e-9


@pytest.mark.parametrize("radius", [2.0, 4.0, 8.0])
@pytest.mark.parametrize("speed", [3.0, 5.0, 8.0])
def test_circle_curvature_oracle(radius, speed):
    traj = circle(radius=radius, speed=speed)
    kappa = curvature_series(traj)
    # skip the one-sided endpoint estimates
    assert np.max(np.abs(kappa[2:-2] - 1.0 / radius)) <= 1e-3
    np.testing.assert_allclose(speed_series(traj)[2:-2], speed, rtol=1e-3)


def test_helix_curvature_oracle():
    radius, pitch, speed, dt = 4.0, 1.0, 5.0, 0.1
    omega = speed / np.hypot(radius, pitch)
    t = np.arange(0.0, 8.0, dt)
    pos = np.stack(
        [radius * np.cos(omega * t), radius * np.sin(omega * t), pitch * omega * t], axis=1
    )
    traj = Trajectory(t, pos, sample_interval=dt)
    expected = radius / (radius**2 + pitch**2)
    assert np.max(np.abs(curvature_series(traj)[2:-2] - expected)) <= 1e-3


def test_hover_has_zero_curvature():
    t = np.arange(0.0, 5.0, 0.1)
    pos = np.tile([3.0, 4.0, 2.0], (len(t), 1))
    traj = Trajectory(t, pos, sample_interval=0.1)
    assert np.all(curvature_series(traj) == 0.0)
    assert np.all(speed_series(traj) == 0.0)


# -- arc length and features --------------------------------------------------


def test_polyline_corner_length_exact():
    traj = Trajectory.from_waypoints(
        [
            Waypoint((0.0, 0.0, 1.0), 0.0),
            Waypoint((10.0, 0.0, 1.0), 5.0),
            Waypoint((10.0, 10.0, 1.0), 10.0),
        ]
    )
    fine = resample(traj, 0.1)
    assert arc_length(fine.positions) == pytest.approx(20.0, abs=1e-6)


def test_arc_length_rigid_motion_invariant():
    traj = circle(radius=5.0, speed=4.0)
    ang = 0.61
    rot = np.array(
        [[np.cos(ang), -np.sin(ang), 0.0], [np.sin(ang), np.cos(ang), 0.0], [0.0, 0.0, 1.0]]
    )
    moved = traj.positions @ rot.T + np.array([12.0, -7.0, 3.0])
    assert arc_length(moved) == pytest.approx(arc_length(traj.positions), rel=1e-9)


def test_features_straight():
    f = features(straight(length=40.0, speed=4.0))
    assert f.length_d == pytest.approx(40.0, rel=1e-6)
    assert f.mean_abs_curvature <= 1e-9


def test_features_full_circle():
    f = features(circle(radius=5.0, speed=4.0, turns=1.0))
    assert f.length_d == pytest.approx(2 * np.pi * 5.0, rel=0.01)
    assert np.mean(np.abs(f.curvature[2:-2])) == pytest.approx(0.2, abs=1e-3)


def test_per_second_average_bins():
    series = np.concatenate([np.full(10, 2.0), np.full(10, 4.0), np.full(5, 6.0)])
    out = per_second_average(series, 0.1)
    np.testing.assert_allclose(out, [2.0, 4.0, 6.0])
