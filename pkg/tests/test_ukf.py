"""Filter checks: analytic propagation, linear Kalman-filter oracle, consistency."""

import math

import numpy as np
import pytest
from scipy.stats import chi2

from rigcalib.scene import StreamNoise, TrajectoryConfig, simulate_measurements, trajectory_pose
from rigcalib.ukf import (
    DivergenceError,
    MissingPoseError,
    UkfConfig,
    UkfState,
    estimate_poses,
    predict,
    process_noise,
    update,
)

CFG = UkfConfig()


def make_state(mean=None, sigmas=None, time=0.0):
    mean = np.zeros(8) if mean is None else np.asarray(mean, dtype=float)
    if sigmas is None:
        sigmas = np.full(8, 0.1)
    return UkfState(mean, np.diag(np.square(sigmas)), time)


def test_predict_at_rest_only_grows_covariance():
    state = make_state(sigmas=np.full(8, 1e-7))
    out = predict(state, np.zeros(3), np.zeros(3), 0.5, CFG)
    assert np.allclose(out.mean, state.mean, atol=1e-9)
    assert np.allclose(out.covariance, process_noise(0.5, CFG), atol=1e-12)


def test_predict_linear_motion_is_exact():
    # Negligible yaw spread makes the model linear, where the UT is exact.
    sigmas = np.array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 1e-9, 1e-9])
    state = make_state(mean=[0, 0, 0, 2.0, 0, 0, 0, 0], sigmas=sigmas)
    out = predict(state, np.zeros(3), np.zeros(3), 0.1, CFG)
    assert np.allclose(out.mean[:3], [0.2, 0.0, 0.0], atol=1e-9)


def test_predict_matches_constant_turn_solution():
    v, omega, dt = 2.0, 0.21, 0.1
    sigmas = np.full(8, 1e-6)
    state = make_state(mean=[0, 0, 0, v, 0, 0, 0, omega], sigmas=sigmas)
    out = predict(state, np.zeros(3), np.array([0, 0, omega]), dt, CFG)
    expected = trajectory_pose(2.9, v, math.atan(omega * 2.9 / v), dt)
    assert np.allclose(out.mean[:3], expected.translation, atol=1e-6)
    assert out.mean[6] == pytest.approx(expected.euler().yaw, abs=1e-9)


def test_predict_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        predict(make_state(), np.zeros(3), np.zeros(3), 0.0, CFG)


def test_update_with_exact_prediction_keeps_mean():
    state = make_state(mean=[1, 2, 0.5, 2, 0, 0, 0.3, 0.2])
    out, accepted = update(state, "gps", state.mean[:3], CFG)
    assert accepted
    assert np.allclose(out.mean, state.mean, atol=1e-12)
    assert np.trace(out.covariance[:3, :3]) < np.trace(state.covariance[:3, :3])


def test_update_tight_measurement_pins_state():
    cfg = UkfConfig(velocity_sigma=1e-9)
    state = make_state(mean=[0, 0, 0, 2.0, 0, 0, 0, 0])
    z = np.array([2.3, 0.1, -0.05])
    out, accepted = update(state, "velocity", z, cfg)
    assert accepted
    assert np.allclose(out.mean[3:6], z, atol=1e-6)


def test_update_rejects_nonfinite():
    with pytest.raises(ValueError):
        update(make_state(), "gps", np.array([np.nan, 0, 0]), CFG)


def test_update_gates_outliers():
    state = make_state()
    out, accepted = update(state, "gps", np.array([500.0, 0.0, 0.0]), CFG)
    assert not accepted
    assert out is state


def test_update_wraps_yaw_innovation():
    state = make_state(mean=[0, 0, 0, 0, 0, 0, math.pi - 0.01, 0])
    out, accepted = update(state, "orientation", np.array([-(math.pi - 0.01)]), CFG)
    assert accepted
    # The wrapped innovation is +0.02 rad, not nearly -2 pi.
    assert abs(out.mean[6] - (math.pi - 0.01)) < 0.03


def test_ukf_matches_linear_kalman_filter_oracle(rng):
    """GPS-only tracking with zero yaw: the model is linear, so the UKF must
    reproduce a textbook Kalman filter to numerical precision."""
    cfg = UkfConfig(gyro_noise=1e-12)
    dt = 0.1
    sigmas = np.array([0.5, 0.5, 0.5, 0.3, 0.3, 0.3, 1e-10, 1e-10])
    state = make_state(mean=[0, 0, 0, 1.0, 0.5, 0.0, 0, 0], sigmas=sigmas)

    f = np.eye(8)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    f[7, 7] = 0.0
    h = np.zeros((3, 8))
    h[0, 0] = h[1, 1] = h[2, 2] = 1.0
    r = np.diag([cfg.gps_xy_sigma[0] ** 2, cfg.gps_xy_sigma[1] ** 2, cfg.gps_alt_sigma**2])

    kf_mean = state.mean.copy()
    kf_cov = state.covariance.copy()
    for _ in range(25):
        z = kf_mean[:3] + rng.normal(scale=0.02, size=3)

        state = predict(state, np.zeros(3), np.zeros(3), dt, cfg)
        state, accepted = update(state, "gps", z, cfg)
        assert accepted

        kf_mean = f @ kf_mean
        kf_cov = f @ kf_cov @ f.T + process_noise(dt, cfg)
        s = h @ kf_cov @ h.T + r
        gain = kf_cov @ h.T @ np.linalg.inv(s)
        kf_mean = kf_mean + gain @ (z - h @ kf_mean)
        kf_cov = kf_cov - gain @ s @ gain.T

        assert np.allclose(state.mean, kf_mean, atol=1e-8)
        assert np.allclose(state.covariance, kf_cov, atol=1e-8)


def test_covariance_stays_symmetric_positive_definite(rng):
    state = make_state(mean=[0, 0, 0, 2, 0, 0, 0, 0.2])
    for i in range(200):
        state = predict(state, np.array([0.01, 0, 0]), np.array([0, 0, 0.2]), 0.01, CFG)
        if i % 5 == 0:
            z = state.mean[:3] + rng.normal(scale=0.02, size=3)
            state, _ = update(state, "gps", z, CFG)
        assert np.max(np.abs(state.covariance - state.covariance.T)) < 1e-9
        np.linalg.cholesky(state.covariance)


def scan_grid(duration, rate=10.0):
    n = int(round(duration * rate))
    return np.arange(n + 1) / rate


def pose_errors(track, traj):
    errs = []
    for t, pose in zip(track.times, track.poses):
        gt = trajectory_pose(traj.wheelbase, traj.speed, traj.steering, float(t))
        dp = np.linalg.norm(pose.translation - gt.translation)
        dyaw = abs((pose.euler().yaw - gt.euler().yaw + math.pi) % (2 * math.pi) - math.pi)
        errs.append((dp, dyaw))
    return np.array(errs)


def test_estimate_poses_noiseless_straight_line():
    traj = TrajectoryConfig(steering=0.0, duration=5.0)
    streams = simulate_measurements(traj, StreamNoise().scaled(0.0), 0)
    cfg = UkfConfig.from_stream_noise(StreamNoise().scaled(0.0))
    track = estimate_poses(streams, scan_grid(5.0), cfg)
    errs = pose_errors(track, traj)
    assert np.all(errs[:, 0] < 1e-3)
    assert np.all(errs[:, 1] < 1e-4)


def test_estimate_poses_noiseless_curve():
    traj = TrajectoryConfig(duration=8.0)
    streams = simulate_measurements(traj, StreamNoise().scaled(0.0), 0)
    cfg = UkfConfig.from_stream_noise(StreamNoise().scaled(0.0))
    track = estimate_poses(streams, scan_grid(8.0), cfg)
    errs = pose_errors(track, traj)
    assert np.all(errs[:, 0] < 1e-2)
    assert np.all(errs[:, 1] < 1e-3)


def test_estimate_poses_noisy_rms_envelope():
    traj = TrajectoryConfig()
    noise = StreamNoise()
    cfg = UkfConfig.from_stream_noise(noise)
    rms = []
    for seed in range(3):
        streams = simulate_measurements(traj, noise, seed)
        track = estimate_poses(streams, scan_grid(traj.duration), cfg)
        errs = pose_errors(track, traj)
        rms.append(np.sqrt(np.mean(errs[:, 0] ** 2)))
    assert np.mean(rms) < 0.15


def test_estimate_poses_deterministic():
    traj = TrajectoryConfig(duration=4.0)
    streams = simulate_measurements(traj, StreamNoise(), 5)
    cfg = UkfConfig.from_stream_noise(StreamNoise())
    t1 = estimate_poses(streams, scan_grid(4.0), cfg)
    t2 = estimate_poses(streams, scan_grid(4.0), cfg)
    for a, b in zip(t1.poses, t2.poses):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)


def test_estimate_poses_requires_coverage():
    traj = TrajectoryConfig(duration=2.0)
    streams = simulate_measurements(traj, StreamNoise(), 0)
    with pytest.raises(MissingPoseError):
        estimate_poses(streams, [0.0, 5.0], UkfConfig())


def test_position_nees_consistency():
    """Average position NEES over repeated noisy runs stays inside the 95%
    chi-square envelope for at least 80% of the time steps."""
    traj = TrajectoryConfig(duration=6.0)
    noise = StreamNoise()
    cfg = UkfConfig.from_stream_noise(noise)
    times = scan_grid(6.0, rate=2.0)[1:]
    runs = 100
    nees = np.zeros((runs, len(times)))
    for run in range(runs):
        streams = simulate_measurements(traj, noise, 1000 + run)
        track = estimate_poses(streams, times, cfg)
        for j, (t, pose) in enumerate(zip(track.times, track.poses)):
            gt = trajectory_pose(traj.wheelbase, traj.speed, traj.steering, float(t))
            err = pose.translation - gt.translation
            p_pos = track.covariances[j][:3, :3]
            nees[run, j] = err @ np.linalg.solve(p_pos, err)
    mean_nees = nees.mean(axis=0)
    lo = chi2.ppf(0.025, 3 * runs) / runs
    hi = chi2.ppf(0.975, 3 * runs) / runs
    inside = (mean_nees >= lo) & (mean_nees <= hi)
    assert inside.mean() >= 0.8, f"mean NEES {mean_nees} outside [{lo:.2f}, {hi:.2f}]"


def test_divergence_error_on_bad_covariance():
    with pytest.raises(DivergenceError):
        UkfState(np.zeros(8), -np.eye(8), 0.0)
