"""Unscented Kalman filter fusing IMU, GPS, velocity and orientation streams
into planar vehicle poses at the LiDAR scan timestamps.

State (8): position xyz [m], body-frame velocity xyz [m/s], yaw [rad],
yaw rate [rad/s]. The process model is a planar constant-turn step driven by
the measured yaw rate and longitudinal acceleration; all measurement models
are linear in the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rigcalib.geometry import EulerAngles, RigidTransform
from rigcalib.scene import MeasurementStreams, StreamNoise, gps_to_local

__all__ = [
    "DivergenceError",
    "MissingPoseError",
    "UkfConfig",
    "UkfState",
    "VehiclePoseTrack",
    "estimate_poses",
    "predict",
    "process_noise",
    "update",
]

STATE_DIM = 8


class DivergenceError(RuntimeError):
    """Covariance lost positive definiteness."""


class MissingPoseError(KeyError):
    """No pose is available at a requested timestamp."""


@dataclass(frozen=True)
class UkfConfig:
    """Sigma-point parameters plus process/measurement noise levels."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    accel_noise: float = 0.05
    gyro_noise: float = 0.005
    lateral_vel_drift: float = 5e-3  # vy/vz random walk, m/s per sqrt(s)
    gps_xy_sigma: tuple[float, float] = (0.0112, 0.0167)
    gps_alt_sigma: float = 0.02
    velocity_sigma: float = 0.1
    orientation_sigma: float = 0.005
    innovation_gate: float = 5.0
    init_sigma_factor: float = 10.0

    @classmethod
    def from_stream_noise(cls, noise: StreamNoise, **overrides) -> "UkfConfig":
        lat_m = math.radians(noise.gps_latlon_deg) * 6378137.0
        lon_m = lat_m * math.cos(math.radians(48.0))
        sigmas = dict(
            accel_noise=max(noise.accel, 1e-4),
            gyro_noise=max(noise.gyro, 1e-6),
            gps_xy_sigma=(max(lon_m, 1e-4), max(lat_m, 1e-4)),
            gps_alt_sigma=max(noise.gps_alt, 1e-4),
            velocity_sigma=max(noise.velocity, 1e-4),
            orientation_sigma=max(noise.orientation, 1e-6),
        )
        sigmas.update(overrides)
        return cls(**sigmas)


@dataclass(frozen=True)
class UkfState:
    """Filter mean and covariance at a point in time."""

    mean: np.ndarray
    covariance: np.ndarray
    time: float

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        cov = _checked_covariance(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:6]

    @property
    def yaw(self) -> float:
        return float(self.mean[6])

    @property
    def yaw_rate(self) -> float:
        return float(self.mean[7])

    def pose(self) -> RigidTransform:
        """Planar pose lift: position plus yaw about z."""
        return RigidTransform.from_euler(EulerAngles(0.0, 0.0, self.yaw), self.position)


@dataclass(frozen=True)
class VehiclePoseTrack:
    """Estimated vehicle poses (and state covariances) at scan timestamps."""

    times: np.ndarray
    poses: tuple[RigidTransform, ...]
    covariances: np.ndarray

    def pose_at_time(self, t: float, tol: float = 1e-9) -> RigidTransform:
        idx = np.flatnonzero(np.abs(self.times - t) <= tol)
        if len(idx) == 0:
            raise MissingPoseError(f"no pose at t={t!r}")
        return self.poses[int(idx[0])]


def _checked_covariance(cov: np.ndarray) -> np.ndarray:
    if cov.shape != (STATE_DIM, STATE_DIM):
        raise ValueError("covariance must be 8x8")
    if np.max(np.abs(cov - cov.T)) > 1e-9:
        raise DivergenceError("covariance lost symmetry")
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError("covariance not positive definite") from exc
    return cov


def _sigma_points(state: UkfState, config: UkfConfig):
    n = STATE_DIM
    lam = config.alpha**2 * (n + config.kappa) - n
    scale = math.sqrt(n + lam)
    try:
        root = np.linalg.cholesky(state.covariance)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError("covariance not positive definite") from exc
    offsets = scale * root
    points = np.empty((2 * n + 1, n))
    points[0] = state.mean
    points[1 : n + 1] = state.mean + offsets.T
    points[n + 1 :] = state.mean - offsets.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - config.alpha**2 + config.beta)
    return points, wm, wc


def process_noise(dt: float, config: UkfConfig) -> np.ndarray:
    """Additive process noise for one prediction step of length dt."""
    q_pos = (0.5 * config.accel_noise * dt * dt) ** 2 + (1e-4 * dt) ** 2
    q_vx = (config.accel_noise * dt) ** 2
    q_vlat = config.lateral_vel_drift**2 * dt
    q_yaw = (config.gyro_noise * dt) ** 2
    q_yaw_rate = config.gyro_noise**2
    return np.diag([q_pos, q_pos, q_pos, q_vx, q_vlat, q_vlat, q_yaw, q_yaw_rate])


def _propagate(points: np.ndarray, accel_x: float, omega: float, dt: float) -> np.ndarray:
    out = points.copy()
    vx = points[:, 3]
    vy = points[:, 4]
    yaw = points[:, 6]
    yaw_new = yaw + omega * dt
    if abs(omega) > 1e-9:
        dx = vx / omega * (np.sin(yaw_new) - np.sin(yaw))
        dy = -vx / omega * (np.cos(yaw_new) - np.cos(yaw))
    else:
        dx = vx * np.cos(yaw) * dt
        dy = vx * np.sin(yaw) * dt
    yaw_mid = yaw + 0.5 * omega * dt
    dx = dx - np.sin(yaw_mid) * vy * dt
    dy = dy + np.cos(yaw_mid) * vy * dt
    out[:, 0] += dx
    out[:, 1] += dy
    out[:, 2] += points[:, 5] * dt
    out[:, 3] += accel_x * dt
    out[:, 6] = yaw_new
    out[:, 7] = omega
    return out


def predict(
    state: UkfState,
    accel: np.ndarray,
    gyro: np.ndarray,
    dt: float,
    config: UkfConfig = UkfConfig(),
) -> UkfState:
    """Unscented prediction through the constant-turn process model driven by
    the measured longitudinal acceleration and yaw rate."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    points, wm, wc = _sigma_points(state, config)
    propagated = _propagate(points, float(accel[0]), float(gyro[2]), dt)
    mean = wm @ propagated
    dev = propagated - mean
    cov = (wc[:, None] * dev).T @ dev + process_noise(dt, config)
    return UkfState(mean, 0.5 * (cov + cov.T), state.time + dt)


_MEASUREMENT_SLICES = {
    "gps": slice(0, 3),
    "velocity": slice(3, 6),
    "orientation": slice(6, 7),
}


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def update(
    state: UkfState,
    kind: str,
    value: np.ndarray,
    config: UkfConfig = UkfConfig(),
) -> tuple[UkfState, bool]:
    """Unscented measurement update for one gps/velocity/orientation sample.

    GPS values must already be mapped to local xyz meters; orientation passes
    only its yaw component. Returns the new state and whether the measurement
    was accepted (innovations beyond the gate are skipped).
    """
    sel = _MEASUREMENT_SLICES[kind]
    z = np.atleast_1d(np.asarray(value, dtype=float))
    if kind == "orientation" and z.shape == (3,):
        z = z[2:3]
    if not np.all(np.isfinite(z)):
        raise ValueError(f"non-finite {kind} measurement")
    if kind == "gps":
        r_diag = [config.gps_xy_sigma[0] ** 2, config.gps_xy_sigma[1] ** 2, config.gps_alt_sigma**2]
    elif kind == "velocity":
        r_diag = [config.velocity_sigma**2] * 3
    else:
        r_diag = [config.orientation_sigma**2]
    r = np.diag(r_diag)

    points, wm, wc = _sigma_points(state, config)
    z_sigma = points[:, sel]
    z_pred = wm @ z_sigma
    dz = z_sigma - z_pred
    dx = points - (wm @ points)
    s = (wc[:, None] * dz).T @ dz + r
    cross = (wc[:, None] * dx).T @ dz

    innovation = z - z_pred
    if kind == "orientation":
        innovation = _wrap(innovation)
    maha = float(innovation @ np.linalg.solve(s, innovation))
    if math.sqrt(max(maha, 0.0)) > config.innovation_gate:
        return state, False

    gain = cross @ np.linalg.inv(s)
    mean = state.mean + gain @ innovation
    cov = state.covariance - gain @ s @ gain.T
    # Tiny ridge keeps the posterior factorizable in the zero-noise limit.
    ridge = max(1e-12 * float(np.trace(state.covariance)) / STATE_DIM, 1e-18)
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(STATE_DIM)
    return UkfState(mean, cov, state.time), True


def _initial_state(streams: MeasurementStreams, config: UkfConfig) -> UkfState:
    pos = gps_to_local(streams.gps[0])
    mean = np.zeros(STATE_DIM)
    mean[:3] = pos
    mean[3:6] = streams.velocity[0]
    mean[6] = streams.orientation[0, 2]
    mean[7] = streams.gyro[0, 2]
    f = config.init_sigma_factor
    sigmas = np.array(
        [
            f * config.gps_xy_sigma[0],
            f * config.gps_xy_sigma[1],
            f * config.gps_alt_sigma,
            f * config.velocity_sigma,
            f * config.velocity_sigma,
            f * config.velocity_sigma,
            f * config.orientation_sigma,
            f * config.gyro_noise,
        ]
    )
    t0 = float(streams.imu_times[0])
    return UkfState(mean, np.diag(sigmas**2), t0)


def estimate_poses(
    streams: MeasurementStreams,
    scan_times,
    config: UkfConfig = UkfConfig(),
) -> VehiclePoseTrack:
    """Run the filter over all streams in timestamp order and emit the
    posterior pose at each scan time (predict-to-timestamp, no smoothing)."""
    scan_times = np.asarray(scan_times, dtype=float)
    start = float(streams.imu_times[0])
    if len(scan_times) and (scan_times.min() < start - 1e-9 or scan_times.max() > streams.end_time + 1e-9):
        raise MissingPoseError("scan times exit measurement stream coverage")

    events: list[tuple[float, int, str, int]] = []
    events += [(float(t), 0, "imu", i) for i, t in enumerate(streams.imu_times)]
    events += [(float(t), 1, "gps", i) for i, t in enumerate(streams.gps_times)]
    events += [(float(t), 2, "velocity", i) for i, t in enumerate(streams.velocity_times)]
    events += [(float(t), 3, "orientation", i) for i, t in enumerate(streams.orientation_times)]
    events += [(float(t), 9, "scan", i) for i, t in enumerate(scan_times)]
    events.sort(key=lambda e: (e[0], e[1]))

    state = _initial_state(streams, config)
    accel, gyro = streams.accel[0], streams.gyro[0]
    out_poses: dict[int, tuple[RigidTransform, np.ndarray]] = {}

    for t, _, kind, idx in events:
        dt = t - state.time
        if dt > 1e-12:
            state = predict(state, accel, gyro, dt, config)
        if kind == "imu":
            accel, gyro = streams.accel[idx], streams.gyro[idx]
        elif kind == "gps":
            state, _ = update(state, "gps", gps_to_local(streams.gps[idx]), config)
        elif kind == "velocity":
            state, _ = update(state, "velocity", streams.velocity[idx], config)
        elif kind == "orientation":
            state, _ = update(state, "orientation", streams.orientation[idx], config)
        else:
            out_poses[idx] = (state.pose(), state.covariance.copy())

    poses = tuple(out_poses[i][0] for i in range(len(scan_times)))
    covs = (
        np.stack([out_poses[i][1] for i in range(len(scan_times))])
        if len(scan_times)
        else np.zeros((0, STATE_DIM, STATE_DIM))
    )
    return VehiclePoseTrack(scan_times.copy(), poses, covs)


def ground_truth_track(wheelbase: float, speed: float, steering: float, scan_times) -> VehiclePoseTrack:
    """Exact constant-turn poses packaged as a pose track (zero uncertainty)."""
    from rigcalib.scene import trajectory_pose

    scan_times = np.asarray(scan_times, dtype=float)
    poses = tuple(trajectory_pose(wheelbase, speed, steering, float(t)) for t in scan_times)
    covs = np.tile(1e-18 * np.eye(STATE_DIM), (len(scan_times), 1, 1))
    return VehiclePoseTrack(scan_times.copy(), poses, covs)
