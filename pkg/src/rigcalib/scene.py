"""Synthetic calibration scene: curved vehicle trajectory on a flat ground
plane, a rigid multi-box target, ray-cast LiDAR scans, and noisy
IMU/GPS/velocity/orientation measurement streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rigcalib import kernels
from rigcalib.geometry import EulerAngles, RigidTransform, apply, compose

__all__ = [
    "Box",
    "LidarConfig",
    "LidarScan",
    "MeasurementStreams",
    "Scene",
    "SensorRig",
    "TargetShape",
    "TrajectoryConfig",
    "inject_calibration_error",
    "raycast_scan",
    "simulate_measurements",
    "simulate_trajectory",
    "trajectory_pose",
]

# Local-tangent-plane anchor for the synthetic GPS stream.
GPS_ORIGIN_LAT = 48.0
GPS_ORIGIN_LON = 11.0
EARTH_RADIUS = 6378137.0


@dataclass(frozen=True)
class LidarConfig:
    """Ray-grid LiDAR model: channels x horizontal steps spanning the FoV."""

    horizontal_fov_deg: float = 120.0
    vertical_fov_deg: float = 25.0
    max_range: float = 500.0
    channels: int = 152
    horizontal_steps: int = 480
    range_noise_sigma: float = 0.01
    scan_rate_hz: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.horizontal_fov_deg <= 360.0:
            raise ValueError("horizontal FoV must be in (0, 360] degrees")
        if not 0.0 < self.vertical_fov_deg < 180.0:
            raise ValueError("vertical FoV must be in (0, 180) degrees")
        if self.channels < 2 or self.horizontal_steps < 2:
            raise ValueError("need at least 2 channels and 2 horizontal steps")
        if self.range_noise_sigma < 0.0 or self.max_range <= 0.0:
            raise ValueError("max_range must be positive and noise sigma non-negative")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame (x forward, z up), row-major
        over (channel, azimuth)."""
        half_h = math.radians(self.horizontal_fov_deg) / 2.0
        half_v = math.radians(self.vertical_fov_deg) / 2.0
        azimuths = np.linspace(-half_h, half_h, self.horizontal_steps)
        elevations = np.linspace(-half_v, half_v, self.channels)
        el, az = np.meshgrid(elevations, azimuths, indexing="ij")
        dirs = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        )
        return dirs.reshape(-1, 3)


@dataclass(frozen=True)
class SensorRig:
    """Per-sensor ground-truth and initial (erroneous) mount poses plus LiDAR models."""

    mounts: dict[str, RigidTransform]
    initial_mounts: dict[str, RigidTransform]
    lidars: dict[str, LidarConfig]

    def __post_init__(self) -> None:
        ids = list(self.mounts)
        if len(ids) < 2:
            raise ValueError("a rig needs at least 2 sensors")
        if set(self.initial_mounts) != set(ids) or set(self.lidars) != set(ids):
            raise ValueError("mounts, initial_mounts and lidars must share sensor ids")

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return tuple(self.mounts)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in the target frame: center and full extents, meters."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def triangles(self) -> np.ndarray:
        c = np.asarray(self.center)
        h = np.asarray(self.size) / 2.0
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        v = c + signs * h
        faces = [
            (0, 1, 3), (0, 3, 2),  # -x
            (4, 6, 7), (4, 7, 5),  # +x
            (0, 4, 5), (0, 5, 1),  # -y
            (2, 3, 7), (2, 7, 6),  # +y
            (0, 2, 6), (0, 6, 4),  # -z
            (1, 5, 7), (1, 7, 3),  # +z
        ]
        return v[np.asarray(faces)]


@dataclass(frozen=True)
class TargetShape:
    """Rigid composite of boxes with a world pose, realized as a triangle mesh."""

    boxes: tuple[Box, ...]
    pose: RigidTransform

    def triangles_world(self) -> np.ndarray:
        tris = np.concatenate([b.triangles() for b in self.boxes])
        return apply(self.pose, tris.reshape(-1, 3)).reshape(-1, 3, 3)

    @classmethod
    def chair(
        cls,
        pose: RigidTransform,
        seat_size=(0.6, 0.45, 0.4),
        back_size=(0.25, 0.45, 0.5),
        arm_size=(0.18, 0.14, 0.28),
    ) -> "TargetShape":
        """Seat-and-back composite with one armrest.

        The unequal box extents keep the silhouette asymmetric under quarter
        turns even in partial views, and the armrest adds off-plane structure
        seen from both travel directions, which joint registration needs to
        couple opposing perspectives.
        """
        seat = Box((0.0, 0.0, seat_size[2] / 2.0), tuple(seat_size))
        back = Box(
            (-(seat_size[0] - back_size[0]) / 2.0, 0.0, seat_size[2] + back_size[2] / 2.0),
            tuple(back_size),
        )
        arm = Box(
            (
                (seat_size[0] - arm_size[0]) / 2.0,
                (seat_size[1] - arm_size[1]) / 2.0,
                seat_size[2] + arm_size[2] / 2.0,
            ),
            tuple(arm_size),
        )
        return cls((seat, back, arm), pose)


@dataclass(frozen=True)
class Scene:
    """Everything the LiDARs can see: the target mesh and an optional ground plane."""

    target: TargetShape
    ground_z: float | None = 0.0

    def triangles(self) -> np.ndarray:
        return self.target.triangles_world()


@dataclass(frozen=True)
class LidarScan:
    """Points in the sensor frame for one (sensor, frame) sighting."""

    sensor_id: str
    frame_index: int
    timestamp: float
    points: np.ndarray


@dataclass(frozen=True)
class TrajectoryConfig:
    """Constant-speed, constant-steering bicycle maneuver starting at the origin."""

    wheelbase: float = 2.9
    speed: float = 2.0
    steering: float = math.radians(17.0)
    duration: float = 15.0
    step: float = 0.01

    @property
    def yaw_rate(self) -> float:
        return self.speed * math.tan(self.steering) / self.wheelbase


def trajectory_pose(wheelbase: float, speed: float, steering: float, t: float) -> RigidTransform:
    """Exact constant-turn pose at time t for the bicycle model."""
    omega = speed * math.tan(steering) / wheelbase
    if abs(omega) < 1e-12:
        x, y, yaw = speed * t, 0.0, 0.0
    else:
        yaw = omega * t
        x = speed / omega * math.sin(yaw)
        y = speed / omega * (1.0 - math.cos(yaw))
    return RigidTransform.from_euler(EulerAngles(0.0, 0.0, yaw), (x, y, 0.0))


def simulate_trajectory(
    wheelbase: float, speed: float, steering: float, duration: float, step: float
) -> list[tuple[float, RigidTransform]]:
    """Planar ground-truth poses sampled every `step` seconds (both ends included)."""
    if speed <= 0.0 or step <= 0.0:
        raise ValueError("speed and step must be positive")
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    if abs(steering) >= math.radians(80.0):
        raise ValueError("steering angle out of range")
    n = int(round(duration / step))
    return [
        (i * step, trajectory_pose(wheelbase, speed, steering, i * step)) for i in range(n + 1)
    ]


def raycast_scan(
    lidar_world_pose: RigidTransform,
    config: LidarConfig,
    scene: Scene,
    rng,
    *,
    sensor_id: str = "",
    frame_index: int = 0,
    timestamp: float = 0.0,
) -> LidarScan:
    """Cast the sensor's ray grid against the scene and return hit points in
    the sensor frame, with per-axis Gaussian range noise. Misses are omitted."""
    rng = np.random.default_rng(rng)
    dirs_sensor = config.ray_directions()
    rot = lidar_world_pose.rotation_matrix()
    origin = lidar_world_pose.translation
    dirs_world = dirs_sensor @ rot.T

    t_hit = kernels.ray_triangle_hits(origin, dirs_world, scene.triangles())
    if scene.ground_z is not None:
        dz = dirs_world[:, 2]
        going_down = np.abs(dz) > 1e-12
        t_ground = np.where(
            going_down, (scene.ground_z - origin[2]) / np.where(going_down, dz, 1.0), np.inf
        )
        t_ground = np.where(t_ground > 1e-12, t_ground, np.inf)
        t_hit = np.minimum(t_hit, t_ground)

    hit = t_hit <= config.max_range
    points = dirs_sensor[hit] * t_hit[hit, None]
    points = points + rng.normal(scale=config.range_noise_sigma, size=points.shape)
    return LidarScan(sensor_id, frame_index, timestamp, points)


@dataclass(frozen=True)
class MeasurementStreams:
    """Timestamped noisy sensor streams over one maneuver.

    accel/gyro share the IMU timestamps and are expressed in the body frame;
    gps is (lat deg, lon deg, alt m); velocity is body-frame m/s; orientation
    is (roll, pitch, yaw) radians with yaw wrapped to (-pi, pi].
    """

    imu_times: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    gps_times: np.ndarray
    gps: np.ndarray
    velocity_times: np.ndarray
    velocity: np.ndarray
    orientation_times: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        for name in ("imu_times", "gps_times", "velocity_times", "orientation_times"):
            t = getattr(self, name)
            if len(t) > 1 and not np.all(np.diff(t) > 0):
                raise ValueError(f"{name} must be strictly increasing")

    @property
    def end_time(self) -> float:
        return float(
            min(
                self.imu_times[-1],
                self.gps_times[-1],
                self.velocity_times[-1],
                self.orientation_times[-1],
            )
        )


@dataclass(frozen=True)
class StreamNoise:
    """Per-stream additive Gaussian sigmas."""

    accel: float = 0.05
    gyro: float = 0.005
    gps_latlon_deg: float = 1.5e-7
    gps_alt: float = 0.02
    orientation: float = 0.005
    velocity: float = 0.1

    def scaled(self, factor: float) -> "StreamNoise":
        return StreamNoise(*(factor * v for v in (
            self.accel, self.gyro, self.gps_latlon_deg,
            self.gps_alt, self.orientation, self.velocity)))


def local_to_gps(position: np.ndarray) -> np.ndarray:
    """Map local-tangent-plane xyz (m) to (lat deg, lon deg, alt m)."""
    x, y, z = np.asarray(position, dtype=float).T
    lat = GPS_ORIGIN_LAT + np.degrees(y / EARTH_RADIUS)
    lon = GPS_ORIGIN_LON + np.degrees(
        x / (EARTH_RADIUS * math.cos(math.radians(GPS_ORIGIN_LAT)))
    )
    return np.stack([lat, lon, z], axis=-1)


def gps_to_local(lla: np.ndarray) -> np.ndarray:
    """Inverse of local_to_gps."""
    lat, lon, alt = np.asarray(lla, dtype=float).T
    y = np.radians(lat - GPS_ORIGIN_LAT) * EARTH_RADIUS
    x = np.radians(lon - GPS_ORIGIN_LON) * EARTH_RADIUS * math.cos(
        math.radians(GPS_ORIGIN_LAT)
    )
    return np.stack([x, y, alt], axis=-1)


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def simulate_measurements(
    trajectory: TrajectoryConfig,
    noise: StreamNoise,
    rng,
    *,
    imu_rate_hz: float = 100.0,
    gps_rate_hz: float = 10.0,
    velocity_rate_hz: float = 10.0,
    orientation_rate_hz: float = 10.0,
) -> MeasurementStreams:
    """Noisy measurement streams for the constant-turn maneuver.

    Ground truth is evaluated analytically: body-frame acceleration is the
    centripetal term (no gravity), the gyro is the constant yaw rate, and GPS
    comes from the fixed local-tangent-plane mapping.
    """
    rng = np.random.default_rng(rng)
    omega = trajectory.yaw_rate
    v = trajectory.speed

    def times(rate):
        n = int(round(trajectory.duration * rate))
        return np.arange(n + 1) / rate

    imu_t = times(imu_rate_hz)
    accel = np.tile([0.0, v * omega, 0.0], (len(imu_t), 1))
    gyro = np.tile([0.0, 0.0, omega], (len(imu_t), 1))
    accel = accel + rng.normal(scale=noise.accel, size=accel.shape)
    gyro = gyro + rng.normal(scale=noise.gyro, size=gyro.shape)

    gps_t = times(gps_rate_hz)
    positions = np.array(
        [
            trajectory_pose(trajectory.wheelbase, v, trajectory.steering, t).translation
            for t in gps_t
        ]
    )
    gps = local_to_gps(positions)
    gps[:, :2] += rng.normal(scale=noise.gps_latlon_deg, size=(len(gps_t), 2))
    gps[:, 2] += rng.normal(scale=noise.gps_alt, size=len(gps_t))

    vel_t = times(velocity_rate_hz)
    velocity = np.tile([v, 0.0, 0.0], (len(vel_t), 1))
    velocity = velocity + rng.normal(scale=noise.velocity, size=velocity.shape)

    ori_t = times(orientation_rate_hz)
    orientation = np.zeros((len(ori_t), 3))
    orientation[:, 2] = _wrap_angle(omega * ori_t)
    orientation = orientation + rng.normal(scale=noise.orientation, size=orientation.shape)

    return MeasurementStreams(
        imu_t, accel, gyro, gps_t, gps, vel_t, velocity, ori_t, orientation
    )


def inject_calibration_error(
    rng,
    translation_range: float = 0.1,
    rotation_range: float = math.radians(3.0),
) -> RigidTransform:
    """Random mount perturbation: translations i.i.d. uniform on
    [-translation_range, +translation_range] meters per axis, Euler angles
    i.i.d. uniform on [-rotation_range, +rotation_range] radians. Compose it
    onto a ground-truth mount (on the right) to obtain an erroneous mount."""
    rng = np.random.default_rng(rng)
    params = np.concatenate(
        [
            rng.uniform(-translation_range, translation_range, size=3),
            rng.uniform(-rotation_range, rotation_range, size=3),
        ]
    )
    return RigidTransform.from_params(params)
