"""SE(3) rigid transforms, Euler conventions and calibration residuals.

Rotations are stored as unit quaternions in (w, x, y, z) order. Euler angles
follow the intrinsic Z-Y-X convention everywhere: yaw about z, then pitch
about the rotated y, then roll about the rotated x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EulerAngles",
    "GIMBAL_LOCK_MARGIN",
    "RigidTransform",
    "TransformResidual",
    "apply",
    "compose",
    "invert",
    "lateral_displacement",
    "residual",
]

# Pitch values closer than this to +-pi/2 are flagged as gimbal-locked.
GIMBAL_LOCK_MARGIN = 1e-3


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    norm = math.sqrt(float(q @ q))
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError("rotation quaternion must be finite and nonzero")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit (w, x, y, z) quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's branch method)."""
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return _quat_normalize(q)


@dataclass(frozen=True)
class EulerAngles:
    """Roll, pitch, yaw in radians (intrinsic Z-Y-X)."""

    roll: float
    pitch: float
    yaw: float

    def to_matrix(self) -> np.ndarray:
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        return np.array(
            [
                [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
                [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
                [-sp, cp * sr, cp * cr],
            ]
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "EulerAngles":
        sp = -m[2, 0]
        sp = min(1.0, max(-1.0, float(sp)))
        pitch = math.asin(sp)
        if abs(sp) > 1.0 - 1e-12:
            # Gimbal lock: roll and yaw share an axis; pin roll to zero.
            return cls(0.0, pitch, math.atan2(-m[0, 1], m[1, 1]))
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
        return cls(roll, pitch, yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])

    @property
    def gimbal_locked(self) -> bool:
        return abs(self.pitch) > math.pi / 2.0 - GIMBAL_LOCK_MARGIN


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose/transform: unit quaternion rotation plus translation in meters.

    Composition follows the matrix convention: ``compose(A, B)`` applies B
    first, then A.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        q = _quat_normalize(np.asarray(self.rotation, dtype=float).reshape(4))
        t = np.array(np.asarray(self.translation, dtype=float).reshape(3))
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_euler(cls, euler: EulerAngles, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(matrix_to_quat(euler.to_matrix()), np.asarray(translation, dtype=float))

    @classmethod
    def from_params(cls, params: np.ndarray) -> "RigidTransform":
        """Build from a 6-vector [x, y, z, roll, pitch, yaw]."""
        p = np.asarray(params, dtype=float).reshape(6)
        return cls.from_euler(EulerAngles(p[3], p[4], p[5]), p[:3])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def euler(self) -> EulerAngles:
        return EulerAngles.from_matrix(self.rotation_matrix())

    def params(self) -> np.ndarray:
        """6-vector [x, y, z, roll, pitch, yaw]."""
        return np.concatenate([self.translation, self.euler().as_array()])


@dataclass(frozen=True)
class TransformResidual:
    """Componentwise pose error: translation in meters, Z-Y-X angles in radians."""

    dx: float
    dy: float
    dz: float
    dphi: float
    dtheta: float
    dpsi: float
    gimbal_lock: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dphi, self.dtheta, self.dpsi])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Product a*b: apply b first, then a."""
    rotation = quat_multiply(a.rotation, b.rotation)
    translation = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return RigidTransform(rotation, translation)


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform: compose(t, invert(t)) is the identity."""
    conj = t.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return RigidTransform(conj, -(quat_to_matrix(conj) @ t.translation))


def apply(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Map points (n, 3) or (3,) through the transform: R p + t."""
    pts = np.asarray(points, dtype=float)
    return pts @ quat_to_matrix(t.rotation).T + t.translation


def residual(t_est: RigidTransform, t_gt: RigidTransform) -> TransformResidual:
    """Left-invariant error of an estimate against ground truth.

    The relative transform invert(t_gt) * t_est is decomposed into its
    translation (expressed in the ground-truth frame) and Z-Y-X Euler angles.
    """
    rel = compose(invert(t_gt), t_est)
    euler = rel.euler()
    return TransformResidual(
        rel.translation[0],
        rel.translation[1],
        rel.translation[2],
        euler.roll,
        euler.pitch,
        euler.yaw,
        gimbal_lock=euler.gimbal_locked,
    )


def lateral_displacement(yaw_error: float, range_m: float) -> float:
    """Sideways offset caused by a yaw error at the given range."""
    if range_m <= 0.0:
        raise ValueError("range must be positive")
    return range_m * math.tan(yaw_error)
