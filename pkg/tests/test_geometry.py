"""Transform algebra against independent 4x4 homogeneous-matrix oracles."""

import math

import numpy as np
import pytest

from rigcalib.geometry import (
    EulerAngles,
    RigidTransform,
    apply,
    compose,
    invert,
    lateral_displacement,
    residual,
)

from conftest import random_transform


def euler_matrix_oracle(roll, pitch, yaw):
    """Z-Y-X rotation built from explicit single-axis factors."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def euler_from_matrix_oracle(m):
    pitch = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return np.array([roll, pitch, yaw])


def rz(angle):
    return RigidTransform.from_euler(EulerAngles(0.0, 0.0, angle))


def test_compose_identity():
    t = random_transform(np.random.default_rng(1))
    out = compose(RigidTransform.identity(), t)
    assert np.allclose(out.as_matrix(), t.as_matrix(), atol=1e-12)


def test_compose_half_turns():
    out = compose(rz(math.pi / 2), rz(math.pi / 2))
    assert np.allclose(out.as_matrix(), rz(math.pi).as_matrix(), atol=1e-12)


def test_compose_matches_matrix_oracle(rng):
    for _ in range(50):
        a = random_transform(rng)
        b = random_transform(rng)
        expected = a.as_matrix() @ b.as_matrix()
        assert np.allclose(compose(a, b).as_matrix(), expected, atol=1e-12)


def test_invert_identity():
    out = invert(RigidTransform.identity())
    assert np.allclose(out.as_matrix(), np.eye(4), atol=1e-12)


def test_invert_pure_translation():
    t = RigidTransform(np.array([1.0, 0, 0, 0]), np.array([1.0, 2.0, 3.0]))
    assert np.allclose(invert(t).translation, [-1.0, -2.0, -3.0], atol=1e-12)


def test_invert_matches_matrix_oracle(rng):
    for _ in range(50):
        t = random_transform(rng)
        assert np.allclose(invert(t).as_matrix(), np.linalg.inv(t.as_matrix()), atol=1e-12)


def test_compose_invert_is_identity(rng):
    for _ in range(100):
        t = random_transform(rng)
        out = compose(t, invert(t))
        assert np.allclose(out.as_matrix(), np.eye(4), atol=1e-9)
        assert abs(out.rotation @ out.rotation - 1.0) < 1e-9


def test_apply_identity(rng):
    pts = rng.normal(size=(20, 3))
    assert np.allclose(apply(RigidTransform.identity(), pts), pts, atol=1e-12)


def test_apply_quarter_turn():
    out = apply(rz(math.pi / 2), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, [0.0, 1.0, 0.0], atol=1e-12)


def test_apply_preserves_pairwise_distances(rng):
    pts = rng.normal(size=(30, 3)) * 4.0
    t = random_transform(rng)
    moved = apply(t, pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
    assert np.allclose(d0, d1, atol=1e-9)


def test_residual_of_self_is_zero(rng):
    t = random_transform(rng)
    assert np.all(np.abs(residual(t, t).as_array()) < 1e-12)


def test_residual_pure_yaw_offset(rng):
    gt = random_transform(rng)
    one_degree = math.radians(1.0)
    est = compose(gt, rz(one_degree))
    res = residual(est, gt)
    assert abs(res.dpsi - one_degree) < 1e-9
    assert np.all(np.abs([res.dx, res.dy, res.dz, res.dphi, res.dtheta]) < 1e-9)


def test_residual_matches_relative_matrix_oracle(rng):
    for _ in range(50):
        est = random_transform(rng)
        gt = random_transform(rng)
        rel = np.linalg.inv(gt.as_matrix()) @ est.as_matrix()
        res = residual(est, gt)
        if res.gimbal_lock:
            continue
        assert np.allclose(res.as_array()[:3], rel[:3, 3], atol=1e-9)
        assert np.allclose(res.as_array()[3:], euler_from_matrix_oracle(rel[:3, :3]), atol=1e-9)


def test_residual_flags_gimbal_lock():
    gt = RigidTransform.identity()
    est = RigidTransform.from_euler(EulerAngles(0.0, math.pi / 2 - 1e-5, 0.0))
    assert residual(est, gt).gimbal_lock


def test_lateral_displacement():
    assert lateral_displacement(0.0, 100.0) == 0.0
    assert abs(lateral_displacement(math.radians(1.0), 100.0) - 1.745) < 5e-3
    assert abs(lateral_displacement(0.0083, 100.0) - 0.830) < 5e-4
    with pytest.raises(ValueError):
        lateral_displacement(0.1, 0.0)


def test_composition_associativity(rng):
    for _ in range(1000):
        a, b, c = (random_transform(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert np.allclose(left.as_matrix(), right.as_matrix(), atol=1e-9)


def test_euler_round_trip(rng):
    for _ in range(1000):
        roll, yaw = rng.uniform(-math.pi, math.pi, size=2)
        pitch = rng.uniform(-(math.pi / 2 - 1e-3), math.pi / 2 - 1e-3)
        e = EulerAngles(roll, pitch, yaw)
        m = e.to_matrix()
        assert np.allclose(m, euler_matrix_oracle(roll, pitch, yaw), atol=1e-12)
        back = EulerAngles.from_matrix(m)
        assert np.allclose(back.as_array(), [roll, pitch, yaw], atol=1e-9)


def test_residual_zero_iff_equal(rng):
    for _ in range(1000):
        t = random_transform(rng)
        assert np.all(np.abs(residual(t, t).as_array()) < 1e-12)
        other = random_transform(rng)
        if np.allclose(other.as_matrix(), t.as_matrix(), atol=1e-9):
            continue
        assert np.linalg.norm(residual(other, t).as_array()) > 1e-9


def test_quaternion_norm_after_long_chain(rng):
    t = RigidTransform.identity()
    for _ in range(500):
        t = compose(t, random_transform(rng))
        assert abs(t.rotation @ t.rotation - 1.0) < 1e-9


def test_mount_pose_convention():
    # A sensor pitched -10 deg then yawed 180 deg must reproduce both factors.
    e = EulerAngles(0.0, math.radians(-10.0), math.pi)
    m = e.to_matrix()
    oracle = euler_matrix_oracle(0.0, math.radians(-10.0), math.pi)
    assert np.allclose(m, oracle, atol=1e-12)
    back = EulerAngles.from_matrix(m)
    assert abs(back.pitch - math.radians(-10.0)) < 1e-9
    assert abs(abs(back.yaw) - math.pi) < 1e-9
