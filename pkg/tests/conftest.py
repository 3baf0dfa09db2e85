import numpy as np
import pytest

from rigcalib.geometry import RigidTransform


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_rotation_matrix(rng) -> np.ndarray:
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_transform(rng, trans_scale: float = 5.0) -> RigidTransform:
    m = np.eye(4)
    m[:3, :3] = random_rotation_matrix(rng)
    m[:3, 3] = rng.uniform(-trans_scale, trans_scale, size=3)
    return RigidTransform.from_matrix(m)
