"""Target-based extrinsic calibration for multi-LiDAR rigs.

Recovers sensor-to-sensor and rotation-only sensor-to-vehicle transforms for
rigs whose sensors never share a field of view, by driving a curved maneuver
past a static target, jointly registering all target sightings into a common
frame, and minimizing a percentile-filtered pairwise consistency cost.
"""

from rigcalib.geometry import EulerAngles, RigidTransform, TransformResidual

__version__ = "0.1.0"

__all__ = ["EulerAngles", "RigidTransform", "TransformResidual", "__version__"]
