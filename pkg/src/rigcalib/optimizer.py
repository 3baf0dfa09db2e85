"""Two-stage extrinsic calibration on top of the joint registration.

For a candidate pair of extrinsics, every (frame, sensor) sighting yields an
independent estimate of the fixed reference-to-calibration transform; the
cost is the percentile-filtered sum of squared distances between the target
box corners under all pairs of those estimates. Powell's conjugate direction
method minimizes it: first over both extrinsics jointly (the sensor-to-sensor
stage), then over the reference sensor's mount rotation alone with the
sensor-to-sensor result held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import fmin_powell

from rigcalib.geometry import (
    RigidTransform,
    TransformResidual,
    compose,
    invert,
    residual,
)
from rigcalib.registration import RegistrationResult
from rigcalib.ukf import VehiclePoseTrack

__all__ = [
    "CalibrationEstimate",
    "CalibrationProblem",
    "CostTrace",
    "UnknownPairError",
    "calib_from_reference",
    "calibrate_s2s",
    "calibrate_s2v",
    "filtered_cost",
    "pairwise_error",
    "percentile_filter",
    "powell_minimize",
    "s2s_residual",
]


class UnknownPairError(KeyError):
    """Requested (frame, sensor) pair has no registration transform."""


def wrap_angles(params: np.ndarray) -> np.ndarray:
    """Wrap the Euler half of a 6-parameter vector into (-pi, pi]."""
    out = np.asarray(params, dtype=float).copy()
    out[3:] = -((-out[3:] + math.pi) % (2.0 * math.pi) - math.pi)
    return out


@dataclass(frozen=True)
class CalibrationEstimate:
    """Candidate extrinsics: the reference sensor's mount and the transform
    from the other sensor into the reference sensor's frame."""

    vehicle_from_ref: RigidTransform
    ref_from_other: RigidTransform


@dataclass(frozen=True)
class CalibrationProblem:
    """Everything the cost function consumes, immutable during optimization."""

    registration: RegistrationResult
    track: VehiclePoseTrack
    initial_mounts: dict[str, RigidTransform]
    reference_sensor: str

    def __post_init__(self) -> None:
        keys = self.registration.members
        if len(keys) < 2:
            raise ValueError("need at least 2 registered sightings")
        sensors = {sensor for _, sensor in keys}
        if not sensors <= set(self.initial_mounts):
            raise ValueError("sightings reference sensors without initial mounts")
        if self.reference_sensor not in self.initial_mounts:
            raise ValueError(f"unknown reference sensor {self.reference_sensor!r}")
        if not sensors - {self.reference_sensor} or self.reference_sensor not in sensors:
            raise ValueError("sightings must cover the reference and another sensor")
        if self.registration.obb.shape != (8, 3):
            raise ValueError("registration must provide exactly 8 box corners")

    @property
    def other_sensor(self) -> str:
        others = sorted({s for _, s in self.registration.members} - {self.reference_sensor})
        return others[0]

    @cached_property
    def initial_estimate(self) -> CalibrationEstimate:
        ref = self.initial_mounts[self.reference_sensor]
        other = self.initial_mounts[self.other_sensor]
        return CalibrationEstimate(ref, compose(invert(ref), other))

    @cached_property
    def _tensors(self):
        """Stacked per-sighting matrices for vectorized cost evaluation."""
        keys = self.registration.members
        calib = np.stack(
            [self.registration.calib_from_sensor[k].as_matrix() for k in keys]
        )
        pose_inv = np.stack(
            [invert(self._pose_by_frame(frame)).as_matrix() for frame, _ in keys]
        )
        is_ref = np.array([sensor == self.reference_sensor for _, sensor in keys])
        return keys, calib, pose_inv, is_ref

    def _pose_by_frame(self, frame: int) -> RigidTransform:
        if not 0 <= frame < len(self.track.poses):
            raise UnknownPairError(f"no vehicle pose for frame {frame}")
        return self.track.poses[frame]


def calib_from_reference(
    problem: CalibrationProblem,
    estimate: CalibrationEstimate,
    frame: int,
    sensor: str,
) -> RigidTransform:
    """Per-sighting estimate of the reference-to-calibration transform under
    the candidate extrinsics."""
    key = (frame, sensor)
    if key not in problem.registration.calib_from_sensor:
        raise UnknownPairError(f"no registration for {key}")
    if sensor == problem.reference_sensor:
        s2v = estimate.vehicle_from_ref
    else:
        s2v = compose(estimate.vehicle_from_ref, estimate.ref_from_other)
    pose = problem._pose_by_frame(frame)
    return compose(
        problem.registration.calib_from_sensor[key],
        compose(invert(s2v), invert(pose)),
    )


def pairwise_error(t1: RigidTransform, t2: RigidTransform, obb: np.ndarray) -> float:
    """Sum of squared distances between corresponding box corners mapped
    through the two inverted transforms."""
    p1 = np.asarray(obb) @ invert(t1).rotation_matrix().T + invert(t1).translation
    p2 = np.asarray(obb) @ invert(t2).rotation_matrix().T + invert(t2).translation
    return float(np.sum((p1 - p2) ** 2))


def percentile_filter(errors, k: float) -> np.ndarray:
    """Keep values between the k-th and (100-k)-th percentiles (linear
    interpolation); k = 0 passes everything through."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("empty error list")
    if not 0.0 <= k < 50.0:
        raise ValueError("k must be in [0, 50)")
    if k == 0.0:
        return errors.copy()
    lo = np.percentile(errors, k)
    hi = np.percentile(errors, 100.0 - k)
    return errors[(errors >= lo) & (errors <= hi)]


def _candidate_matrices(problem: CalibrationProblem, estimate: CalibrationEstimate):
    ref_inv = invert(estimate.vehicle_from_ref).as_matrix()
    other_inv = invert(
        compose(estimate.vehicle_from_ref, estimate.ref_from_other)
    ).as_matrix()
    return ref_inv, other_inv


def _pair_errors(problem: CalibrationProblem, estimate: CalibrationEstimate) -> np.ndarray:
    """Upper-triangle pairwise corner errors over all registered sightings."""
    keys, calib, pose_inv, is_ref = problem._tensors
    ref_inv, other_inv = _candidate_matrices(problem, estimate)
    s2v_inv = np.where(is_ref[:, None, None], ref_inv, other_inv)
    est = calib @ s2v_inv @ pose_inv
    rot_inv = est[:, :3, :3].transpose(0, 2, 1)
    t_inv = -np.einsum("nij,nj->ni", rot_inv, est[:, :3, 3])
    corners = np.einsum("nij,kj->nki", rot_inv, problem.registration.obb) + t_inv[:, None, :]
    flat = corners.reshape(len(keys), -1)
    sq = np.einsum("ni,ni->n", flat, flat)
    gram = flat @ flat.T
    dist = sq[:, None] + sq[None, :] - 2.0 * gram
    iu = np.triu_indices(len(keys), k=1)
    return np.maximum(dist[iu], 0.0)


def filtered_cost(
    problem: CalibrationProblem, estimate: CalibrationEstimate, k: float = 10.0
) -> float:
    """Percentile-filtered sum of pairwise corner errors for a candidate."""
    survivors = percentile_filter(_pair_errors(problem, estimate), k)
    return float(survivors.sum())


@dataclass
class CostTrace:
    """Per-evaluation costs and per-iteration iterates of one Powell run."""

    evaluations: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    survivor_counts: list = field(default_factory=list)
    converged: bool = True
    final_cost: float = math.nan

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.evaluations))


def powell_minimize(
    fn,
    x0: np.ndarray,
    xtol: float = 1e-6,
    ftol: float = 1e-8,
    max_iters: int = 200,
) -> tuple[np.ndarray, CostTrace]:
    """Powell's conjugate direction search (derivative-free) with trace."""
    trace = CostTrace()

    def wrapped(x):
        value = float(fn(x))
        trace.evaluations.append(value)
        return value

    xopt, fopt, _, _, _, warnflag, allvecs = fmin_powell(
        wrapped,
        np.asarray(x0, dtype=float),
        xtol=xtol,
        ftol=ftol,
        maxiter=max_iters,
        maxfun=max_iters * 600,
        full_output=True,
        disp=False,
        retall=True,
    )
    trace.iterates = [np.asarray(v, dtype=float) for v in allvecs]
    trace.converged = warnflag == 0
    trace.final_cost = float(fopt)
    return np.atleast_1d(np.asarray(xopt, dtype=float)), trace


def calibrate_s2s(
    problem: CalibrationProblem,
    k: float = 10.0,
    xtol: float = 1e-6,
    ftol: float = 1e-8,
    max_iters: int = 200,
) -> tuple[RigidTransform, CostTrace]:
    """First stage: optimize both extrinsics jointly over 12 parameters and
    keep the sensor-to-sensor component."""
    base_ref = wrap_angles(problem.initial_estimate.vehicle_from_ref.params())
    base_s2s = wrap_angles(problem.initial_estimate.ref_from_other.params())

    def build(x):
        return CalibrationEstimate(
            RigidTransform.from_params(wrap_angles(base_ref + x[:6])),
            RigidTransform.from_params(wrap_angles(base_s2s + x[6:])),
        )

    trace_holder = CostTrace()

    def cost(x):
        estimate = build(x)
        survivors = percentile_filter(_pair_errors(problem, estimate), k)
        trace_holder.survivor_counts.append(int(survivors.size))
        return float(survivors.sum())

    xopt, trace = powell_minimize(cost, np.zeros(12), xtol, ftol, max_iters)
    trace.survivor_counts = trace_holder.survivor_counts
    return build(xopt).ref_from_other, trace


def calibrate_s2v(
    problem: CalibrationProblem,
    ref_from_other: RigidTransform,
    k: float = 10.0,
    xtol: float = 1e-6,
    ftol: float = 1e-8,
    max_iters: int = 200,
    pin_translation: bool = True,
) -> tuple[RigidTransform, RigidTransform, CostTrace]:
    """Second stage: with the sensor-to-sensor result fixed, optimize the
    reference mount. Translation stays pinned at the initial guess (planar
    motion cannot observe it); rotation-only is the supported mode, the
    unpinned variant exists to demonstrate the x/yaw ambiguity."""
    base_ref = wrap_angles(problem.initial_estimate.vehicle_from_ref.params())
    n_params = 6 if not pin_translation else 3

    def build(x):
        delta = np.zeros(6)
        if pin_translation:
            delta[3:] = x
        else:
            delta[:] = x
        return CalibrationEstimate(
            RigidTransform.from_params(wrap_angles(base_ref + delta)), ref_from_other
        )

    trace_holder = CostTrace()

    def cost(x):
        survivors = percentile_filter(_pair_errors(problem, build(x)), k)
        trace_holder.survivor_counts.append(int(survivors.size))
        return float(survivors.sum())

    xopt, trace = powell_minimize(cost, np.zeros(n_params), xtol, ftol, max_iters)
    trace.survivor_counts = trace_holder.survivor_counts
    vehicle_from_ref = build(xopt).vehicle_from_ref
    vehicle_from_other = compose(vehicle_from_ref, ref_from_other)
    return vehicle_from_ref, vehicle_from_other, trace


def s2s_residual(
    vehicle_from_other_opt: RigidTransform,
    vehicle_from_ref_opt: RigidTransform,
    ref_from_other_true: RigidTransform,
) -> TransformResidual:
    """Sensor-to-sensor error isolated from the shared mount error: compare
    the optimized other-sensor mount against the optimized reference mount
    chained with the true sensor-to-sensor transform."""
    return residual(
        vehicle_from_other_opt, compose(vehicle_from_ref_opt, ref_from_other_true)
    )
