"""Task Space Region constraints for operating prismatic and revolute doors.

A TSR is ``(t_o_w, t_w_e, bounds)``: the TSR frame in the world, the end-effector
offset in the TSR frame, and six ``[lo, hi]`` rows (x, y, z in metres; roll, pitch,
yaw in radians, ``R = Rz(yaw) Ry(pitch) Rx(roll)``). A pose is in the region when
``inv(t_o_w) @ pose @ inv(t_w_e)`` has translation and RPY inside the bounds.

Frame layout:

* prismatic: origin at the grasp projected onto the axis line; z = -e, so moving
  ``d`` along the opening direction is z = -d; x is the grasp axis least aligned
  with e, made orthogonal to z (any rotation about z describes the same set).
* revolute: origin at the centre c; x = -n, so a roll of ``-phi`` turns the door
  by ``+phi`` about n; y points from c to the grasp projected onto the circle.
  ``t_w_e`` carries the radius offset (0, r, 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, matrix_to_rpy, rpy_to_matrix


class NonpositiveTravel(ValueError):
    pass


class NonpositiveSweep(ValueError):
    pass


class RPYSingularity(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TSRSpec:
    t_o_w: Pose
    t_w_e: Pose
    bounds: np.ndarray  # (6, 2)

    def __post_init__(self):
        b = np.array(self.bounds, dtype=float).reshape(6, 2)
        if np.any(b[:, 0] > b[:, 1]):
            raise ValueError("TSR bound rows must satisfy lo <= hi")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)


def _zero_bounds() -> np.ndarray:
    return np.zeros((6, 2))


def tsr_from_prismatic(model, d: float, grasp: Pose) -> TSRSpec:
    """Allow up to ``d`` metres of travel along the prismatic axis from the grasp."""
    if not d > 0:
        raise NonpositiveTravel(f"travel must be positive, got {d}")
    z = -model.e
    origin = model.a + ((grasp.translation - model.a) @ model.e) * model.e
    cols = grasp.rotation.T
    x = cols[int(np.argmin(np.abs(cols @ z)))]
    x = x - (x @ z) * z
    x /= np.linalg.norm(x)
    rot = np.column_stack([x, np.cross(z, x), z])
    t_o_w = Pose(rot, origin)
    t_w_e = Pose(rot.T @ grasp.rotation, np.zeros(3))
    b = _zero_bounds()
    b[2] = (-d, 0.0)
    return TSRSpec(t_o_w, t_w_e, b)


def tsr_from_revolute(model, phi: float, grasp: Pose) -> TSRSpec:
    """Allow the door to turn by up to ``phi`` radians about its axis from the grasp."""
    if not phi > 0:
        raise NonpositiveSweep(f"sweep must be positive, got {phi}")
    x = -model.n
    v = grasp.translation - model.c
    v = v - (v @ model.n) * model.n
    y = v / np.linalg.norm(v)
    rot = np.column_stack([x, y, np.cross(x, y)])
    t_o_w = Pose(rot, model.c)
    t_w_e = Pose(rot.T @ grasp.rotation, [0.0, model.r, 0.0])
    b = _zero_bounds()
    b[3] = (-phi, 0.0)
    return TSRSpec(t_o_w, t_w_e, b)


def tsr_sample(spec: TSRSpec, displacement) -> Pose:
    """End-effector pose for a TSR-frame displacement ``(x, y, z, roll, pitch, yaw)``."""
    x, y, z, roll, pitch, yaw = (float(v) for v in displacement)
    step = Pose(rpy_to_matrix(roll, pitch, yaw), [x, y, z])
    return spec.t_o_w @ step @ spec.t_w_e


def tsr_displacement(spec: TSRSpec, pose: Pose) -> np.ndarray:
    """Inverse of :func:`tsr_sample`."""
    disp = spec.t_o_w.inverse() @ pose @ spec.t_w_e.inverse()
    pitch = math.asin(max(-1.0, min(1.0, -disp.rotation[2, 0])))
    if abs(abs(pitch) - math.pi / 2) < 1e-6:
        raise RPYSingularity("pitch at +-pi/2; roll and yaw are not separable")
    return np.concatenate([disp.translation, matrix_to_rpy(disp.rotation)])


def tsr_contains(spec: TSRSpec, pose: Pose, tol: float = 1e-6) -> bool:
    disp = tsr_displacement(spec, pose)
    b = spec.bounds
    return bool(np.all(disp >= b[:, 0] - tol) and np.all(disp <= b[:, 1] + tol))


def sample_uniform(spec: TSRSpec, count: int, seed: int = 0) -> list[Pose]:
    rng = np.random.default_rng(seed)
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    return [tsr_sample(spec, lo + rng.random(6) * (hi - lo)) for _ in range(count)]
