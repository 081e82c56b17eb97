"""Rigid transforms and the handle/grasp frame constructions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


class ParseError(ValueError):
    """Malformed input file; carries the offending path and 1-based line number."""

    def __init__(self, msg: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.path = path
        self.line = line


class DegenerateNormal(ValueError):
    """Door normal (anti)parallel to world z; no horizontal axis is defined."""


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): ``p_world = rotation @ p_local + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    # quaternion this pose was parsed from, kept so text round-trips exactly
    _quat: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, t, q) -> Pose:
        """Build from translation and scalar-last quaternion ``(qx, qy, qz, qw)``."""
        q = np.array([float(v) for v in q])
        rot = Rotation.from_quat(q).as_matrix()
        if q[3] < 0:
            q = -q
        # cache only unit input, so the cached text form is canonical
        cached = tuple(q) if abs(np.linalg.norm(q) - 1.0) <= 1e-12 else None
        return cls(rot, t, _quat=cached)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> Pose:
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion(self) -> np.ndarray:
        """Unit quaternion, scalar-last, with ``qw >= 0``."""
        if self._quat is not None:
            return np.array(self._quat)
        q = Rotation.from_matrix(self.rotation).as_quat()
        if q[3] < 0:
            q = -q
        return q

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Map local points (``(3,)`` or ``(n, 3)``) into the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_line(self) -> str:
        vals = list(self.translation) + list(self.quaternion())
        return " ".join(repr(float(v)) for v in vals)

    @classmethod
    def from_line(cls, line: str) -> Pose:
        vals = [float(v) for v in line.split()]
        if len(vals) != 7:
            raise ValueError(f"expected 7 numbers, got {len(vals)}")
        return cls.from_quaternion(vals[:3], vals[3:])


def compose(t1: Pose, t2: Pose) -> Pose:
    """``t1 @ t2``: apply ``t2`` expressed in the frame of ``t1``."""
    return Pose(t1.rotation @ t2.rotation, t1.rotation @ t2.translation + t1.translation)


def rotation_angle(rot: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in ``[0, pi]``."""
    # arccos loses precision near 0 and pi; atan2 of (|skew|, trace) does not
    skew = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(skew), 0.5 * (np.trace(rot) - 1.0)))


def pose_distance(p1: Pose, p2: Pose) -> tuple[float, float]:
    """Return ``(translation distance [m], rotation angle [rad])``."""
    dt = float(np.linalg.norm(p1.translation - p2.translation))
    return dt, rotation_angle(p1.rotation.T @ p2.rotation)


def handle_transform(a, origin) -> Pose:
    """Handle frame from the unit door normal ``a`` and handle centroid ``origin``.

    The rotation is ``[a | u | a x u]`` with ``u = (a_y, -a_x, 0) / sqrt(a_x^2 + a_y^2)``,
    i.e. x along the door normal and y horizontal. At ``a = (1, 0, 0)`` this gives
    columns ``(1,0,0), (0,-1,0), (0,0,-1)``.
    """
    a = np.asarray(a, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise ValueError(f"door normal must be unit length, |a| = {np.linalg.norm(a):.6g}")
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        # tolerated input slack would otherwise leak into the rotation
        a = a / np.linalg.norm(a)
    h2 = a[0] ** 2 + a[1] ** 2
    if h2 < 1e-9:
        raise DegenerateNormal("door normal is vertical")
    u = np.array([a[1], -a[0], 0.0]) / np.sqrt(h2)
    rot = np.column_stack([a, u, np.cross(a, u)])
    return Pose(rot, origin)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def matrix_to_rpy(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rpy_to_matrix` away from ``pitch = +-pi/2``."""
    pitch = float(np.arctan2(-rot[2, 0], np.hypot(rot[0, 0], rot[1, 0])))
    roll = float(np.arctan2(rot[2, 1], rot[2, 2]))
    yaw = float(np.arctan2(rot[1, 0], rot[0, 0]))
    return roll, pitch, yaw


def is_rotation(rot: np.ndarray, tol: float = 1e-9) -> bool:
    rot = np.asarray(rot)
    ortho = np.max(np.abs(rot.T @ rot - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(rot) - 1.0) < tol)
