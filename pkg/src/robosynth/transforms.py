"""Rigid-transform math: quaternions, poses, axis-aligned boxes.

Conventions used throughout the package:

- world frame is right-handed, Z-up, lengths in meters
- quaternions are stored ``(w, x, y, z)`` and kept unit length
- a :class:`Pose` maps points from its own frame into the parent frame
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AABB",
    "Pose",
    "compose",
    "invert",
    "quat_conjugate",
    "quat_from_axis_angle",
    "quat_identity",
    "quat_mul",
    "quat_normalize",
    "quat_rotate",
    "quat_slerp",
    "quat_to_matrix",
]


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a}")
    return a


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize zero quaternion")
    if abs(n - 1.0) < 1e-12:  # keep normalization idempotent at the ulp level
        return q
    return q / n


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a*b (apply b first, then a, when rotating vectors)."""
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _vec3(axis)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("zero rotation axis")
    half = 0.5 * float(angle)
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = axis / n * np.sin(half)
    return q


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix for a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def quat_from_matrix(m) -> np.ndarray:
    """Unit quaternion for a proper rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate a single vector by a unit quaternion."""
    w, ux, uy, uz = q
    vx, vy, vz = v
    # v' = v + 2w (u x v) + 2 u x (u x v), crosses unrolled (hot path)
    cx = uy * vz - uz * vy
    cy = uz * vx - ux * vz
    cz = ux * vy - uy * vx
    dx = uy * cz - uz * cy
    dy = uz * cx - ux * cz
    dz = ux * cy - uy * cx
    return np.array([vx + 2.0 * (w * cx + dx), vy + 2.0 * (w * cy + dy), vz + 2.0 * (w * cz + dz)])


def quat_slerp(q0, q1, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation; antipodal q1 is sign-flipped."""
    q0 = np.asarray(q0, dtype=np.float64).copy()
    q1 = np.asarray(q1, dtype=np.float64).copy()
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-10:
        # nearly parallel: nlerp is numerically safer
        return quat_normalize(q0 + t * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1)


@dataclass
class Pose:
    """Rigid placement: translation plus unit-quaternion rotation."""

    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        self.pos = _vec3(self.pos)
        self.quat = quat_normalize(self.quat)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def _raw(cls, pos: np.ndarray, quat: np.ndarray) -> "Pose":
        """Trusted fast path: skip validation for already-clean arrays."""
        p = object.__new__(cls)
        p.pos = pos
        p.quat = quat
        return p

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(pos=np.array([x, y, z], dtype=np.float64))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, pos=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(pos=np.asarray(pos, dtype=np.float64), quat=quat_from_axis_angle(axis, angle))

    def apply(self, points) -> np.ndarray:
        """Map local points (3,) or (N, 3) into the parent frame."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return quat_rotate(self.quat, pts) + self.pos
        return pts @ quat_to_matrix(self.quat).T + self.pos

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.quat, v)

    def copy(self) -> "Pose":
        return Pose._raw(self.pos.copy(), self.quat.copy())

    def to_dict(self) -> dict:
        return {"pos": [float(c) for c in self.pos], "quat": [float(c) for c in self.quat]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(pos=np.asarray(d.get("pos", [0, 0, 0]), dtype=np.float64),
                   quat=np.asarray(d.get("quat", [1, 0, 0, 0]), dtype=np.float64))

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        if np.max(np.abs(self.pos - other.pos)) > tol:
            return False
        # q and -q are the same rotation
        return (
            np.max(np.abs(self.quat - other.quat)) <= tol
            or np.max(np.abs(self.quat + other.quat)) <= tol
        )

    def __repr__(self):
        p = ", ".join(f"{c:.4g}" for c in self.pos)
        q = ", ".join(f"{c:.4g}" for c in self.quat)
        return f"Pose(pos=[{p}], quat=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    """a∘b: apply b first, then a; rotation re-normalized."""
    q = quat_mul(a.quat, b.quat)
    q /= np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return Pose._raw(a.pos + quat_rotate(a.quat, b.pos), q)


def invert(p: Pose) -> Pose:
    qc = quat_conjugate(p.quat)
    return Pose._raw(-quat_rotate(qc, p.pos), qc)


@dataclass
class AABB:
    """Axis-aligned box, min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = _vec3(self.min)
        self.max = _vec3(self.max)
        if np.any(self.min > self.max):
            raise ValueError(f"AABB min {self.min} exceeds max {self.max}")

    def contains_point(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def overlaps(self, other: "AABB") -> bool:
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))

    def to_dict(self) -> dict:
        return {"min": [float(c) for c in self.min], "max": [float(c) for c in self.max]}

    @classmethod
    def from_dict(cls, d: dict) -> "AABB":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))
