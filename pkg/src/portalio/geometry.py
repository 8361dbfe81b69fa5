"""Rigid-body math: unit quaternions, SE(3) poses, SO(3) exp/log, slerp, TUM I/O.

Conventions used throughout the toolkit:
  - world frame is right-handed, z-up; sensor frame is x-forward, y-left, z-up
  - quaternions are stored as (w, x, y, z) and canonicalized to w >= 0 at
    serialization boundaries
  - attitude error lives on the right: R_true = R_nominal @ exp(delta_theta)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS_SMALL_ANGLE = 1e-8
_EPS_PI_BOUNDARY = 1e-7


# ---------------------------------------------------------------------------
# Batched quaternion helpers (arrays shaped (..., 4), scalar-first).
# These are the workhorses for deskewing and trajectory sampling; the Pose /
# Rotation classes below wrap single instances for readability.
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, batched over leading dimensions."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by quaternions q (..., 4)."""
    qv = q[..., 1:]
    w = q[..., 0:1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from quaternions (..., 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (yy + zz)
    m[..., 0, 1] = 2 * (xy - wz)
    m[..., 0, 2] = 2 * (xz + wy)
    m[..., 1, 0] = 2 * (xy + wz)
    m[..., 1, 1] = 1 - 2 * (xx + zz)
    m[..., 1, 2] = 2 * (yz - wx)
    m[..., 2, 0] = 2 * (xz - wy)
    m[..., 2, 1] = 2 * (yz + wx)
    m[..., 2, 2] = 1 - 2 * (xx + yy)
    return m


def quat_exp(omega: np.ndarray) -> np.ndarray:
    """SO(3) exponential map: rotation vectors (..., 3) -> quaternions (..., 4).

    Uses a Taylor fallback below the small-angle threshold so the map is
    smooth and never divides by zero.
    """
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < _EPS_SMALL_ANGLE
    # sin(theta/2)/theta with series fallback 1/2 - theta^2/48
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    w = np.where(small[..., 0], 1.0 - half[..., 0] ** 2 / 2.0, np.cos(half[..., 0]))
    q = np.concatenate([w[..., None], k * omega], axis=-1)
    return quat_normalize(q)


def quat_log(q: np.ndarray) -> np.ndarray:
    """SO(3) logarithm: quaternions (..., 4) -> rotation vectors (..., 3).

    The angle is always taken in [0, pi] (sign of w folded into the axis).
    At the pi boundary the returned axis is a valid choice; callers that
    need to detect the boundary should use `so3_log(..., return_flag=True)`.
    """
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    vec = q[..., 1:].copy()
    neg = w < 0.0
    vec[neg] = -vec[neg]
    w = np.abs(w)
    s = np.linalg.norm(vec, axis=-1)
    theta = 2.0 * np.arctan2(s, w)
    small = s < _EPS_SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0 / np.maximum(w, 0.5), theta / np.where(small, 1.0, s))
    return scale[..., None] * vec


def quat_slerp(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Shortest-arc spherical interpolation, batched; u in [0, 1]."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        w0 = np.where(near, 1.0 - u, np.sin((1.0 - u) * theta) / np.where(near, 1.0, sin_theta))
        w1 = np.where(near, u, np.sin(u * theta) / np.where(near, 1.0, sin_theta))
    return quat_normalize(w0 * q0 + w1 * q1)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices (..., 3, 3) for vectors (..., 3)."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3) at rotation vector omega (3,)."""
    theta = float(np.linalg.norm(omega))
    if theta < _EPS_SMALL_ANGLE:
        return np.eye(3) - 0.5 * skew(omega)
    k = skew(omega)
    t2 = theta * theta
    return (
        np.eye(3)
        - (1.0 - math.cos(theta)) / t2 * k
        + (theta - math.sin(theta)) / (t2 * theta) * (k @ k)
    )


# ---------------------------------------------------------------------------
# Scalar-friendly wrappers
# ---------------------------------------------------------------------------

class Rotation:
    """A single SO(3) rotation backed by a unit quaternion (w, x, y, z)."""

    __slots__ = ("q", "_matrix")

    def __init__(self, q: np.ndarray, *, _normalized: bool = False):
        q = np.asarray(q, dtype=float).reshape(4)
        if not _normalized:
            n = float(np.linalg.norm(q))
            if not math.isfinite(n) or n < 1e-12:
                raise ValueError("quaternion must be finite and non-zero")
            q = q / n
        self.q = q
        self._matrix = None

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]), _normalized=True)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=float)
        # Shepperd's method, numerically stable for all quadrants
        tr = np.trace(m)
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
            )
        else:
            i = int(np.argmax(np.diag(m)))
            if i == 0:
                s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
                q = np.array(
                    [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
                )
            elif i == 1:
                s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
                q = np.array(
                    [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
                )
            else:
                s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
                q = np.array(
                    [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
                )
        return Rotation(q)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = quat_to_matrix(self.q)
        return self._matrix

    def canonical_quat(self) -> np.ndarray:
        """Quaternion with w >= 0 (double cover resolved for serialization)."""
        return -self.q if self.q[0] < 0.0 else self.q.copy()

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.matrix @ points
        return points @ self.matrix.T

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_mul(self.q, other.q))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conj(self.q), _normalized=True)

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians between two rotations."""
        return float(np.linalg.norm(quat_log(quat_mul(quat_conj(self.q), other.q))))

    def __repr__(self) -> str:
        w, x, y, z = self.q
        return f"Rotation(w={w:.6f}, x={x:.6f}, y={y:.6f}, z={z:.6f})"


def so3_exp(omega: np.ndarray) -> Rotation:
    """Rotation from a rotation vector (axis * angle, radians)."""
    return Rotation(quat_exp(np.asarray(omega, dtype=float).reshape(3)), _normalized=True)


def so3_log(rot: Rotation, return_flag: bool = False):
    """Rotation vector of `rot`; angle in [0, pi].

    At the pi boundary the axis sign is ambiguous; a valid axis is returned
    and, with `return_flag=True`, the boundary condition is reported instead
    of producing NaNs.
    """
    vec = quat_log(rot.q)
    if not return_flag:
        return vec
    at_boundary = float(np.linalg.norm(vec)) > math.pi - _EPS_PI_BOUNDARY
    return vec, at_boundary


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world_point = rotation.apply(p) + translation."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Returns self o other: apply `other` first, then `self`."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        t = self.translation
        return f"Pose(t=[{t[0]:.4f}, {t[1]:.4f}, {t[2]:.4f}], {self.rotation!r})"


def compose(a: Pose, b: Pose) -> Pose:
    """Pose composition; the result applies b first, then a."""
    return a.compose(b)


def interpolate(p0: Pose, t0: float, p1: Pose, t1: float, t: float) -> Pose:
    """Pose at time t between (p0, t0) and (p1, t1).

    Translation interpolates linearly, rotation by shortest-arc slerp.
    """
    if not (t0 <= t <= t1) or not (t0 < t1):
        raise ValueError(f"interpolation time {t} outside [{t0}, {t1}]")
    u = (t - t0) / (t1 - t0)
    trans = (1.0 - u) * p0.translation + u * p1.translation
    q = quat_slerp(p0.rotation.q, p1.rotation.q, np.array(u))
    return Pose(Rotation(q, _normalized=True), trans)


# ---------------------------------------------------------------------------
# TUM trajectory format: `timestamp tx ty tz qx qy qz qw`, 9 significant digits
# ---------------------------------------------------------------------------

def format_tum_line(t: float, pose: Pose) -> str:
    q = pose.rotation.canonical_quat()
    tx, ty, tz = pose.translation
    vals = (t, tx, ty, tz, q[1], q[2], q[3], q[0])
    return " ".join(f"{v:.9g}" for v in vals)


def write_tum(path, times, poses) -> None:
    with open(path, "w", encoding="ascii") as f:
        for t, pose in zip(times, poses):
            f.write(format_tum_line(float(t), pose))
            f.write("\n")


def read_tum(path):
    """Returns (times (N,), poses list[Pose]); skips comments and blank lines."""
    times = []
    poses = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError(f"malformed TUM line: {line!r}")
            t, tx, ty, tz, qx, qy, qz, qw = vals
            times.append(t)
            poses.append(Pose(Rotation(np.array([qw, qx, qy, qz])), np.array([tx, ty, tz])))
    return np.asarray(times), poses
