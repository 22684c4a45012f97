"""Rigid poses, pinhole cameras and SE(3) interpolation across an exposure.

Poses are camera-to-world: ``X_world = R @ X_cam + t``.  Camera axes follow
the image convention (x right, y down, z forward).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

SMALL_ANGLE = 1e-6
SERIES_ANGLE2 = 1e-4      # squared angle below which trigonometric ratios use series


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True)
class Twist:
    """se(3) element: rotation part ``omega`` (axis-angle) and translation part ``v``."""

    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64)
        return cls(xi[:3], xi[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])

    def __mul__(self, s: float) -> "Twist":
        return Twist(self.omega * s, self.v * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        """Accepts a 3x4 or 4x4 matrix, or a flat row-major 12-vector."""
        m = np.asarray(m, dtype=np.float64)
        if m.size == 12:
            m = m.reshape(3, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def as_3x4(self) -> np.ndarray:
        return self.matrix()[:3]

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))


def rotation_angle(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    s = np.linalg.norm(vee(r - r.T)) / 2.0
    return float(np.arctan2(s, c))


def _series(theta2: float):
    """(sin t)/t, (1-cos t)/t^2, (t-sin t)/t^3 as functions of t^2.

    Below ``SERIES_ANGLE2`` the closed forms lose digits to cancellation, so
    Taylor polynomials (truncation error < 1e-20) take over.
    """
    if theta2 < SERIES_ANGLE2:
        t4 = theta2 * theta2
        a = 1.0 - theta2 / 6.0 + t4 / 120.0 - t4 * theta2 / 5040.0
        b = 0.5 - theta2 / 24.0 + t4 / 720.0 - t4 * theta2 / 40320.0
        c = 1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0 - t4 * theta2 / 362880.0
        return a, b, c
    theta = np.sqrt(theta2)
    s, co = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta)


def so3_exp(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    k = skew(omega)
    a, b, _ = _series(float(omega @ omega))
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of ``r``; raises for a rotation of exactly pi."""
    r = np.asarray(r, dtype=np.float64)
    c = (np.trace(r) - 1.0) / 2.0
    axis_s = vee(r - r.T) / 2.0          # sin(theta) * axis
    s = np.linalg.norm(axis_s)
    theta = np.arctan2(s, c)
    if np.pi - theta < 1e-9:
        raise ValueError("log branch undefined: rotation angle is pi")
    if theta < SMALL_ANGLE:
        return axis_s * (1.0 + theta * theta / 6.0)
    if c > -0.8:
        return axis_s * (theta / s)
    # near pi the antisymmetric part is small; read the axis off the symmetric part
    sym = (r + r.T) / 2.0 - c * np.eye(3)
    col = int(np.argmax(np.diag(sym)))
    axis = sym[:, col] / np.sqrt(sym[col, col] * (1.0 - c))
    if axis @ axis_s < 0:
        axis = -axis
    return axis / np.linalg.norm(axis) * theta


def se3_exp(xi: Twist) -> Pose:
    omega, v = xi.omega, xi.v
    k = skew(omega)
    a, b, c = _series(float(omega @ omega))
    kk = k @ k
    rot = np.eye(3) + a * k + b * kk
    jac = np.eye(3) + b * k + c * kk
    return Pose(rot, jac @ v)


def se3_log(p: Pose) -> Twist:
    omega = so3_log(p.rotation)
    theta2 = float(omega @ omega)
    k = skew(omega)
    if theta2 < SERIES_ANGLE2:
        coef = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    else:
        a, b, _ = _series(theta2)
        coef = (1.0 - a / (2.0 * b)) / theta2
    jac_inv = np.eye(3) - 0.5 * k + coef * (k @ k)
    return Twist(omega, jac_inv @ p.translation)


def interpolate_fraction(p_start: Pose, p_end: Pose, s: float) -> Pose:
    """Point at fraction ``s`` of the geodesic from ``p_start`` to ``p_end``."""
    if s == 0.0:
        return p_start
    if s == 1.0:
        return p_end
    rel = se3_log(p_start.inverse() @ p_end)
    return p_start @ se3_exp(rel * s)


def interpolate_pose(p_start: Pose, p_end: Pose, l: int, n: int) -> Pose:
    """Pose of timestamp ``l`` (1-based) out of ``n`` spanning the exposure."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= l <= n:
        raise IndexError(f"timestamp {l} outside 1..{n}")
    if n == 1:
        return p_start
    return interpolate_fraction(p_start, p_end, (l - 1) / (n - 1))


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")

    @classmethod
    def centered(cls, width: int, height: int, focal: float, near: float, far: float) -> "Camera":
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height, near, far)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height", "near", "far")}

    def local_directions(self, rows, cols) -> np.ndarray:
        """Unnormalised camera-frame directions for pixel coordinates."""
        rows = np.asarray(rows, dtype=np.float64)
        cols = np.asarray(cols, dtype=np.float64)
        return np.stack([(cols - self.cx) / self.fx, (rows - self.cy) / self.fy,
                         np.ones(np.broadcast(rows, cols).shape)], axis=-1)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points -> (col, row) pixel coordinates."""
        z = points_cam[..., 2]
        return np.stack([self.fx * points_cam[..., 0] / z + self.cx,
                         self.fy * points_cam[..., 1] / z + self.cy], axis=-1)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple
    frame: int = 0
    timestamp: int = 1


def pixel_ray(cam: Camera, pose: Pose, row: float, col: float, frame: int = 0,
              timestamp: int = 1) -> Ray:
    if not (0 <= row < cam.height and 0 <= col < cam.width):
        raise IndexError(f"pixel ({row}, {col}) outside {cam.height}x{cam.width} image")
    d = pose.rotation @ cam.local_directions(row, col)
    return Ray(pose.translation.copy(), d / np.linalg.norm(d), (row, col), frame, timestamp)


def pixel_rays(cam: Camera, rotation, translation, rows, cols):
    """Batched rays; ``rotation``/``translation`` may be tape tensors.

    Returns ``(origins, directions)`` with shape ``(..., 3)``.
    """
    local = cam.local_directions(rows, cols)
    local = local / np.linalg.norm(local, axis=-1, keepdims=True)
    flat = local.reshape(-1, 3)
    dirs = ad.matmul(flat, ad.swapaxes(ad.as_tensor(rotation), -1, -2))
    dirs = ad.reshape(dirs, local.shape)
    origins = ad.broadcast_to(ad.as_tensor(translation), local.shape)
    return origins, dirs


# -- differentiable exponential map (pose refinement) --------------------------
_TAPE_SMALL = 1e-4  # theta^2 threshold for the series branch


def _skew_tensor(w: ad.Tensor) -> ad.Tensor:
    z = ad.Tensor(0.0)
    w0, w1, w2 = w[0], w[1], w[2]
    return ad.stack([ad.stack([z, -w2, w1]), ad.stack([w2, z, -w0]), ad.stack([-w1, w0, z])])


def se3_exp_tensor(xi) -> tuple:
    """Differentiable twist (6,) -> (rotation (3,3), translation (3,))."""
    xi = ad.as_tensor(xi)
    omega, v = xi[0:3], xi[3:6]
    theta2 = ad.sum_(omega * omega)
    t2 = float(theta2.value)
    if t2 < _TAPE_SMALL:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0 - theta2 * theta2 * theta2 / 5040.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0 - theta2 * theta2 * theta2 / 40320.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0 - theta2 * theta2 * theta2 / 362880.0
    else:
        theta = ad.sqrt(theta2)
        s, co = ad.sin(theta), ad.cos(theta)
        a = s / theta
        b = (1.0 - co) / theta2
        c = (theta - s) / (theta2 * theta)
    k = _skew_tensor(omega)
    kk = ad.matmul(k, k)
    eye = np.eye(3)
    rot = eye + a * k + b * kk
    jac = eye + b * k + c * kk
    trans = ad.reshape(ad.matmul(jac, ad.reshape(v, (3, 1))), (3,))
    return rot, trans


def compose_tensor(r1, t1, r2, t2) -> tuple:
    """(R1, t1) o (R2, t2) on tape tensors."""
    rot = ad.matmul(r1, r2)
    trans = ad.reshape(ad.matmul(r1, ad.reshape(t2, (3, 1))), (3,)) + t1
    return rot, trans
