"""Frame changes, pinhole projection and Gaussian attention masks.

Conventions: the robot frame is x forward, y left, z up. The camera frame is
x right, y down, z along the optical axis. Pixel centres sit at integer
coordinates, so the principal ray passes through pixel (cx, cy), and a
feature-map cell ``i`` of a stride-``s`` encoder is centred on pixel ``s*i``.

Projection and mask functions accept either numpy arrays (returning arrays)
or autodiff :class:`Tensor` inputs (returning differentiable Tensors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops

DEPTH_MIN = 0.1
VARIANCE_FLOOR = 1e-4
COV_VARIANTS = ("isotropic", "diagonal", "full")
COV_PARAM_COUNT = {"isotropic": 1, "diagonal": 2, "full": 4}


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_planar(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "PoseSE3":
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.array([x, y, z]))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """``self ∘ other``: apply ``other`` first."""
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


def world_to_robot(x_w, robot_pose_in_world: PoseSE3) -> np.ndarray:
    """Express world points (..., 3) in the frame of a robot at the given pose."""
    p = robot_pose_in_world
    return (np.asarray(x_w, dtype=np.float64) - p.translation) @ p.rotation


def robot_to_world(x_r, robot_pose_in_world: PoseSE3) -> np.ndarray:
    return robot_pose_in_world.apply(x_r)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_w and 0 <= self.cy < self.image_h):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls, image_w: int = 32, image_h: int = 32, hfov_deg: float = 90.0) -> "CameraIntrinsics":
        f = (image_w / 2) / math.tan(math.radians(hfov_deg) / 2)
        return cls(f, f, image_w / 2, image_h / 2, image_w, image_h)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def camera_extrinsics(height: float, pitch: float, forward_offset: float = 0.0) -> PoseSE3:
    """Robot->camera transform for a camera on the robot's x axis.

    ``pitch`` is in radians, negative looking down.
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    z_c = np.array([cp, 0.0, sp])
    x_c = np.array([0.0, -1.0, 0.0])
    y_c = np.cross(z_c, x_c)
    rot = np.stack([x_c, y_c, z_c])
    centre = np.array([forward_offset, 0.0, height])
    return PoseSE3(rot, -rot @ centre)


@dataclass(frozen=True)
class CameraRig:
    """Forward-looking camera mounted on the robot; shared by renderer and model."""

    height: float = 1.0
    pitch_deg: float = -12.0
    hfov_deg: float = 70.0
    image_w: int = 32
    image_h: int = 32

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.default(self.image_w, self.image_h, self.hfov_deg)

    def extrinsics(self) -> PoseSE3:
        return camera_extrinsics(self.height, math.radians(self.pitch_deg))


def robot_to_pixel(x_r, extrinsics: PoseSE3, K: CameraIntrinsics, depth_min: float = DEPTH_MIN):
    """Project robot-frame points (B, 3) to continuous pixels.

    Returns ``(uv, depth, clamped)``: ``uv`` is (B, 2), ``depth`` the raw
    camera-frame depth and ``clamped`` flags points at or behind
    ``depth_min``, which are projected as if they sat at ``depth_min``.
    """
    as_numpy = not isinstance(x_r, Tensor)
    x = Tensor(np.atleast_2d(np.asarray(x_r, dtype=np.float64))) if as_numpy else x_r
    xc = ops.linear(x, Tensor(extrinsics.rotation.T), Tensor(extrinsics.translation))
    depth = xc.data[:, 2].copy()
    clamped = depth <= depth_min
    z = ops.clip(xc[:, 2], lo=depth_min)
    inv_z = ops.exp(ops.scale(ops.log(z), -1.0))
    u = ops.add_scalar(ops.scale(ops.mul(xc[:, 0], inv_z), K.fx), K.cx)
    v = ops.add_scalar(ops.scale(ops.mul(xc[:, 1], inv_z), K.fy), K.cy)
    uv = ops.stack([u, v], axis=1)
    if as_numpy:
        return uv.data, depth, clamped
    return uv, depth, clamped


@dataclass(frozen=True)
class FeatureMapGeometry:
    strides: tuple[int, ...]
    image_w: int
    image_h: int

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be positive")
        s = self.s_out
        if self.image_w % s or self.image_h % s:
            raise ValueError(f"image {self.image_w}x{self.image_h} not divisible by output stride {s}")

    @property
    def s_out(self) -> int:
        return int(np.prod(self.strides)) if self.strides else 1

    @property
    def feature_w(self) -> int:
        return self.image_w // self.s_out

    @property
    def feature_h(self) -> int:
        return self.image_h // self.s_out


def pixel_to_featuremap(uv, g: FeatureMapGeometry):
    """Divide by the output stride and clamp into the feature map."""
    as_numpy = not isinstance(uv, Tensor)
    t = Tensor(np.atleast_2d(np.asarray(uv, dtype=np.float64))) if as_numpy else uv
    scaled = ops.scale(t, 1.0 / g.s_out)
    fx = ops.clip(scaled[:, 0], 0.0, g.feature_w - 1.0)
    fy = ops.clip(scaled[:, 1], 0.0, g.feature_h - 1.0)
    out = ops.stack([fx, fy], axis=1)
    return out.data if as_numpy else out


@dataclass(frozen=True)
class AttentionCovariance:
    """Mask shape parameters for a batch.

    ``params`` is (B, 1) log-variance for ``isotropic``, (B, 2) per-axis
    log-variances for ``diagonal``, or (B, 4) row-major entries of a factor
    ``Phi`` with ``Sigma = Phi Phi^T`` for ``full``.
    """

    variant: str
    params: object

    def __post_init__(self):
        if self.variant not in COV_VARIANTS:
            raise ValueError(f"unknown covariance variant {self.variant!r}")
        if not isinstance(self.params, Tensor):
            object.__setattr__(self, "params", np.atleast_2d(np.asarray(self.params, dtype=np.float64)))
        shape = self.params.shape
        if len(shape) != 2 or shape[1] != COV_PARAM_COUNT[self.variant]:
            raise ValueError(f"{self.variant} covariance needs (B, {COV_PARAM_COUNT[self.variant]}) params, got {shape}")

    def sigma(self) -> np.ndarray:
        """Reconstructed (B, 2, 2) covariance, floors applied."""
        p = self.params.data if isinstance(self.params, Tensor) else np.asarray(self.params, dtype=np.float64)
        b = p.shape[0]
        out = np.zeros((b, 2, 2))
        lo = math.log(VARIANCE_FLOOR)
        if self.variant == "isotropic":
            var = np.exp(np.maximum(p[:, 0], lo))
            out[:, 0, 0] = out[:, 1, 1] = var
        elif self.variant == "diagonal":
            out[:, 0, 0] = np.exp(np.maximum(p[:, 0], lo))
            out[:, 1, 1] = np.exp(np.maximum(p[:, 1], lo))
        else:
            phi = p.reshape(b, 2, 2)
            out = phi @ phi.transpose(0, 2, 1)
        return out


def _per_sample(x: Tensor, shape) -> Tensor:
    return ops.broadcast_to(ops.reshape(x, (x.shape[0], 1, 1)), shape)


def gaussian_mask(x_attn, cov: AttentionCovariance, feature_w: int, feature_h: int):
    """Scaled Gaussian ``|Σ|^(-1/2) exp(-½ dᵀ Σ⁻¹ d)`` on the integer grid.

    ``x_attn`` is (B, 2) in feature-map units as (column, row). The mask is
    (B, feature_h, feature_w), indexed [row, column], and is not normalised.
    """
    as_numpy = not isinstance(x_attn, Tensor)
    xa = Tensor(np.atleast_2d(np.asarray(x_attn, dtype=np.float64))) if as_numpy else x_attn
    params = cov.params if isinstance(cov.params, Tensor) else Tensor(np.asarray(cov.params, dtype=np.float64))
    b = xa.shape[0]
    shape = (b, feature_h, feature_w)
    cols, rows = np.meshgrid(np.arange(feature_w, dtype=np.float64), np.arange(feature_h, dtype=np.float64))
    dx = ops.sub(Tensor(np.broadcast_to(cols, shape)), _per_sample(xa[:, 0], shape))
    dy = ops.sub(Tensor(np.broadcast_to(rows, shape)), _per_sample(xa[:, 1], shape))
    dx2, dy2 = ops.square(dx), ops.square(dy)
    lo = math.log(VARIANCE_FLOOR)

    if cov.variant == "isotropic":
        s = _per_sample(ops.clip(params[:, 0], lo=lo), shape)
        quad = ops.mul(ops.add(dx2, dy2), ops.exp(ops.scale(s, -1.0)))
        log_norm = s  # log|Σ|^(1/2) = log σ²
    elif cov.variant == "diagonal":
        sx = _per_sample(ops.clip(params[:, 0], lo=lo), shape)
        sy = _per_sample(ops.clip(params[:, 1], lo=lo), shape)
        quad = ops.add(ops.mul(dx2, ops.exp(ops.scale(sx, -1.0))), ops.mul(dy2, ops.exp(ops.scale(sy, -1.0))))
        log_norm = ops.scale(ops.add(sx, sy), 0.5)
    else:
        a, bb, c, d = (params[:, k] for k in range(4))
        p = ops.add(ops.square(a), ops.square(bb))
        q = ops.add(ops.mul(a, c), ops.mul(bb, d))
        r = ops.add(ops.square(c), ops.square(d))
        det = ops.clip(ops.square(ops.sub(ops.mul(a, d), ops.mul(bb, c))), lo=VARIANCE_FLOOR ** 2)
        log_det = ops.log(det)
        inv_det = _per_sample(ops.exp(ops.scale(log_det, -1.0)), shape)
        num = ops.add(ops.sub(ops.mul(_per_sample(r, shape), dx2),
                              ops.scale(ops.mul(_per_sample(q, shape), ops.mul(dx, dy)), 2.0)),
                      ops.mul(_per_sample(p, shape), dy2))
        quad = ops.mul(num, inv_det)
        log_norm = _per_sample(ops.scale(log_det, 0.5), shape)
    mask = ops.exp(ops.sub(ops.scale(quad, -0.5), log_norm))
    return mask.data if as_numpy else mask


def mask_centroid(mask: np.ndarray) -> np.ndarray:
    """Weighted mean (column, row) of non-negative masks (B, h, w)."""
    m = np.asarray(mask, dtype=np.float64)
    b, h, w = m.shape
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    tot = m.sum(axis=(1, 2))
    return np.stack([(m * cols).sum(axis=(1, 2)) / tot, (m * rows).sum(axis=(1, 2)) / tot], axis=1)


def project_planar_to_featuremap(xy_r, extrinsics: PoseSE3, K: CameraIntrinsics, g: FeatureMapGeometry):
    """Robot-frame ground points (B, 2) -> clamped feature-map coordinates (B, 2)."""
    as_numpy = not isinstance(xy_r, Tensor)
    xy = Tensor(np.atleast_2d(np.asarray(xy_r, dtype=np.float64))) if as_numpy else xy_r
    x3 = ops.concat([xy, Tensor(np.zeros((xy.shape[0], 1)))], axis=1)
    uv, _, clamped = robot_to_pixel(x3, extrinsics, K)
    fm = pixel_to_featuremap(uv, g)
    return (fm.data, clamped) if as_numpy else (fm, clamped)

