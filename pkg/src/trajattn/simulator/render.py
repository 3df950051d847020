"""Per-pixel ray casting against ground, obstacles, boundary walls and canopy.

Rays go through pixel centres (integer pixel coordinates) using the same
intrinsics and extrinsics as the model's projection, so a ground point drawn
here lands where ``robot_to_pixel`` says it should.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import CameraRig
from .dynamics import VehicleState
from .world import OBSTACLE_COLOR, WALL_COLOR, WorldSpec

GROUND_TEXEL = 0.25  # m
CANOPY_TEXEL = 0.5
CANOPY_TEXTURE = 0.05

HIT_GROUND, HIT_OBSTACLE, HIT_WALL, HIT_CANOPY = 0, 1, 2, 3


@dataclass
class Render:
    image: np.ndarray  # (3, H, W) float in [0, 1]
    depth: np.ndarray  # (H, W) camera-frame z of the hit point
    hit: np.ndarray  # (H, W) HIT_* codes
    points: np.ndarray  # (H, W, 3) world hit points

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.image * 255.0), 0, 255).astype(np.uint8)


def hash_noise(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic value noise in [-1, 1] per integer lattice cell."""
    h = ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64(salt & 0xFFFFFFFFFFFFFFFF)
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


def camera_rays(state: VehicleState, rig: CameraRig) -> tuple[np.ndarray, np.ndarray]:
    """World-frame camera centre (3,) and unit ray directions (H, W, 3)."""
    K = rig.intrinsics()
    ext = rig.extrinsics()
    u, v = np.meshgrid(np.arange(rig.image_w, dtype=np.float64), np.arange(rig.image_h, dtype=np.float64))
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    pose = state.pose()
    d_world = d_cam @ ext.rotation @ pose.rotation.T  # camera -> robot -> world
    centre_r = -ext.rotation.T @ ext.translation
    centre_w = pose.apply(centre_r)
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    return centre_w, d_world


def render_observation(world: WorldSpec, state: VehicleState, rig: CameraRig | None = None) -> Render:
    rig = rig or CameraRig()
    p = world.params
    o, d = camera_rays(state, rig)
    shape = d.shape[:2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    inf = np.full(shape, np.inf)

    # exit through the boundary box in xy
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (world.extent - o[0]) / dx, np.where(dx < 0, -o[0] / dx, np.inf))
        ty = np.where(dy > 0, (world.extent - o[1]) / dy, np.where(dy < 0, -o[1] / dy, np.inf))
    t_exit = np.minimum(tx, ty)
    z_exit = o[2] + t_exit * dz
    t_wall = np.where((z_exit <= p.wall_height) & (z_exit >= 0.0), t_exit, inf)

    with np.errstate(divide="ignore"):
        t_ground = np.where(dz < 0, -o[2] / np.where(dz < 0, dz, -1.0), inf)
        t_canopy = np.where(dz > 0, (p.canopy_height - o[2]) / np.where(dz > 0, dz, 1.0), inf)
    t_ground = np.where(t_ground < t_exit, t_ground, inf)

    t_obs = inf.copy()
    if len(world.obstacles):
        near = np.hypot(world.obstacles[:, 0] - o[0], world.obstacles[:, 1] - o[1]) < 80.0
        for cx, cy, r in world.obstacles[near]:
            ox, oy = o[0] - cx, o[1] - cy
            a = dx * dx + dy * dy
            b = 2.0 * (dx * ox + dy * oy)
            c = ox * ox + oy * oy - r * r
            disc = b * b - 4 * a * c
            ok = (disc >= 0) & (a > 1e-12)
            with np.errstate(invalid="ignore", divide="ignore"):
                t1 = (-b - np.sqrt(np.where(ok, disc, 0.0))) / (2 * np.where(ok, a, 1.0))
            z1 = o[2] + t1 * dz
            hit = ok & (t1 > 0) & (z1 >= 0) & (z1 <= p.obstacle_height)
            t_obs = np.where(hit & (t1 < t_obs), t1, t_obs)

    stack = np.stack([t_ground, t_obs, t_wall, t_canopy])
    kind = np.argmin(stack, axis=0)
    t = np.take_along_axis(stack, kind[None], axis=0)[0]
    # a ray can only miss everything when it is exactly horizontal and above the wall
    t = np.where(np.isfinite(t), t, t_exit)
    kind = np.where(np.isfinite(np.take_along_axis(stack, kind[None], axis=0)[0]), kind, HIT_CANOPY)
    pts = o + t[..., None] * d

    img = np.zeros(shape + (3,))
    g = kind == HIT_GROUND
    if g.any():
        gx, gy = pts[g, 0], pts[g, 1]
        cls = world.terrain_at(gx, gy)
        noise = hash_noise(np.floor(gx / GROUND_TEXEL), np.floor(gy / GROUND_TEXEL), 0x5EED)
        col = world.terrain_palette[cls] + (world.terrain_texture[cls] * noise)[:, None]
        for mx, my, mr, mc in world.markers:
            inside = (gx - mx) ** 2 + (gy - my) ** 2 <= mr * mr
            col[inside] = mc
        img[g] = col
    cpy = kind == HIT_CANOPY
    if cpy.any():
        cx_, cy_ = pts[cpy, 0], pts[cpy, 1]
        bg = world.background_at(cx_, cy_)
        noise = hash_noise(np.floor(cx_ / CANOPY_TEXEL), np.floor(cy_ / CANOPY_TEXEL), 0xC0FFEE)
        img[cpy] = world.background_palette[bg] + CANOPY_TEXTURE * noise[:, None]
    img[kind == HIT_WALL] = WALL_COLOR
    img[kind == HIT_OBSTACLE] = OBSTACLE_COLOR

    ext = rig.extrinsics()
    pts_r = (pts - state.pose().translation) @ state.pose().rotation
    depth = pts_r @ ext.rotation[2] + ext.translation[2]
    return Render(np.clip(img, 0.0, 1.0).transpose(2, 0, 1), depth, kind, pts)


def write_ppm(path, image: np.ndarray, comment: str = "") -> None:
    """Binary PPM (P6). ``image`` is (3, H, W) float in [0, 1] or uint8; ``comment`` goes in the header."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    _, h, w = img.shape
    note = "".join(f"# {line}\n" for line in comment.splitlines())
    Path(path).write_bytes(f"P6\n{note}{w} {h}\n255\n".encode("ascii") + img.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        fields.append(buf[pos:end])
        pos = end
    pos += 1  # the single whitespace byte before the raster
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()
