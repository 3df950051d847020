"""Planar worlds: terrain class grid, background grid, cylindrical obstacles.

Two generators:

``toy``
    Square blocks of smooth and rough terrain. With the confound on, the
    canopy colour above every block is foliage over smooth ground and sky
    over rough ground. ``swap_terrain`` flips the ground classes and leaves
    the canopy alone, so the background then points at the wrong class.
``procedural``
    Three roughness classes from thresholded smoothed noise plus
    Poisson-disk obstacles. The background grid follows the terrain when the
    confound is on; a test world uses another seed and background palette.

File layout (little-endian)::

    b"TRAJWD"  u32 version
    u32 header_len, JSON header (scalars, palettes, grid shapes)
    i32 terrain grid, i32 background grid, f64 obstacles (n x 3)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

MAGIC = b"TRAJWD"
VERSION = 1

# ground colours share a hue; roughness mostly shows up as texture amplitude
TERRAIN_PALETTE = {
    2: [[0.56, 0.50, 0.40], [0.46, 0.42, 0.36]],
    3: [[0.56, 0.50, 0.40], [0.50, 0.45, 0.38], [0.43, 0.40, 0.35]],
}
TERRAIN_TEXTURE = {2: [0.03, 0.22], 3: [0.03, 0.12, 0.24]}
FOLIAGE, SKY = [0.16, 0.42, 0.14], [0.62, 0.76, 0.95]
BACKGROUND_PALETTES = {
    # index 0 sits over the smoothest ground when the confound is on
    "train": [FOLIAGE, [0.40, 0.55, 0.30], SKY],
    "test": [[0.70, 0.45, 0.25], [0.55, 0.30, 0.45], [0.85, 0.85, 0.80]],
}
WALL_COLOR = [0.30, 0.30, 0.33]
OBSTACLE_COLOR = [0.22, 0.17, 0.10]


class WorldFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WorldParams:
    mode: str = "toy"  # toy | procedural
    extent: float = 64.0
    cell_size: float = 1.0
    num_classes: int = 2
    block_size: float = 16.0  # toy blocks
    noise_sigma: float = 6.0  # procedural terrain smoothing, cells
    obstacle_count: int = 0
    obstacle_spacing: float = 10.0
    obstacle_radius: tuple[float, float] = (0.4, 1.0)
    obstacle_height: float = 3.0
    wall_height: float = 2.0
    canopy_height: float = 5.0
    confound: bool = True
    palette: str = "train"
    start_clearance: float = 3.0

    @classmethod
    def toy(cls, **kw) -> "WorldParams":
        return cls(**kw)

    @classmethod
    def procedural(cls, **kw) -> "WorldParams":
        base = dict(mode="procedural", extent=128.0, num_classes=3, obstacle_count=60)
        base.update(kw)
        return cls(**base)


@dataclass
class WorldSpec:
    seed: int
    params: WorldParams
    terrain: np.ndarray  # (ny, nx) class per cell, row = y
    background: np.ndarray  # (ny, nx) background palette index
    obstacles: np.ndarray  # (n, 3) x, y, radius
    terrain_palette: np.ndarray
    terrain_texture: np.ndarray
    background_palette: np.ndarray
    swapped: bool = False
    markers: list = field(default_factory=list)  # (x, y, radius, rgb) ground paint, used by tests/demos
    meta: dict = field(default_factory=dict)  # provenance read back from a world file

    @property
    def extent(self) -> float:
        return self.params.extent

    @property
    def num_classes(self) -> int:
        return self.params.num_classes

    def cell_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        n = self.terrain.shape[0]
        ix = np.clip(np.floor(np.asarray(x) / self.params.cell_size).astype(np.int64), 0, n - 1)
        iy = np.clip(np.floor(np.asarray(y) / self.params.cell_size).astype(np.int64), 0, n - 1)
        return ix, iy

    def terrain_at(self, x, y) -> np.ndarray:
        ix, iy = self.cell_index(x, y)
        return self.terrain[iy, ix]

    def background_at(self, x, y) -> np.ndarray:
        ix, iy = self.cell_index(x, y)
        return self.background[iy, ix]

    def collides(self, x: float, y: float, clearance: float = 0.0) -> bool:
        e = self.extent
        if x < clearance or y < clearance or x > e - clearance or y > e - clearance:
            return True
        if len(self.obstacles):
            d2 = (self.obstacles[:, 0] - x) ** 2 + (self.obstacles[:, 1] - y) ** 2
            if np.any(d2 < (self.obstacles[:, 2] + clearance) ** 2):
                return True
        return False

    def free_start_cells(self, clearance: float | None = None) -> np.ndarray:
        """Centres of grid cells where a vehicle may start, (n, 2)."""
        c = self.params.start_clearance if clearance is None else clearance
        cs = self.params.cell_size
        n = self.terrain.shape[0]
        xs = (np.arange(n) + 0.5) * cs
        gx, gy = np.meshgrid(xs, xs)
        ok = (gx >= c) & (gy >= c) & (gx <= self.extent - c) & (gy <= self.extent - c)
        for ox, oy, r in self.obstacles:
            ok &= (gx - ox) ** 2 + (gy - oy) ** 2 >= (r + c) ** 2
        return np.column_stack([gx[ok], gy[ok]])

    def same_as(self, other: "WorldSpec") -> bool:
        return (self.seed == other.seed and self.params == other.params and self.swapped == other.swapped
                and np.array_equal(self.terrain, other.terrain) and np.array_equal(self.background, other.background)
                and np.array_equal(self.obstacles, other.obstacles)
                and np.array_equal(self.terrain_palette, other.terrain_palette)
                and np.array_equal(self.terrain_texture, other.terrain_texture)
                and np.array_equal(self.background_palette, other.background_palette))

    # -- serialization -----------------------------------------------------
    def save(self, path, meta: dict | None = None) -> None:
        p = self.params
        header = {
            "seed": self.seed, "swapped": self.swapped,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in p.__dict__.items()},
            "terrain_palette": self.terrain_palette.tolist(), "terrain_texture": self.terrain_texture.tolist(),
            "background_palette": self.background_palette.tolist(),
            "grid_shape": list(self.terrain.shape), "n_obstacles": len(self.obstacles), "meta": meta or {},
        }
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        Path(path).write_bytes(b"".join([
            MAGIC, struct.pack("<II", VERSION, len(hb)), hb,
            self.terrain.astype("<i4").tobytes(), self.background.astype("<i4").tobytes(),
            np.asarray(self.obstacles, dtype="<f8").reshape(-1, 3).tobytes(),
        ]))

    @classmethod
    def load(cls, path) -> "WorldSpec":
        buf = Path(path).read_bytes()
        if buf[:6] != MAGIC:
            raise WorldFormatError(f"{path}: not a world file (magic {buf[:6]!r})")
        version, hlen = struct.unpack_from("<II", buf, 6)
        if version != VERSION:
            raise WorldFormatError(f"{path}: unsupported version {version}")
        h = json.loads(buf[14:14 + hlen].decode("utf-8"))
        pos = 14 + hlen
        shape = tuple(h["grid_shape"])
        cells = int(np.prod(shape))
        terrain = np.frombuffer(buf, "<i4", cells, pos).reshape(shape).astype(np.int64)
        pos += 4 * cells
        background = np.frombuffer(buf, "<i4", cells, pos).reshape(shape).astype(np.int64)
        pos += 4 * cells
        obstacles = np.frombuffer(buf, "<f8", 3 * h["n_obstacles"], pos).reshape(-1, 3).astype(np.float64)
        pos += 24 * h["n_obstacles"]
        if pos != len(buf):
            raise WorldFormatError(f"{path}: {len(buf) - pos} trailing bytes")
        params = dict(h["params"])
        params["obstacle_radius"] = tuple(params["obstacle_radius"])
        return cls(h["seed"], WorldParams(**params), terrain, background, obstacles,
                   np.array(h["terrain_palette"]), np.array(h["terrain_texture"]),
                   np.array(h["background_palette"]), h["swapped"], meta=h["meta"])


def _poisson_disk(rng, extent: float, spacing: float, count: int, margin: float) -> np.ndarray:
    """Dart throwing with a fixed attempt budget; returns up to ``count`` points."""
    pts: list[tuple[float, float]] = []
    for _ in range(count * 30):
        if len(pts) >= count:
            break
        p = rng.uniform(margin, extent - margin, size=2)
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= spacing ** 2 for q in pts):
            pts.append((float(p[0]), float(p[1])))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _toy_grid(rng, params: WorldParams) -> np.ndarray:
    nb = int(round(params.extent / params.block_size))
    if nb < 2:
        raise ValueError("toy world needs at least 2 blocks per side")
    blocks = np.arange(nb * nb) % params.num_classes
    rng.shuffle(blocks)
    blocks = blocks.reshape(nb, nb)
    per_block = int(round(params.block_size / params.cell_size))
    return np.kron(blocks, np.ones((per_block, per_block), dtype=np.int64))


def _noise_classes(rng, n: int, k: int, sigma: float) -> np.ndarray:
    field_ = gaussian_filter(rng.normal(size=(n, n)), sigma, mode="wrap")
    cuts = np.quantile(field_, np.arange(1, k) / k)
    return np.searchsorted(cuts, field_).astype(np.int64)


def generate_world(seed: int, params: WorldParams | None = None) -> WorldSpec:
    params = params or WorldParams()
    if params.mode not in ("toy", "procedural"):
        raise ValueError(f"unknown world mode {params.mode!r}")
    if params.num_classes not in TERRAIN_PALETTE:
        raise ValueError(f"num_classes must be one of {sorted(TERRAIN_PALETTE)}")
    n = int(round(params.extent / params.cell_size))
    if abs(n * params.cell_size - params.extent) > 1e-9:
        raise ValueError("extent must be a multiple of cell_size")
    rng = np.random.default_rng(seed)
    k = params.num_classes
    terrain = _toy_grid(rng, params) if params.mode == "toy" else _noise_classes(rng, n, k, params.noise_sigma)
    if terrain.shape != (n, n):
        raise ValueError("extent must be a multiple of block_size")
    palette = np.array(BACKGROUND_PALETTES[params.palette], dtype=np.float64)
    if params.confound:
        # class c -> palette entry spanning smooth (0) .. rough (last)
        background = np.rint(terrain * (len(palette) - 1) / (k - 1)).astype(np.int64)
    else:
        background = _noise_classes(rng, n, len(palette), params.noise_sigma * 2)
    obstacles = np.zeros((0, 3))
    if params.obstacle_count:
        pts = _poisson_disk(rng, params.extent, params.obstacle_spacing, params.obstacle_count,
                            params.start_clearance + params.obstacle_radius[1])
        radii = rng.uniform(*params.obstacle_radius, size=len(pts))
        obstacles = np.column_stack([pts, radii])
    world = WorldSpec(seed, params, terrain, background, obstacles,
                      np.array(TERRAIN_PALETTE[k], dtype=np.float64), np.array(TERRAIN_TEXTURE[k], dtype=np.float64),
                      palette)
    if len(world.free_start_cells()) == 0:
        raise ValueError("world has no traversable start cell; lower obstacle density or clearance")
    return world


def swap_terrain(world: WorldSpec) -> WorldSpec:
    """Mirror the roughness classes (c -> K-1-c); background and obstacles untouched."""
    return replace(world, terrain=(world.num_classes - 1 - world.terrain).astype(np.int64),
                   swapped=not world.swapped, markers=list(world.markers))
