"""Trajectory samples, datasets, splits and the binary dataset container.

Container layout (little-endian)::

    b"TRAJDS"  u32 version
    u32 header_len, JSON header (horizon, image dims, action dim, heads, meta)
    u64 n_samples
    n_samples x [u32 record_len, record bytes]

A record is the u8 image, f64 actions, per-head labels (i64 for discrete,
f64 for continuous), f64 robot-frame positions, f64 world pose (x, y,
heading), then u32 episode and u32 timestep.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import EventHeadSpec

MAGIC = b"TRAJDS"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class TrajectorySample:
    observation: np.ndarray  # (C, H, W) uint8
    actions: np.ndarray  # (H, action_dim)
    labels: dict[str, np.ndarray]  # (H,) ints or (H, dim) floats
    positions: np.ndarray  # (H, 2) robot-frame metres
    episode: int = 0
    timestep: int = 0
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)  # world x, y, heading at the observation


@dataclass
class Dataset:
    """Column-stored samples sharing one horizon, image size and head set."""

    heads: tuple[EventHeadSpec, ...]
    images: np.ndarray  # (N, C, H, W) uint8
    actions: np.ndarray  # (N, H, A)
    labels: dict[str, np.ndarray]
    positions: np.ndarray  # (N, H, 2)
    episode: np.ndarray
    timestep: np.ndarray
    poses: np.ndarray | None = None  # (N, 3) world x, y, heading at each observation
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.poses is None:
            self.poses = np.zeros((len(self.images), 3))
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if self.poses.shape != (len(self.images), 3):
            raise ValueError(f"poses must be (N, 3); got {self.poses.shape}")
        self.heads = tuple(h if isinstance(h, EventHeadSpec) else EventHeadSpec(**h) for h in self.heads)
        n = len(self.images)
        if self.images.dtype != np.uint8 or self.images.ndim != 4:
            raise ValueError("images must be (N, C, H, W) uint8")
        if self.actions.ndim != 3 or len(self.actions) != n:
            raise ValueError(f"actions must be (N, H, A); got {self.actions.shape} for N={n}")
        horizon = self.actions.shape[1]
        if self.positions.shape != (n, horizon, 2) or not np.all(np.isfinite(self.positions)):
            raise ValueError(f"positions must be finite (N, H, 2); got {self.positions.shape}")
        for h in self.heads:
            if h.name not in self.labels:
                raise ValueError(f"missing labels for head {h.name!r}")
            lab = self.labels[h.name]
            if h.kind == "discrete":
                if lab.shape != (n, horizon):
                    raise ValueError(f"head {h.name!r}: labels shape {lab.shape}, expected {(n, horizon)}")
                if n and (lab.min() < 0 or lab.max() >= h.size):
                    raise ValueError(f"head {h.name!r}: labels outside 0..{h.size - 1}")
            elif lab.shape != (n, horizon, h.size):
                raise ValueError(f"head {h.name!r}: labels shape {lab.shape}, expected {(n, horizon, h.size)}")
        extra = set(self.labels) - {h.name for h in self.heads}
        if extra:
            raise ValueError(f"labels without a head spec: {sorted(extra)}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def __getitem__(self, i: int) -> TrajectorySample:
        return TrajectorySample(self.images[i], self.actions[i], {k: v[i] for k, v in self.labels.items()},
                                self.positions[i], int(self.episode[i]), int(self.timestep[i]),
                                tuple(self.poses[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.heads, self.images[idx], self.actions[idx], {k: v[idx] for k, v in self.labels.items()},
                       self.positions[idx], self.episode[idx], self.timestep[idx], self.poses[idx], dict(self.meta))

    def float_images(self, idx=None) -> np.ndarray:
        imgs = self.images if idx is None else self.images[idx]
        return imgs.astype(np.float64) / 255.0

    @classmethod
    def from_samples(cls, samples, heads, meta=None) -> "Dataset":
        samples = list(samples)
        heads = tuple(heads)
        if not samples:
            raise ValueError("from_samples needs at least one sample; use Dataset.empty for none")
        return cls(heads,
                   np.stack([s.observation for s in samples]).astype(np.uint8),
                   np.stack([np.asarray(s.actions, dtype=np.float64) for s in samples]),
                   {h.name: np.stack([np.asarray(s.labels[h.name]) for s in samples]).astype(
                       np.int64 if h.kind == "discrete" else np.float64) for h in heads},
                   np.stack([np.asarray(s.positions, dtype=np.float64) for s in samples]),
                   np.array([s.episode for s in samples], dtype=np.int64),
                   np.array([s.timestep for s in samples], dtype=np.int64),
                   np.array([s.pose for s in samples], dtype=np.float64).reshape(-1, 3), dict(meta or {}))

    @classmethod
    def empty(cls, heads, horizon: int, image_shape, action_dim: int = 1, meta=None) -> "Dataset":
        heads = tuple(heads)
        labels = {h.name: np.zeros((0, horizon), np.int64) if h.kind == "discrete"
                  else np.zeros((0, horizon, h.size)) for h in heads}
        return cls(heads, np.zeros((0,) + tuple(image_shape), np.uint8), np.zeros((0, horizon, action_dim)),
                   labels, np.zeros((0, horizon, 2)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3)),
                   dict(meta or {}))

    # -- serialization -----------------------------------------------------
    def save(self, path) -> None:
        header = {
            "horizon": self.horizon, "image_shape": list(self.image_shape), "action_dim": self.actions.shape[2],
            "heads": [{"name": h.name, "kind": h.kind, "size": h.size} for h in self.heads], "meta": self.meta,
        }
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(hb)), hb, struct.pack("<Q", len(self))]
        for i in range(len(self)):
            rec = [np.ascontiguousarray(self.images[i]).tobytes(), self.actions[i].astype("<f8").tobytes()]
            for h in self.heads:
                dt = "<i8" if h.kind == "discrete" else "<f8"
                rec.append(self.labels[h.name][i].astype(dt).tobytes())
            rec.append(self.positions[i].astype("<f8").tobytes())
            rec.append(self.poses[i].astype("<f8").tobytes())
            rec.append(struct.pack("<II", int(self.episode[i]), int(self.timestep[i])))
            body = b"".join(rec)
            parts.append(struct.pack("<I", len(body)))
            parts.append(body)
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path) -> "Dataset":
        buf = Path(path).read_bytes()
        if buf[:6] != MAGIC:
            raise DatasetFormatError(f"{path}: not a dataset file (magic {buf[:6]!r})")
        (version, hlen) = struct.unpack_from("<II", buf, 6)
        if version != VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        pos = 14
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        heads = tuple(EventHeadSpec(**h) for h in header["heads"])
        hz, shape, adim = header["horizon"], tuple(header["image_shape"]), header["action_dim"]
        if n == 0:
            return cls.empty(heads, hz, shape, adim, header["meta"])
        img_n = int(np.prod(shape))
        layout = [("img", "u1", img_n), ("act", "<f8", hz * adim)]
        for h in heads:
            layout.append((h.name, "<i8" if h.kind == "discrete" else "<f8", hz * (1 if h.kind == "discrete" else h.size)))
        layout += [("pos", "<f8", hz * 2), ("pose", "<f8", 3), ("ep", "<u4", 1), ("ts", "<u4", 1)]
        rec_len = sum(np.dtype(d).itemsize * c for _, d, c in layout)
        cols = {k: [] for k, _, _ in layout}
        for _ in range(n):
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if length != rec_len:
                raise DatasetFormatError(f"{path}: record length {length}, expected {rec_len}")
            off = pos
            for k, d, c in layout:
                cols[k].append(np.frombuffer(buf, dtype=d, count=c, offset=off))
                off += np.dtype(d).itemsize * c
            pos += length
        if pos != len(buf):
            raise DatasetFormatError(f"{path}: {len(buf) - pos} trailing bytes")
        labels = {}
        for h in heads:
            arr = np.stack(cols[h.name])
            labels[h.name] = arr.astype(np.int64).reshape(n, hz) if h.kind == "discrete" else arr.reshape(n, hz, h.size).astype(np.float64)
        return cls(heads, np.stack(cols["img"]).reshape((n,) + shape).copy(),
                   np.stack(cols["act"]).reshape(n, hz, adim).astype(np.float64), labels,
                   np.stack(cols["pos"]).reshape(n, hz, 2).astype(np.float64),
                   np.concatenate(cols["ep"]).astype(np.int64), np.concatenate(cols["ts"]).astype(np.int64),
                   np.stack(cols["pose"]).astype(np.float64), header["meta"])


def train_val_split(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled partition of range(n); depends only on (n, seed)."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def fraction_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic subset of ``round(fraction * n)`` indices."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    k = max(1, int(round(fraction * n)))
    return np.sort(np.random.default_rng(seed).permutation(n)[:k])
