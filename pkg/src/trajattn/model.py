"""Event-prediction network with three attention variants.

``trajectory``
    The lower LSTM predicts robot-frame ground positions and mask shapes,
    which are projected into the feature map as Gaussian masks.
``self_attention``
    The lower LSTM emits a spatial softmax mask directly.
``none``
    No lower LSTM; the unmasked pooled feature map feeds the event LSTM.

Per step ``i`` the lower LSTM consumes the embedding of action ``a_{t+i-1}``
and the upper LSTM consumes ``[pool(mask_i * F_t), emb(a_{t+i-1})]``, so
predictions for step ``i`` only see actions up to ``i``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, glorot_uniform, lstm_cell, ops, zeros_param
from .autodiff.checkpoint import load_weights, save_weights
from .autodiff.tensor import ShapeError
from .geometry import (
    COV_PARAM_COUNT, AttentionCovariance, CameraRig, FeatureMapGeometry, gaussian_mask,
    pixel_to_featuremap, robot_to_pixel,
)

VARIANTS = ("trajectory", "self_attention", "none")


@dataclass(frozen=True)
class EventHeadSpec:
    name: str
    kind: str  # "discrete" or "continuous"
    size: int  # class count or value dimension

    def __post_init__(self):
        if self.kind == "discrete" and self.size < 2:
            raise ValueError(f"head {self.name!r}: discrete heads need >= 2 classes")
        if self.kind == "continuous" and self.size < 1:
            raise ValueError(f"head {self.name!r}: continuous heads need dim >= 1")
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"head {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    channels: int
    stride: int = 1

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "trajectory"
    horizon: int = 12
    image_channels: int = 3
    image_h: int = 32
    image_w: int = 32
    convs: tuple[ConvSpec, ...] = (ConvSpec(3, 8, 2), ConvSpec(3, 16, 2))
    hidden: int = 64
    action_dim: int = 1
    action_embed: int = 16
    heads: tuple[EventHeadSpec, ...] = (EventHeadSpec("terrain", "discrete", 2),)
    covariance: str = "isotropic"
    camera: CameraRig = field(default_factory=CameraRig)
    position_scale: float = 1.15
    init_sigma: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "convs", tuple(c if isinstance(c, ConvSpec) else ConvSpec(*c) for c in self.convs))
        object.__setattr__(self, "heads", tuple(
            h if isinstance(h, EventHeadSpec) else EventHeadSpec(**h) for h in self.heads))
        if isinstance(self.camera, dict):
            object.__setattr__(self, "camera", CameraRig(**self.camera))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.covariance not in COV_PARAM_COUNT:
            raise ValueError(f"unknown covariance variant {self.covariance!r}")
        for c in self.convs:
            if c.kernel % 2 == 0:
                raise ValueError(f"conv kernel {c.kernel} must be odd so that 2p = k - 1")
        if (self.camera.image_w, self.camera.image_h) != (self.image_w, self.image_h):
            raise ValueError("camera image size must match model image size")
        self.geometry  # validates divisibility
        if len({h.name for h in self.heads}) != len(self.heads):
            raise ValueError("head names must be unique")

    @property
    def geometry(self) -> FeatureMapGeometry:
        return FeatureMapGeometry(tuple(c.stride for c in self.convs), self.image_w, self.image_h)

    def head(self, name: str) -> EventHeadSpec:
        for h in self.heads:
            if h.name == name:
                return h
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs"] = [list(astuple_conv(c)) for c in self.convs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["convs"] = tuple(ConvSpec(*c) for c in d.get("convs", ()))
        d["heads"] = tuple(EventHeadSpec(**h) for h in d.get("heads", ()))
        d["camera"] = CameraRig(**d["camera"]) if "camera" in d else CameraRig()
        return cls(**d)

    def replace(self, **kw) -> "ModelConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ModelConfig(**d)


def astuple_conv(c: ConvSpec) -> tuple[int, int, int]:
    return (c.kernel, c.channels, c.stride)


@dataclass
class ForwardOutput:
    """Stacked per-step outputs; every sequence axis has length H.

    ``events[name]`` is (B, H, size): probabilities for discrete heads, point
    values for continuous ones. ``log_probs`` holds the discrete heads'
    log-probabilities for the loss. ``positions`` (B, H, 2) and
    ``cov_params`` exist only for the trajectory variant; ``masks``
    (B, H, h, w) is None for the no-attention variant.
    """

    events: dict[str, Tensor]
    log_probs: dict[str, Tensor]
    positions: Tensor | None
    cov_params: Tensor | None
    masks: Tensor | None
    feature_map: Tensor
    behind_camera: np.ndarray | None = None


class EventModel:
    """Weights plus the forward pass for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.encode_calls = 0
        self._lock = threading.Lock()
        rng = np.random.default_rng(seed)
        cfg = config
        ch = cfg.image_channels
        for i, c in enumerate(cfg.convs):
            k = c.kernel
            self._add(f"conv{i}.w", glorot_uniform(rng, (c.channels, ch, k, k), ch * k * k, c.channels * k * k))
            self._add(f"conv{i}.b", zeros_param((c.channels,)))
            ch = c.channels
        self.feature_channels = ch
        hid = cfg.hidden
        self._dense(rng, "act", cfg.action_dim, cfg.action_embed)
        if cfg.variant != "none":
            self._dense(rng, "embed", ch, hid)
            self._lstm(rng, "lower", cfg.action_embed, hid)
            g = cfg.geometry
            if cfg.variant == "trajectory":
                n_cov = COV_PARAM_COUNT[cfg.covariance]
                self._dense(rng, "attn_out", hid, 2 + n_cov)
                b = self.params["attn_out.b"].data
                b[0] = 1.0  # straight-ahead displacement prior
                s2 = cfg.init_sigma ** 2
                if cfg.covariance == "full":
                    b[2:] = [cfg.init_sigma, 0.0, 0.0, cfg.init_sigma]
                else:
                    b[2:] = math.log(s2)
            else:
                self._dense(rng, "attn_out", hid, g.feature_w * g.feature_h)
        self._lstm(rng, "upper", ch + cfg.action_embed, hid)
        for h in cfg.heads:
            self._dense(rng, f"head.{h.name}", hid, h.size)

    def _add(self, name: str, t: Tensor) -> None:
        t.name = name
        self.params[name] = t

    def _dense(self, rng, name: str, n_in: int, n_out: int) -> None:
        self._add(f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self._add(f"{name}.b", zeros_param((n_out,)))

    def _lstm(self, rng, name: str, n_in: int, hidden: int) -> None:
        self._add(f"{name}.w", glorot_uniform(rng, (n_in + hidden, 4 * hidden), n_in + hidden, 4 * hidden))
        self._add(f"{name}.b", zeros_param((4 * hidden,)))

    def p(self, name: str) -> Tensor:
        return self.params[name]

    # -- encoder -----------------------------------------------------------
    def encode_image(self, images) -> tuple[Tensor, Tensor | None]:
        """Images (B, C, H, W) in [0, 1] -> (feature map, initial hidden state)."""
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        if x.ndim == 3:
            x = ops.reshape(x, (1,) + x.shape)
        expected = (cfg.image_channels, cfg.image_h, cfg.image_w)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"encode_image: expected (B, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")
        with self._lock:
            self.encode_calls += 1
        for i, c in enumerate(cfg.convs):
            x = ops.relu(ops.conv2d(x, self.p(f"conv{i}.w"), self.p(f"conv{i}.b"), c.stride, c.padding))
        h0 = None
        if cfg.variant != "none":
            h0 = ops.relu(ops.linear(ops.global_avg_pool(x), self.p("embed.w"), self.p("embed.b")))
        return x, h0

    def _embed_actions(self, actions) -> list[Tensor]:
        cfg = self.config
        a = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, dtype=np.float64))
        if a.ndim == 2:
            a = ops.reshape(a, (1,) + a.shape)
        if a.ndim != 3 or a.shape[1] != cfg.horizon or a.shape[2] != cfg.action_dim:
            raise ShapeError(f"actions: expected (B, {cfg.horizon}, {cfg.action_dim}), got {a.shape}")
        return [ops.relu(ops.linear(a[:, i, :], self.p("act.w"), self.p("act.b"))) for i in range(cfg.horizon)]

    # -- attention ---------------------------------------------------------
    def _lower_outputs(self, h0: Tensor, embs: Sequence[Tensor]) -> list[Tensor]:
        hid = self.config.hidden
        b = embs[0].shape[0]
        h = h0 if h0.shape[0] == b else ops.broadcast_to(h0, (b, hid))
        c = Tensor(np.zeros((b, hid)))
        outs = []
        for e in embs:
            h, c = lstm_cell(e, h, c, self.p("lower.w"), self.p("lower.b"))
            outs.append(ops.linear(h, self.p("attn_out.w"), self.p("attn_out.b")))
        return outs

    def predict_attention_sequence(self, h0: Tensor, actions) -> tuple[list[Tensor], list[Tensor]]:
        """Per-step robot-frame (x, y) positions and covariance params."""
        if self.config.variant != "trajectory":
            raise ValueError("predict_attention_sequence needs the trajectory variant")
        outs = self._lower_outputs(h0, self._embed_actions(actions))
        scale = self.config.position_scale
        positions, covs = [], []
        pos = None
        for o in outs:
            step = ops.scale(o[:, :2], scale)
            pos = step if pos is None else ops.add(pos, step)
            positions.append(pos)
            covs.append(o[:, 2:])
        return positions, covs

    def coord_to_mask(self, pos_r: Tensor, cov_params: Tensor) -> tuple[Tensor, np.ndarray]:
        """Robot-frame ground position (B, 2) -> Gaussian mask (B, h, w) and behind-camera flags."""
        cfg = self.config
        g = cfg.geometry
        rig = cfg.camera
        x3 = ops.concat([pos_r, Tensor(np.zeros((pos_r.shape[0], 1)))], axis=1)
        uv, _, behind = robot_to_pixel(x3, rig.extrinsics(), rig.intrinsics())
        xa = pixel_to_featuremap(uv, g)
        mask = gaussian_mask(xa, AttentionCovariance(cfg.covariance, cov_params), g.feature_w, g.feature_h)
        return mask, behind

    def feature_positions(self, pos_r: np.ndarray) -> np.ndarray:
        """Project robot-frame ground points (..., 2) to feature-map coordinates."""
        cfg = self.config
        pts = np.asarray(pos_r, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        x3 = np.column_stack([flat, np.zeros(len(flat))])
        uv, _, _ = robot_to_pixel(x3, cfg.camera.extrinsics(), cfg.camera.intrinsics())
        return pixel_to_featuremap(uv, cfg.geometry).reshape(pts.shape)

    def self_attention_mask(self, h0: Tensor, actions) -> list[Tensor]:
        if self.config.variant != "self_attention":
            raise ValueError("self_attention_mask needs the self_attention variant")
        g = self.config.geometry
        outs = self._lower_outputs(h0, self._embed_actions(actions))
        return [ops.reshape(ops.softmax(o, axis=1), (o.shape[0], g.feature_h, g.feature_w)) for o in outs]

    # -- events ------------------------------------------------------------
    @property
    def pool_gain(self) -> float:
        """Scale applied after average pooling so pooled features stay O(1).

        A unit-mass softmax mask needs h*w; the unnormalized Gaussian mask has
        mass close to 2*pi whatever its width, so it needs h*w / (2*pi).
        """
        g = self.config.geometry
        cells = float(g.feature_w * g.feature_h)
        return {"trajectory": cells / (2.0 * math.pi), "self_attention": cells, "none": 1.0}[self.config.variant]

    def _pool(self, fmap: Tensor, mask: Tensor | None, batch: int) -> Tensor:
        if fmap.shape[0] != batch:
            fmap = ops.broadcast_to(fmap, (batch,) + fmap.shape[1:])
        x = fmap if mask is None else ops.broadcast_mul(mask, fmap)
        return ops.scale(ops.global_avg_pool(x), self.pool_gain)

    def predict_events(self, fmap: Tensor, masks: Sequence[Tensor] | None, actions, embs=None):
        """Run the event LSTM; returns per-step lists of head outputs."""
        cfg = self.config
        embs = embs if embs is not None else self._embed_actions(actions)
        b = embs[0].shape[0]
        if masks is not None and len(masks) != cfg.horizon:
            raise ShapeError(f"predict_events: expected {cfg.horizon} masks, got {len(masks)}")
        hid = cfg.hidden
        h = Tensor(np.zeros((b, hid)))
        c = Tensor(np.zeros((b, hid)))
        events = {hs.name: [] for hs in cfg.heads}
        logps = {hs.name: [] for hs in cfg.heads if hs.kind == "discrete"}
        for i, e in enumerate(embs):
            pooled = self._pool(fmap, None if masks is None else masks[i], b)
            h, c = lstm_cell(ops.concat([pooled, e], axis=1), h, c, self.p("upper.w"), self.p("upper.b"))
            for hs in cfg.heads:
                z = ops.linear(h, self.p(f"head.{hs.name}.w"), self.p(f"head.{hs.name}.b"))
                if hs.kind == "discrete":
                    logps[hs.name].append(ops.log_softmax(z, axis=1))
                    events[hs.name].append(ops.softmax(z, axis=1))
                else:
                    events[hs.name].append(z)
        return events, logps

    def forward_full(self, images=None, actions=None, encoded: tuple[Tensor, Tensor | None] | None = None) -> ForwardOutput:
        """Full pass. Pass ``encoded`` to reuse one image encoding across many rollouts."""
        cfg = self.config
        fmap, h0 = encoded if encoded is not None else self.encode_image(images)
        embs = self._embed_actions(actions)
        positions = covs = masks = None
        behind = None
        if cfg.variant == "trajectory":
            outs = self._lower_outputs(h0, embs)
            pos_list = []
            pos = None
            for o in outs:
                step = ops.scale(o[:, :2], cfg.position_scale)
                pos = step if pos is None else ops.add(pos, step)
                pos_list.append(pos)
            positions = ops.stack(pos_list, axis=1)
            covs = ops.stack([o[:, 2:] for o in outs], axis=1)
            # masks read the stacked tensors so their gradients are visible there
            masks, flags = [], []
            for i in range(cfg.horizon):
                m, bflag = self.coord_to_mask(positions[:, i, :], covs[:, i, :])
                masks.append(m)
                flags.append(bflag)
            behind = np.stack(flags, axis=1)
        elif cfg.variant == "self_attention":
            g = cfg.geometry
            outs = self._lower_outputs(h0, embs)
            masks = [ops.reshape(ops.softmax(o, axis=1), (o.shape[0], g.feature_h, g.feature_w)) for o in outs]
        events, logps = self.predict_events(fmap, masks, None, embs=embs)
        return ForwardOutput(
            events={k: ops.stack(v, axis=1) for k, v in events.items()},
            log_probs={k: ops.stack(v, axis=1) for k, v in logps.items()},
            positions=positions,
            cov_params=covs,
            masks=None if masks is None else ops.stack(masks, axis=1),
            feature_map=fmap,
            behind_camera=behind,
        )

    # -- persistence -------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"param {k!r}: checkpoint shape {v.shape} vs model {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path, meta: dict | None = None) -> None:
        m = dict(meta or {})
        m["model_config"] = self.config.to_dict()
        save_weights(path, self.state_dict(), m)

    @classmethod
    def load(cls, path) -> tuple["EventModel", dict]:
        state, meta = load_weights(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.load_state_dict(state)
        return model, meta

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))
