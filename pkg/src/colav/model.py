"""Multi-sample trajectory predictor.

The model canonicalizes each history (translate the last observed position
to the origin, rotate the last heading onto +x), encodes the flattened
displacement vector with an MLP, optionally adds an embedding of a local
heading-aligned occupancy patch, and decodes K noise-conditioned futures as
cumulative displacement offsets that are rotated back into the world frame.

This module is the complete inference path: it depends on the autodiff
core, occupancy maps, and trajectory containers only. Training-time code
(losses, contrastive sampling, the optimizer) lives in
:mod:`colav.training` and is never imported from here.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, conv2d
from .gridmap import OccupancyMap

__all__ = [
    "ModelConfig",
    "init_params",
    "canonical_frame",
    "canonicalize",
    "encode_history",
    "encode_patches",
    "fuse",
    "decode_samples",
    "prepare_patches",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and patch geometry. Times are 0.4 s steps."""

    t_obs: int = 8
    t_pred: int = 12
    hidden_dim: int = 64
    noise_dim: int = 8
    decoder_hidden: int = 128
    k_samples: int = 20
    use_map: bool = True
    patch_size: int = 32
    patch_cell_m: float = 0.25
    patch_forward_m: float = 2.0
    conv_channels: tuple = (8, 16, 32, 64)

    def __post_init__(self):
        if self.t_obs < 2 or self.t_pred < 1:
            raise ValueError(f"need t_obs >= 2 and t_pred >= 1, got {self.t_obs}/{self.t_pred}")
        if min(self.hidden_dim, self.noise_dim, self.decoder_hidden, self.k_samples) < 1:
            raise ValueError("hidden_dim, noise_dim, decoder_hidden, k_samples must be >= 1")
        if self.use_map:
            if self.patch_cell_m <= 0:
                raise ValueError(f"patch_cell_m must be > 0, got {self.patch_cell_m}")
            _conv_plan(self)  # validates the stack fits the patch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conv_channels" in d:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def _conv_plan(cfg: ModelConfig):
    """(c_in, c_out, stride, spatial_out) per layer; stride 2 except the last."""
    plan = []
    size = cfg.patch_size
    channels = (1,) + tuple(cfg.conv_channels)
    n = len(cfg.conv_channels)
    for i in range(n):
        stride = 2 if i < n - 1 else 1
        out = (size - 3) // stride + 1
        if out < 1:
            raise ValueError(
                f"conv stack does not fit patch_size={cfg.patch_size} (layer {i + 1})"
            )
        plan.append((channels[i], channels[i + 1], stride, out))
        size = out
    return plan


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """Fresh parameter dict; layer weights uniform in +-1/sqrt(fan_in).

    Groups: ``hist.*`` (history MLP), ``patch.*`` (conv stack + linear,
    only when ``use_map``), ``dec.*`` (decoder MLP).
    """
    h, d_in = cfg.hidden_dim, 2 * (cfg.t_obs - 1)
    params = {
        "hist.w1": _uniform(rng, d_in, (d_in, h)),
        "hist.b1": _uniform(rng, d_in, (h,)),
        "hist.w2": _uniform(rng, h, (h, h)),
        "hist.b2": _uniform(rng, h, (h,)),
    }
    if cfg.use_map:
        plan = _conv_plan(cfg)
        for i, (cin, cout, _, _) in enumerate(plan, start=1):
            fan = cin * 9
            params[f"patch.conv{i}.w"] = _uniform(rng, fan, (cout, cin, 3, 3))
            params[f"patch.conv{i}.b"] = _uniform(rng, fan, (cout,))
        flat = plan[-1][1] * plan[-1][3] ** 2
        params["patch.lin.w"] = _uniform(rng, flat, (flat, h))
        params["patch.lin.b"] = _uniform(rng, flat, (h,))
    dec_in = h + cfg.noise_dim
    params["dec.w1"] = _uniform(rng, dec_in, (dec_in, cfg.decoder_hidden))
    params["dec.b1"] = _uniform(rng, dec_in, (cfg.decoder_hidden,))
    params["dec.w2"] = _uniform(rng, cfg.decoder_hidden, (cfg.decoder_hidden, 2 * cfg.t_pred))
    params["dec.b2"] = _uniform(rng, cfg.decoder_hidden, (2 * cfg.t_pred,))
    return params


# ---- canonical frame --------------------------------------------------------


def canonical_frame(past: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window origin and heading: (B, T_obs, 2) -> (B, 2), (B,).

    The origin is the last observed position; the heading angle comes from
    the most recent non-degenerate displacement (scanning backward), and
    defaults to 0 (+x) for a pedestrian that never moved.
    """
    past = np.asarray(past, dtype=np.float64)
    if past.ndim != 3 or past.shape[1] < 2 or past.shape[2] != 2:
        raise ValueError(f"past must be (B, T_obs >= 2, 2), got {past.shape}")
    disp = np.diff(past, axis=1)  # (B, T-1, 2)
    moving = np.linalg.norm(disp, axis=2) > 1e-12
    b, tm1 = moving.shape
    rev_idx = tm1 - 1 - np.argmax(moving[:, ::-1], axis=1)
    theta = np.zeros(b)
    any_move = moving.any(axis=1)
    if any_move.any():
        chosen = disp[np.arange(b), rev_idx]
        theta[any_move] = np.arctan2(chosen[any_move, 1], chosen[any_move, 0])
    return past[:, -1].copy(), theta


def canonicalize(past: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotate displacement history into the canonical frame.

    Returns (flat (B, 2*(T_obs-1)), origin (B, 2), theta (B,)); `flat` is
    the per-step displacements rotated by -theta and flattened, so a
    stationary pedestrian canonicalizes to all zeros.
    """
    origin, theta = canonical_frame(past)
    disp = np.diff(np.asarray(past, dtype=np.float64), axis=1)
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    dx, dy = disp[..., 0], disp[..., 1]
    rot = np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)
    return rot.reshape(past.shape[0], -1), origin, theta


def world_from_canonical(
    canon: Tensor, origin: np.ndarray, theta: np.ndarray
) -> Tensor:
    """Rotate canonical offsets (B, K, T, 2) by theta and translate to origin."""
    b = canon.shape[0]
    c = np.cos(theta).reshape(b, 1, 1)
    s = np.sin(theta).reshape(b, 1, 1)
    xs, ys = canon[..., 0], canon[..., 1]
    xw = xs * c - ys * s + origin[:, 0].reshape(b, 1, 1)
    yw = xs * s + ys * c + origin[:, 1].reshape(b, 1, 1)
    t = canon.shape[2]
    return concat(
        [xw.reshape(b, -1, t, 1), yw.reshape(b, -1, t, 1)], axis=3
    )


# ---- encoders / decoder -----------------------------------------------------


def encode_history(params: dict, cfg: ModelConfig, flat: Tensor) -> Tensor:
    """Canonical displacement vector (B, 2*(T_obs-1)) -> hidden (B, H)."""
    hid = (flat @ params["hist.w1"] + params["hist.b1"]).relu()
    return hid @ params["hist.w2"] + params["hist.b2"]


def encode_patches(params: dict, cfg: ModelConfig, grids: Tensor) -> Tensor:
    """Occupancy patches (B, S, S) -> hidden-space map embedding (B, H).

    Strided 3x3 conv stack with ReLU after every layer, flattened and
    projected to H by a linear layer.
    """
    plan = _conv_plan(cfg)
    b = grids.shape[0]
    x = grids.reshape(b, 1, cfg.patch_size, cfg.patch_size)
    for i, (_, _, stride, _) in enumerate(plan, start=1):
        x = conv2d(
            x, params[f"patch.conv{i}.w"], params[f"patch.conv{i}.b"], stride=stride
        ).relu()
    flat = x.reshape(b, -1)
    return flat @ params["patch.lin.w"] + params["patch.lin.b"]


def fuse(h_hist: Tensor, h_map: Tensor) -> Tensor:
    """Elementwise sum; a zero map embedding leaves the history state intact."""
    return h_hist + h_map


def decode_samples(
    params: dict,
    cfg: ModelConfig,
    h: Tensor,
    origin: np.ndarray,
    theta: np.ndarray,
    noise: np.ndarray,
) -> Tensor:
    """Hidden states + noise -> world-frame predictions (B, K, T_pred, 2).

    The decoder MLP emits per-step canonical offsets which are accumulated
    (cumsum) and mapped through each window's frame; with all-zero decoder
    weights every sample repeats the last observed position.
    """
    b, k, nd = noise.shape
    hk = h.reshape(b, 1, -1).broadcast_to((b, k, h.shape[1]))
    inp = concat([hk, Tensor._lift(noise)], axis=2).reshape(b * k, -1)
    hid = (inp @ params["dec.w1"] + params["dec.b1"]).relu()
    offsets = (hid @ params["dec.w2"] + params["dec.b2"]).reshape(b, k, cfg.t_pred, 2)
    canon = offsets.cumsum(axis=2)
    return world_from_canonical(canon, origin, theta)


def prepare_patches(occ_map: OccupancyMap, past: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Heading-aligned patches for a batch of histories, (B, S, S) float."""
    origin, theta = canonical_frame(past)
    return occ_map.patch_stack(
        origin,
        theta,
        size=cfg.patch_size,
        cell_size=cfg.patch_cell_m,
        forward_offset=cfg.patch_forward_m,
    )


def forward_hidden(
    params: dict, cfg: ModelConfig, flat: np.ndarray, patches: np.ndarray | None
) -> Tensor:
    """Shared trunk: canonical history (+ optional patches) -> fused hidden."""
    tensors = {k: Tensor._lift(v) for k, v in params.items()}
    return _forward_hidden_t(tensors, cfg, Tensor._lift(flat), patches)


def _forward_hidden_t(
    tensors: dict, cfg: ModelConfig, flat: Tensor, patches: np.ndarray | None
) -> Tensor:
    h = encode_history(tensors, cfg, flat)
    if cfg.use_map:
        if patches is None:
            raise ValueError("use_map=True requires patches")
        h = fuse(h, encode_patches(tensors, cfg, Tensor._lift(patches)))
    return h


def predict(
    params: dict,
    cfg: ModelConfig,
    past: np.ndarray,
    occ_map: OccupancyMap | None = None,
    k: int | None = None,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Sample K futures per history; returns (B, K, T_pred, 2) world meters.

    Exactly the same code path regardless of how the checkpoint was
    trained; `noise` can be passed explicitly for reproducibility studies,
    otherwise `rng` draws it.
    """
    past = np.asarray(past, dtype=np.float64)
    k = cfg.k_samples if k is None else int(k)
    flat, origin, theta = canonicalize(past)
    if cfg.use_map and occ_map is None:
        raise ValueError("use_map=True requires an occupancy map")
    patches = prepare_patches(occ_map, past, cfg) if cfg.use_map else None
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = rng.standard_normal((past.shape[0], k, cfg.noise_dim))
    h = forward_hidden(params, cfg, flat, patches)
    tensors = {key: Tensor._lift(v) for key, v in params.items()}
    return decode_samples(tensors, cfg, h, origin, theta, noise).data


# ---- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"COLAVCK1"


def save_checkpoint(path, params: dict, config: dict, meta: dict | None = None) -> None:
    """Versioned binary dump: magic, length-prefixed JSON header, raw arrays.

    Arrays are stored little-endian in sorted name order and round-trip
    bit-exactly; the header carries the config echo and metadata. The byte
    stream is a pure function of the contents (no timestamps), so identical
    runs produce identical files.
    """
    names = sorted(params)
    arrays = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name])
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        arrays.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str.replace(">", "<"),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": 1, "config": config, "meta": meta or {}, "arrays": arrays},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Inverse of save_checkpoint: returns (params, config, meta)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:8]!r})")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    base = 16 + hlen
    params = {}
    for spec in header["arrays"]:
        start = base + spec["offset"]
        arr = np.frombuffer(raw[start : start + spec["nbytes"]], dtype=spec["dtype"])
        params[spec["name"]] = arr.reshape(spec["shape"]).astype(spec["dtype"].lstrip("<>="))
    return params, header["config"], header["meta"]
