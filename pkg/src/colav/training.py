"""Training-time machinery: loss assembly, SGD, and gradient verification.

Everything random is derived from one integer seed through tagged
``np.random.SeedSequence`` streams (init / shuffling / per-step draws), so a
run is a pure function of (data, configs, seed): repeating it reproduces
loss logs and parameters bit for bit, and resuming from a checkpoint at
epoch e continues exactly as the uninterrupted run would have.

Step randomness is further split by purpose (decoder noise vs. contrastive
sampling; see :class:`colav.sampling.SampleStreams`), which keeps the
negative bank independent of ground-truth futures.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import model as M
from .autodiff import Tensor, concat
from .data import Scene, stack_windows
from .gridmap import OccupancyMap
from .losses import LossBreakdown, collision_mask, env_collision_loss, total_loss, variety_loss
from .nce import (
    KeyEncoder,
    QueryEncoder,
    key_forward,
    query_forward,
    scene_mapnce_loss,
    scene_mapnce_loss_all,
)
from .sampling import SampleStreams, SamplingConfig, build_sample_set

__all__ = [
    "TrainConfig",
    "TrainState",
    "NonFiniteLossError",
    "PreparedScene",
    "prepare_scene",
    "init_train_params",
    "train_step",
    "train",
    "check_gradients",
    "save_state",
    "load_state",
]

# seed tags, to keep the independent randomness purposes apart
_TAG_INIT = 0
_TAG_SHUFFLE = 1
_TAG_STEP = 2


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, loss composition, and contrastive-head hyperparameters."""

    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    use_env_col_loss: bool = False
    use_map_nce: bool = False
    lambda_env: float = 1.0
    lambda_nce: float = 0.25
    collision_segment_check: bool = False
    embed_dim: int = 16
    key_hidden: int = 32
    tau: float = 0.5
    normalize_embeddings: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    params: dict
    velocity: dict
    epoch: int = 0


class NonFiniteLossError(RuntimeError):
    """Loss diverged; carries diagnostics for the abort dump."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class PreparedScene:
    """A scene preprocessed for training.

    Patches, canonical frames, and per-window in-radius contour indices
    depend only on the map and the observed pasts, so they are computed
    once up front instead of every step.
    """

    name: str
    occ_map: OccupancyMap
    past: np.ndarray
    future: np.ndarray
    flat: np.ndarray
    origin: np.ndarray
    theta: np.ndarray
    patches: np.ndarray | None
    contours: np.ndarray
    in_range: list = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return self.past.shape[0]


def prepare_scene(
    scene: Scene,
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    need_contours: bool,
) -> PreparedScene:
    past, future = stack_windows(scene.windows)
    flat, origin, theta = M.canonicalize(past)
    patches = M.prepare_patches(scene.occ_map, past, model_cfg) if model_cfg.use_map else None
    contours = scene.occ_map.extract_contours() if need_contours else np.zeros((0, 2))
    in_range: list = []
    if need_contours and contours.shape[0] > 0:
        r2 = samp_cfg.seed_radius_m**2
        for i in range(0, past.shape[0], 256):
            chunk = origin[i : i + 256]
            d2 = ((contours[None, :, :] - chunk[:, None, :]) ** 2).sum(axis=2)
            in_range.extend(np.nonzero(row <= r2)[0] for row in d2)
    elif need_contours:
        in_range = [np.zeros(0, dtype=np.int64)] * past.shape[0]
    return PreparedScene(
        name=scene.name,
        occ_map=scene.occ_map,
        past=past,
        future=future,
        flat=flat,
        origin=origin,
        theta=theta,
        patches=patches,
        contours=contours,
        in_range=in_range,
    )


def init_train_params(
    model_cfg: M.ModelConfig, train_cfg: TrainConfig, rng: np.random.Generator
) -> dict:
    """Model parameters plus, when MapNCE trains, the query/key encoders."""
    params = M.init_params(model_cfg, rng)
    if train_cfg.use_map_nce:
        params.update(
            QueryEncoder(model_cfg.hidden_dim, train_cfg.embed_dim, rng).params()
        )
        params.update(KeyEncoder(train_cfg.key_hidden, train_cfg.embed_dim, rng).params())
    return params


class _Window:
    __slots__ = ("past", "future")

    def __init__(self, past, future):
        self.past = past
        self.future = future


def draw_step(
    ps: PreparedScene,
    idx: np.ndarray,
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
    step_seq: np.random.SeedSequence,
) -> dict:
    """All random draws for one step, frozen into plain arrays.

    Keys: decoder `noise` (B, K, nd); with MapNCE also `pos` (B, 2),
    `negs` (B, J, 2), `valid` (B,) and, in ``positive_t_mode="all"``,
    `pos_all` (B, T_pred, 2).
    """
    noise_seq, sample_seq = step_seq.spawn(2)
    b = idx.shape[0]
    draws = {
        "noise": np.random.default_rng(noise_seq).standard_normal(
            (b, model_cfg.k_samples, model_cfg.noise_dim)
        )
    }
    if train_cfg.use_map_nce:
        streams = SampleStreams(sample_seq)
        j = samp_cfg.z_seeds * 8
        pos = np.zeros((b, 2))
        negs = np.zeros((b, j, 2))
        valid = np.zeros(b, dtype=bool)
        pos_all = (
            np.zeros((b, model_cfg.t_pred, 2))
            if samp_cfg.positive_t_mode == "all"
            else None
        )
        for row, wi in enumerate(idx):
            sset = build_sample_set(
                _Window(ps.past[wi], ps.future[wi]),
                ps.contours,
                samp_cfg,
                streams,
                in_range=ps.in_range[wi] if ps.in_range else None,
            )
            pos[row] = sset.positive
            if pos_all is not None:
                pos_all[row] = sset.positives_all
            if not sset.skip:
                negs[row] = sset.negatives
                valid[row] = True
        draws.update({"pos": pos, "negs": negs, "valid": valid, "pos_all": pos_all})
    return draws


def compute_losses(
    tensors: dict,
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
    ps: PreparedScene,
    idx: np.ndarray,
    draws: dict,
) -> tuple[Tensor, LossBreakdown]:
    """Assemble the step objective on a batch of window indices.

    Every stochastic input comes frozen through `draws`, so for fixed
    draws the total is a deterministic, finite-difference-checkable
    function of the parameters.
    """
    flat = Tensor(ps.flat[idx])
    patches = ps.patches[idx] if ps.patches is not None else None
    h = M._forward_hidden_t(tensors, model_cfg, flat, patches)
    preds = M.decode_samples(
        tensors, model_cfg, h, ps.origin[idx], ps.theta[idx], draws["noise"]
    )
    future = ps.future[idx]
    variety, _ = variety_loss(preds, future)
    cmask = collision_mask(
        preds.data, ps.occ_map, train_cfg.collision_segment_check
    )
    if train_cfg.use_env_col_loss:
        env, _ = env_collision_loss(
            preds, future, ps.occ_map, mask=cmask
        )
    else:
        env = Tensor(0.0)
    if train_cfg.use_map_nce:
        b = idx.shape[0]
        queries = query_forward(tensors["query.w"], tensors["query.b"], h)
        key_args = (
            tensors["key.w1"],
            tensors["key.b1"],
            tensors["key.w2"],
            tensors["key.b2"],
        )
        neg_keys = key_forward(
            *key_args, Tensor(draws["negs"].reshape(-1, 2))
        ).reshape(b, -1, train_cfg.embed_dim)
        if samp_cfg.positive_t_mode == "all":
            pos_keys = key_forward(
                *key_args, Tensor(draws["pos_all"].reshape(-1, 2))
            ).reshape(b, model_cfg.t_pred, train_cfg.embed_dim)
            nce = scene_mapnce_loss_all(
                queries,
                pos_keys,
                neg_keys,
                draws["valid"],
                train_cfg.tau,
                train_cfg.normalize_embeddings,
            )
        else:
            pos_keys = key_forward(*key_args, Tensor(draws["pos"])).reshape(
                b, 1, train_cfg.embed_dim
            )
            keys = concat([pos_keys, neg_keys], axis=1)
            nce = scene_mapnce_loss(
                queries,
                keys,
                draws["valid"],
                train_cfg.tau,
                train_cfg.normalize_embeddings,
            )
    else:
        nce = Tensor(0.0)
    total = total_loss(variety, env, nce, train_cfg.lambda_env, train_cfg.lambda_nce)
    breakdown = LossBreakdown(
        variety=float(variety.data),
        env_col=float(env.data),
        map_nce=float(nce.data),
        total=float(total.data),
        colliding_fraction=float(cmask.mean()),
    )
    return total, breakdown


def train_step(
    state: TrainState,
    ps: PreparedScene,
    idx: np.ndarray,
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
    step_seq: np.random.SeedSequence,
) -> LossBreakdown:
    """One SGD-with-momentum update on a batch of windows."""
    draws = draw_step(ps, idx, model_cfg, samp_cfg, train_cfg, step_seq)
    tensors = {k: Tensor(v, requires_grad=True) for k, v in state.params.items()}
    total, breakdown = compute_losses(
        tensors, model_cfg, samp_cfg, train_cfg, ps, idx, draws
    )
    if not np.isfinite(total.data):
        raise NonFiniteLossError(
            f"non-finite loss at epoch {state.epoch}",
            {
                "epoch": state.epoch,
                "scene": ps.name,
                "window_indices": [int(i) for i in idx],
                "breakdown": breakdown.to_dict(),
                "param_norms": {
                    k: float(np.linalg.norm(v)) for k, v in state.params.items()
                },
            },
        )
    total.backward()
    mu, lr = train_cfg.momentum, train_cfg.lr
    for name, p in state.params.items():
        g = tensors[name].grad
        if g is None:
            g = np.zeros_like(p)
        v = state.velocity[name]
        v *= mu
        v += g
        p -= lr * v
    return breakdown


def _epoch_batches(
    prepared: list[PreparedScene], batch_size: int, seed: int, epoch: int
) -> list[tuple[int, np.ndarray]]:
    """Deterministic shuffled batches, each within a single scene."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_SHUFFLE, epoch)))
    batches: list[tuple[int, np.ndarray]] = []
    for si, ps in enumerate(prepared):
        order = rng.permutation(ps.n_windows)
        for start in range(0, ps.n_windows, batch_size):
            batches.append((si, order[start : start + batch_size]))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def train(
    scenes: list[Scene],
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
    state: TrainState | None = None,
    on_epoch=None,
) -> tuple[TrainState, list[dict]]:
    """Run (or resume) training; returns the state and per-epoch log rows.

    Epoch e of a resumed run consumes exactly the seed streams epoch e of a
    fresh run would, so interrupting and resuming reproduces the original
    loss trajectory.
    """
    prepared = [
        prepare_scene(s, model_cfg, samp_cfg, train_cfg.use_map_nce) for s in scenes
    ]
    if not any(ps.n_windows for ps in prepared):
        raise ValueError("no trainable windows in any scene")
    if state is None:
        rng = np.random.default_rng(
            np.random.SeedSequence((train_cfg.seed, _TAG_INIT))
        )
        params = init_train_params(model_cfg, train_cfg, rng)
        state = TrainState(
            params=params,
            velocity={k: np.zeros_like(v) for k, v in params.items()},
            epoch=0,
        )
    log: list[dict] = []
    for epoch in range(state.epoch, train_cfg.epochs):
        sums = np.zeros(5)
        count = 0
        for bi, (si, idx) in enumerate(
            _epoch_batches(prepared, train_cfg.batch_size, train_cfg.seed, epoch)
        ):
            if idx.size == 0:
                continue
            step_seq = np.random.SeedSequence(
                (train_cfg.seed, _TAG_STEP, epoch, bi)
            )
            br = train_step(
                state, prepared[si], idx, model_cfg, samp_cfg, train_cfg, step_seq
            )
            w = idx.size
            sums += w * np.array(
                [br.variety, br.env_col, br.map_nce, br.total, br.colliding_fraction]
            )
            count += w
        state.epoch = epoch + 1
        row = {
            "epoch": epoch,
            "variety": float(sums[0] / count),
            "env_col": float(sums[1] / count),
            "map_nce": float(sums[2] / count),
            "total": float(sums[3] / count),
            "colliding_fraction": float(sums[4] / count),
        }
        log.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state, log


# ---- gradient verification ---------------------------------------------------


def check_gradients(
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
    ps: PreparedScene,
    idx: np.ndarray | None = None,
    fd_step: float = 1e-5,
) -> dict:
    """Compare analytic parameter gradients against central finite differences.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-4); the floor
    keeps parameters whose true gradient is ~0 from amplifying the ~1e-10
    finite-difference noise floor. Returns per-parameter maxima, the global
    maximum, and an exact check that non-argmin samples of the variety loss
    receive identically zero gradient.
    """
    idx = np.arange(ps.n_windows) if idx is None else idx
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, _TAG_INIT)))
    params = init_train_params(model_cfg, train_cfg, rng)
    draws = draw_step(
        ps,
        idx,
        model_cfg,
        samp_cfg,
        train_cfg,
        np.random.SeedSequence((train_cfg.seed, _TAG_STEP, 0, 0)),
    )

    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    total, _ = compute_losses(tensors, model_cfg, samp_cfg, train_cfg, ps, idx, draws)
    total.backward()
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }

    def value(p: dict) -> float:
        t = {k: Tensor(v) for k, v in p.items()}
        tot, _ = compute_losses(t, model_cfg, samp_cfg, train_cfg, ps, idx, draws)
        return float(tot.data)

    per_param = {}
    worst = 0.0
    for name in sorted(params):
        base = params[name]
        num = np.zeros_like(base)
        flat = base.reshape(-1)
        nview = num.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + fd_step
            hi = value(params)
            flat[i] = keep - fd_step
            lo = value(params)
            flat[i] = keep
            nview[i] = (hi - lo) / (2.0 * fd_step)
        a = analytic[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-4)
        per_param[name] = float(rel.max())
        worst = max(worst, per_param[name])

    # exact routing check: only argmin samples of the variety loss get gradient
    h = M.forward_hidden(params, model_cfg, ps.flat[idx], None if ps.patches is None else ps.patches[idx])
    pt = {k: Tensor(v) for k, v in params.items()}
    preds = M.decode_samples(
        pt, model_cfg, h, ps.origin[idx], ps.theta[idx], draws["noise"]
    )
    leaf = Tensor(preds.data, requires_grad=True)
    vloss, best = variety_loss(leaf, ps.future[idx])
    vloss.backward()
    nonargmin = leaf.grad.copy()
    nonargmin[np.arange(idx.size), best] = 0.0
    return {
        "max_rel_err": worst,
        "per_param": per_param,
        "n_params": int(sum(p.size for p in params.values())),
        "variety_nonargmin_grad_max": float(np.abs(nonargmin).max()),
    }


# table-row loss compositions, by conventional name
ABLATIONS = {
    "baseline": {"use_map": False, "use_env_col_loss": False, "use_map_nce": False},
    "map": {"use_map": True, "use_env_col_loss": False, "use_map_nce": False},
    "envcol": {"use_map": True, "use_env_col_loss": True, "use_map_nce": False},
    "mapnce": {"use_map": True, "use_env_col_loss": False, "use_map_nce": True},
    "ecam": {"use_map": True, "use_env_col_loss": True, "use_map_nce": True},
}


def ablation_label(model_cfg: M.ModelConfig, train_cfg: TrainConfig) -> str:
    flags = {
        "use_map": model_cfg.use_map,
        "use_env_col_loss": train_cfg.use_env_col_loss,
        "use_map_nce": train_cfg.use_map_nce,
    }
    for name, preset in ABLATIONS.items():
        if preset == flags:
            return name
    return "custom"


def gradcheck_setup(ablation: str = "ecam", seed: int = 0):
    """Small deterministic fixture exercising every loss path.

    A 10x10 m map with a central 2x2 m block; three walkers approach it so
    that randomly initialized predictions both collide (environment loss
    active) and sit near contours (contrastive loss active). Returns
    (model_cfg, samp_cfg, train_cfg, prepared_scene).
    """
    flags = ABLATIONS[ablation]
    cells = np.ones((40, 40), dtype=np.uint8)
    cells[16:24, 16:24] = 0  # world [4, 6] x [4, 6] at 0.25 m cells
    occ_map = OccupancyMap(cells, np.diag([4.0, 4.0, 1.0]))
    model_cfg = M.ModelConfig(
        hidden_dim=16,
        noise_dim=4,
        decoder_hidden=16,
        k_samples=4,
        conv_channels=(2, 3, 4, 6),
        use_map=flags["use_map"],
    )
    samp_cfg = SamplingConfig()
    train_cfg = TrainConfig(
        seed=seed,
        use_env_col_loss=flags["use_env_col_loss"],
        use_map_nce=flags["use_map_nce"],
        embed_dim=6,
        key_hidden=8,
    )
    step = 0.45
    walks = [
        ((0.6, 5.1), (1.0, 0.0)),     # approaching the west face
        ((5.05, 9.6), (0.0, -1.0)),   # approaching the north face
        ((1.2, 1.4), (0.7071, 0.7071)),  # toward the southwest corner
    ]
    windows = []
    for start, direction in walks:
        d = np.asarray(direction)
        pts = np.asarray(start) + np.arange(20)[:, None] * step * d
        windows.append(_Window(pts[:8], pts[8:]))
    scene = Scene(name="gradcheck", occ_map=occ_map, windows=windows)
    ps = prepare_scene(scene, model_cfg, samp_cfg, train_cfg.use_map_nce)
    return model_cfg, samp_cfg, train_cfg, ps


def run_gradcheck(ablation: str, seed: int = 0, fd_step: float = 1e-5) -> dict:
    """Gradcheck one ablation's full objective on the standard fixture."""
    model_cfg, samp_cfg, train_cfg, ps = gradcheck_setup(ablation, seed)
    idx = np.arange(ps.n_windows)
    report = check_gradients(model_cfg, samp_cfg, train_cfg, ps, idx, fd_step)
    # record which loss paths the fixture actually exercised
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, _TAG_INIT)))
    params = init_train_params(model_cfg, train_cfg, rng)
    draws = draw_step(
        ps, idx, model_cfg, samp_cfg, train_cfg,
        np.random.SeedSequence((train_cfg.seed, _TAG_STEP, 0, 0)),
    )
    tensors = {k: Tensor(v) for k, v in params.items()}
    _, breakdown = compute_losses(tensors, model_cfg, samp_cfg, train_cfg, ps, idx, draws)
    report["ablation"] = ablation
    report["breakdown"] = breakdown.to_dict()
    return report


# ---- checkpointing ------------------------------------------------------------


def save_state(
    path,
    state: TrainState,
    model_cfg: M.ModelConfig,
    samp_cfg: SamplingConfig,
    train_cfg: TrainConfig,
) -> None:
    arrays = dict(state.params)
    arrays.update({f"opt.v.{k}": v for k, v in state.velocity.items()})
    config = {
        "model": model_cfg.to_dict(),
        "sampling": asdict(samp_cfg),
        "train": train_cfg.to_dict(),
    }
    M.save_checkpoint(path, arrays, config, meta={"epoch": state.epoch})


def load_state(path):
    arrays, config, meta = M.load_checkpoint(path)
    params = {k: v for k, v in arrays.items() if not k.startswith("opt.v.")}
    velocity = {k[len("opt.v.") :]: v for k, v in arrays.items() if k.startswith("opt.v.")}
    if not velocity:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    state = TrainState(params=params, velocity=velocity, epoch=int(meta.get("epoch", 0)))
    model_cfg = M.ModelConfig.from_dict(config["model"])
    samp_cfg = SamplingConfig(**config["sampling"])
    train_cfg = TrainConfig.from_dict(config["train"])
    return state, model_cfg, samp_cfg, train_cfg
