"""Contrastive map loss: query/key encoders and the InfoNCE-style objective.

The query comes from the predictor's fused hidden state, the keys from
embedding sampled world points (one ground-truth positive, key index 0,
followed by obstacle-ring negatives). Scores are scaled dot products at
temperature tau; the loss is the negative log-probability of the positive
under a softmax over all keys, computed with a max-shifted log-sum-exp so
large logits cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, logsumexp

__all__ = [
    "ContrastiveBatch",
    "QueryEncoder",
    "KeyEncoder",
    "query_forward",
    "key_forward",
    "l2_normalize",
    "mapnce_loss",
    "scene_mapnce_loss",
    "scene_mapnce_loss_all",
]


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ContrastiveBatch:
    """One pedestrian's embedded contrastive instance.

    `query` has shape (E,), `keys` (M, E) with the positive at row 0 and
    M = 1 + J.
    """

    query: np.ndarray
    keys: np.ndarray
    temperature: float = 0.5

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.keys = np.asarray(self.keys, dtype=np.float64)
        if self.query.ndim != 1:
            raise ValueError(f"query must be 1-D, got shape {self.query.shape}")
        if self.keys.ndim != 2 or self.keys.shape[1] != self.query.shape[0]:
            raise ValueError(
                f"keys must be (M, {self.query.shape[0]}), got {self.keys.shape}"
            )
        if self.keys.shape[0] < 2:
            raise ValueError("need the positive plus at least one negative key")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


class QueryEncoder:
    """Linear map from the fused hidden state (H) to the embedding space (E).

    Weights start uniform in +-1/sqrt(H); pass an `rng` to make runs
    reproducible.
    """

    def __init__(self, hidden_dim: int = 64, embed_dim: int = 16, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = _uniform_init(rng, hidden_dim, (hidden_dim, embed_dim))
        self.b = _uniform_init(rng, hidden_dim, (embed_dim,))

    def encode(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        return h @ self.w + self.b

    def params(self) -> dict:
        return {"query.w": self.w, "query.b": self.b}


class KeyEncoder:
    """Two-layer MLP embedding world points (2) -> (E), ReLU in between.

    ReLU preserves zero, so all-zero weights embed every point at the
    origin; init is uniform +-1/sqrt(fan_in) per layer.
    """

    def __init__(self, key_hidden: int = 32, embed_dim: int = 16, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w1 = _uniform_init(rng, 2, (2, key_hidden))
        self.b1 = _uniform_init(rng, 2, (key_hidden,))
        self.w2 = _uniform_init(rng, key_hidden, (key_hidden, embed_dim))
        self.b2 = _uniform_init(rng, key_hidden, (embed_dim,))

    def encode(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        hid = np.maximum(pts @ self.w1 + self.b1, 0.0)
        out = hid @ self.w2 + self.b2
        return out[0] if squeeze else out

    def params(self) -> dict:
        return {"key.w1": self.w1, "key.b1": self.b1, "key.w2": self.w2, "key.b2": self.b2}


# ---- functional forms used inside training graphs -------------------------


def query_forward(w: Tensor, b: Tensor, h: Tensor) -> Tensor:
    """h (B, H) -> queries (B, E)."""
    return h @ w + b


def key_forward(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, pts: Tensor) -> Tensor:
    """pts (M, 2) -> key embeddings (M, E)."""
    return ((pts @ w1 + b1).relu() @ w2) + b2


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    sq = (x * x).sum(axis=axis, keepdims=True)
    return x * (sq + 1e-12).pow(-0.5)


def _logits(query: Tensor, keys: Tensor, temperature: float, normalize: bool) -> Tensor:
    if normalize:
        query = l2_normalize(query)
        keys = l2_normalize(keys)
    scores = (query * keys).sum(axis=-1)
    return scores * (1.0 / temperature)


def mapnce_loss(
    query,
    keys,
    temperature: float = 0.5,
    normalize: bool = False,
) -> Tensor:
    """Contrastive loss for one pedestrian; positive is key row 0.

    Accepts Tensors (gradients flow) or plain arrays. Always >= 0, since
    the log-sum-exp over all keys dominates the positive logit.
    """
    query = Tensor._lift(query)
    keys = Tensor._lift(keys)
    q = query.reshape(1, -1)
    logits = _logits(q, keys, temperature, normalize)  # (M,) after broadcast
    logits = logits.reshape(1, -1)
    return (logsumexp(logits, axis=1) - logits[:, 0]).sum()


def loss_from_batch(batch: ContrastiveBatch, normalize: bool = False) -> float:
    """Value-only convenience on a ContrastiveBatch."""
    return float(mapnce_loss(batch.query, batch.keys, batch.temperature, normalize).data)


def scene_mapnce_loss(
    queries: Tensor,
    keys: Tensor,
    valid: np.ndarray,
    temperature: float = 0.5,
    normalize: bool = False,
) -> Tensor:
    """Mean contrastive loss over valid pedestrians of a scene batch.

    `queries` (B, E), `keys` (B, M, E) with positives at key index 0,
    `valid` (B,) bool flags (False rows are skipped pedestrians and carry
    no gradient). All-invalid batches give exactly 0.
    """
    valid = np.asarray(valid, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return Tensor(0.0)
    if normalize:
        queries = l2_normalize(queries)
        keys = l2_normalize(keys)
    b, m, e = keys.shape
    scores = (queries.reshape(b, 1, e) * keys).sum(axis=2) * (1.0 / temperature)
    per = logsumexp(scores, axis=1) - scores[:, 0]
    return (per * valid.astype(np.float64)).sum() * (1.0 / n_valid)


def scene_mapnce_loss_all(
    queries: Tensor,
    pos_keys: Tensor,
    neg_keys: Tensor,
    valid: np.ndarray,
    temperature: float = 0.5,
    normalize: bool = False,
) -> Tensor:
    """`positive_t_mode="all"` variant: average the loss over every future
    timestep's positive, reusing one negative bank per pedestrian.

    `pos_keys` (B, T, E), `neg_keys` (B, J, E).
    """
    valid = np.asarray(valid, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return Tensor(0.0)
    if normalize:
        queries = l2_normalize(queries)
        pos_keys = l2_normalize(pos_keys)
        neg_keys = l2_normalize(neg_keys)
    b, t, e = pos_keys.shape
    j = neg_keys.shape[1]
    inv_tau = 1.0 / temperature
    q = queries.reshape(b, 1, e)
    pos_logits = (q * pos_keys).sum(axis=2) * inv_tau          # (B, T)
    neg_logits = (q * neg_keys).sum(axis=2) * inv_tau          # (B, J)
    neg_rep = neg_logits.reshape(b, 1, j).broadcast_to((b, t, j))
    all_logits = concat([pos_logits.reshape(b, t, 1), neg_rep], axis=2)
    per = (logsumexp(all_logits, axis=2) - pos_logits).mean(axis=1)
    return (per * valid.astype(np.float64)).sum() * (1.0 / n_valid)
