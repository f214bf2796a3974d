"""Training losses over multi-sample trajectory predictions.

Shapes follow one convention: predictions (N, K, T, 2) for N pedestrians
with K sampled futures of T steps, ground truth (N, T, 2), all world
meters. Two losses route gradients through data-dependent gates that are
frozen within a step: the variety loss backpropagates only through each
pedestrian's best sample, and the environmental collision loss only through
samples currently colliding with the map (collision membership is decided
from forward values and treated as a constant in the backward pass).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor
from .gridmap import OccupancyMap

__all__ = [
    "LossBreakdown",
    "collides",
    "collision_mask",
    "env_collision_loss",
    "variety_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss components (floats, for logging)."""

    variety: float
    env_col: float
    map_nce: float
    total: float
    colliding_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def collides(
    trajectory: np.ndarray, occ_map: OccupancyMap, segment_check: bool = False
) -> bool:
    """True when any trajectory point lands in an obstacle cell.

    With `segment_check` the midpoint of every consecutive point pair is
    tested too, which catches thin walls crossed between samples.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[-1] != 2:
        raise ValueError(f"trajectory must be (T, 2), got {traj.shape}")
    if bool(occ_map.is_obstacle(traj).any()):
        return True
    if segment_check and traj.shape[0] > 1:
        mid = 0.5 * (traj[:-1] + traj[1:])
        return bool(occ_map.is_obstacle(mid).any())
    return False


def collision_mask(
    preds: np.ndarray, occ_map: OccupancyMap, segment_check: bool = False
) -> np.ndarray:
    """Vectorized collides over (N, K, T, 2) -> bool (N, K)."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 4 or preds.shape[-1] != 2:
        raise ValueError(f"preds must be (N, K, T, 2), got {preds.shape}")
    hit = occ_map.is_obstacle(preds).any(axis=2)
    if segment_check and preds.shape[2] > 1:
        mid = 0.5 * (preds[:, :, :-1] + preds[:, :, 1:])
        hit |= occ_map.is_obstacle(mid).any(axis=2)
    return hit


def env_collision_loss(
    preds,
    gt: np.ndarray,
    occ_map: OccupancyMap,
    segment_check: bool = False,
    mask: np.ndarray | None = None,
):
    """Pull colliding samples toward ground truth.

    Per pedestrian: the mean over currently-colliding samples of the full
    squared trajectory error ||pred - gt||^2 (summed over timesteps and
    axes), or 0 when nothing collides; the scene value is the mean over all
    N pedestrians. Returns ``(loss, mask)`` where `loss` is a scalar Tensor
    and `mask` the frozen (N, K) collision gate used; gradients reach only
    gated samples. Pass a precomputed `mask` to skip the occupancy test.
    """
    preds = Tensor._lift(preds)
    gt = np.asarray(gt, dtype=np.float64)
    n, k = preds.shape[0], preds.shape[1]
    if mask is None:
        mask = collision_mask(preds.data, occ_map, segment_check)
    counts = mask.sum(axis=1)
    weights = np.zeros((n, k))
    rows = counts > 0
    weights[rows] = mask[rows] / counts[rows, None]
    diff = preds - gt[:, None, :, :]
    sq = (diff * diff).sum(axis=(2, 3))
    loss = (sq * weights).sum() * (1.0 / n)
    return loss, mask


def variety_loss(preds, gt: np.ndarray):
    """Best-of-K regression loss with hard gradient routing.

    Per-sample cost is the per-timestep mean squared displacement; each
    pedestrian contributes only its argmin sample (selected on forward
    values, so every other sample gets an exactly-zero gradient) and the
    scene value is the mean over pedestrians. Returns ``(loss, argmin)``.
    """
    preds = Tensor._lift(preds)
    gt = np.asarray(gt, dtype=np.float64)
    if preds.ndim != 4 or gt.ndim != 3:
        raise ValueError(
            f"expected preds (N, K, T, 2) and gt (N, T, 2), got {preds.shape}, {gt.shape}"
        )
    diff = preds - gt[:, None, :, :]
    per_sample = (diff * diff).sum(axis=3).mean(axis=2)  # (N, K)
    best = np.argmin(per_sample.data, axis=1)
    onehot = np.zeros(per_sample.shape)
    onehot[np.arange(len(best)), best] = 1.0
    loss = (per_sample * onehot).sum(axis=1).mean()
    return loss, best


def total_loss(
    variety,
    env_col,
    map_nce,
    lambda_env: float = 1.0,
    lambda_nce: float = 0.25,
) -> Tensor:
    """Weighted sum: variety + lambda_env * env_col + lambda_nce * map_nce."""
    return (
        Tensor._lift(variety)
        + Tensor._lift(env_col) * lambda_env
        + Tensor._lift(map_nce) * lambda_nce
    )
