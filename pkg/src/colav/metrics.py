"""Evaluation metrics for multi-sample trajectory predictions.

All distances are world meters. Predictions have shape (N, K, T, 2) and
ground truth (N, T, 2); metrics are best-of-K per pedestrian, then averaged
over pedestrians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gridmap import OccupancyMap
from .losses import collision_mask

__all__ = ["ade_fde_min", "ecfl", "MetricsReport"]


def _check_shapes(preds: np.ndarray, gt: np.ndarray | None = None) -> None:
    if preds.ndim != 4 or preds.shape[-1] != 2:
        raise ValueError(f"preds must be (N, K, T, 2), got {preds.shape}")
    if gt is not None:
        if gt.shape != (preds.shape[0], preds.shape[2], 2):
            raise ValueError(
                f"gt shape {gt.shape} does not match preds {preds.shape}"
            )


def ade_fde_min(preds: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Best-of-K average and final displacement errors.

    Parameters
    ----------
    preds : ndarray (N, K, T, 2)
        K sampled future trajectories per pedestrian.
    gt : ndarray (N, T, 2)
        Ground-truth futures.

    Returns
    -------
    (ade, fde) : tuple of float
        ADE is the per-pedestrian minimum over samples of the mean
        Euclidean point error, FDE the minimum final-point error. The two
        minima are taken independently, so they may come from different
        samples; both are then averaged over pedestrians.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(preds, gt)
    dist = np.linalg.norm(preds - gt[:, None, :, :], axis=3)  # (N, K, T)
    ade = dist.mean(axis=2).min(axis=1)
    fde = dist[:, :, -1].min(axis=1)
    return float(ade.mean()), float(fde.mean())


def ecfl(
    preds: np.ndarray, occ_map: OccupancyMap, segment_check: bool = False
) -> float:
    """Percentage of sampled trajectories that stay collision-free.

    ECFL = 100 - 100 * (colliding samples) / (N * K); 100.0 means no sample
    of any pedestrian ever enters an obstacle cell.
    """
    preds = np.asarray(preds, dtype=np.float64)
    _check_shapes(preds)
    mask = collision_mask(preds, occ_map, segment_check)
    n, k = mask.shape
    return 100.0 - 100.0 * float(mask.sum()) / float(n * k)


@dataclass
class MetricsReport:
    """Flat, JSON-serializable evaluation summary."""

    ade: float
    fde: float
    ecfl: float
    n_pedestrians: int
    k_samples: int
    per_scene: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "ade": self.ade,
            "fde": self.fde,
            "ecfl": self.ecfl,
            "n_pedestrians": self.n_pedestrians,
            "k_samples": self.k_samples,
        }
        out.update(self.extra)
        if self.per_scene:
            out["per_scene"] = self.per_scene
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_predictions(
        cls,
        preds: np.ndarray,
        gt: np.ndarray,
        occ_map: OccupancyMap,
        segment_check: bool = False,
    ) -> "MetricsReport":
        ade, fde = ade_fde_min(preds, gt)
        return cls(
            ade=ade,
            fde=fde,
            ecfl=ecfl(preds, occ_map, segment_check),
            n_pedestrians=int(preds.shape[0]),
            k_samples=int(preds.shape[1]),
        )
