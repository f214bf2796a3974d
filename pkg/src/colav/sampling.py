"""Contrastive sample construction from obstacle contours.

For each pedestrian the trainer needs one positive (a lightly perturbed
ground-truth future point) and a bank of negatives placed on obstacle
boundaries: Z seed contour points near the pedestrian, each expanded into 8
points on a ring of radius rho at the compass angles k*pi/4. All randomness
is split into purpose-specific generator streams so that, for example,
changing the future trajectory can never shift which contour seeds get
drawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplingConfig",
    "SampleStreams",
    "SampleSet",
    "draw_positive",
    "select_seeds",
    "expand_negatives",
    "build_sample_set",
]

# ring template: 8 compass directions, p-minor order within each seed
_RING_ANGLES = np.arange(8) * (np.pi / 4.0)
_RING_UNIT = np.stack([np.cos(_RING_ANGLES), np.sin(_RING_ANGLES)], axis=-1)


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for positive/negative construction (distances in meters)."""

    z_seeds: int = 10
    rho_m: float = 0.5
    c_eps_m: float = 0.05
    seed_radius_m: float = 8.0
    positive_t_mode: str = "uniform"

    def __post_init__(self):
        if self.z_seeds < 1:
            raise ValueError(f"z_seeds must be >= 1, got {self.z_seeds}")
        if self.rho_m <= 0 or self.c_eps_m < 0 or self.seed_radius_m <= 0:
            raise ValueError("rho_m/seed_radius_m must be > 0 and c_eps_m >= 0")
        if self.positive_t_mode not in ("uniform", "all"):
            raise ValueError(f"positive_t_mode must be uniform|all, got {self.positive_t_mode!r}")


class SampleStreams:
    """Independent RNG streams per randomness purpose.

    Streams: `timestep` (positive-timestep draw), `positive`
    (positive-point noise), `seeds` (contour seed selection), `negatives`
    (negative-point noise). Consuming one stream never advances another.
    """

    def __init__(self, seed_seq: np.random.SeedSequence):
        kids = seed_seq.spawn(4)
        self.timestep = np.random.default_rng(kids[0])
        self.positive = np.random.default_rng(kids[1])
        self.seeds = np.random.default_rng(kids[2])
        self.negatives = np.random.default_rng(kids[3])

    @classmethod
    def from_seed(cls, *entropy) -> "SampleStreams":
        return cls(np.random.SeedSequence(entropy))


@dataclass
class SampleSet:
    """One pedestrian's contrastive batch ingredients (world meters).

    `positive` has shape (2,), `negatives` (z_seeds * 8, 2) in seed-major
    order, `seed_indices` indexes the scene contour array. `skip` marks
    pedestrians with no contours at all; such sets carry empty negatives and
    must be excluded from the contrastive loss.
    """

    positive: np.ndarray
    negatives: np.ndarray
    seed_indices: np.ndarray
    t_index: int
    skip: bool = False
    positives_all: np.ndarray | None = field(default=None, repr=False)


def draw_positive(
    future: np.ndarray, t: int, c_eps: float, rng: np.random.Generator
) -> np.ndarray:
    """Ground-truth future point at timestep `t` (1-based) plus N(0, c_eps^2 I)."""
    future = np.asarray(future, dtype=np.float64)
    if not 1 <= t <= future.shape[0]:
        raise IndexError(f"t must be in 1..{future.shape[0]}, got {t}")
    return future[t - 1] + c_eps * rng.standard_normal(2)


def select_seeds(
    contours: np.ndarray,
    position: np.ndarray,
    cfg: SamplingConfig,
    rng: np.random.Generator,
    in_range: np.ndarray | None = None,
) -> np.ndarray:
    """Pick Z contour indices near `position`.

    Uniformly samples distinct indices among contours within
    ``cfg.seed_radius_m``; if fewer than Z are in range the pool widens to
    all contours, and if the map has fewer than Z contours total, indices
    repeat (sampling with replacement). No contours at all yields an empty
    index array, which flags the pedestrian for skipping.

    `in_range` optionally supplies precomputed in-radius indices so per-step
    training loops can skip the distance scan.
    """
    contours = np.asarray(contours, dtype=np.float64).reshape(-1, 2)
    m = contours.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if in_range is None:
        d2 = np.sum((contours - np.asarray(position, dtype=np.float64)) ** 2, axis=1)
        in_range = np.nonzero(d2 <= cfg.seed_radius_m**2)[0]
    pool = in_range if in_range.size >= cfg.z_seeds else np.arange(m)
    if pool.size >= cfg.z_seeds:
        return np.sort(rng.choice(pool, size=cfg.z_seeds, replace=False))
    return np.sort(rng.choice(pool, size=cfg.z_seeds, replace=True))


def expand_negatives(
    seeds: np.ndarray, cfg: SamplingConfig, rng: np.random.Generator
) -> np.ndarray:
    """Expand (Z, 2) seed points into (Z*8, 2) ring negatives.

    Negative z*8 + p sits at seed z displaced by rho along angle p*pi/4,
    plus per-point Gaussian noise with std c_eps per axis.
    """
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    ring = seeds[:, None, :] + cfg.rho_m * _RING_UNIT[None, :, :]
    noise = cfg.c_eps_m * rng.standard_normal(ring.shape)
    return (ring + noise).reshape(-1, 2)


def build_sample_set(
    window,
    contours: np.ndarray,
    cfg: SamplingConfig,
    streams: SampleStreams,
    in_range: np.ndarray | None = None,
) -> SampleSet:
    """Assemble the positive and negatives for one trajectory window.

    `window` needs `past` (T_obs, 2) and `future` (T_pred, 2) arrays; seeds
    are drawn around the last observed position. With
    ``positive_t_mode="all"`` the set additionally carries perturbed
    positives for every future timestep in `positives_all`.
    """
    future = np.asarray(window.future, dtype=np.float64)
    t_pred = future.shape[0]
    t = int(streams.timestep.integers(1, t_pred + 1))
    positive = draw_positive(future, t, cfg.c_eps_m, streams.positive)
    positives_all = None
    if cfg.positive_t_mode == "all":
        positives_all = future + cfg.c_eps_m * streams.positive.standard_normal(
            future.shape
        )
    idx = select_seeds(
        contours, np.asarray(window.past)[-1], cfg, streams.seeds, in_range=in_range
    )
    if idx.size == 0:
        return SampleSet(
            positive=positive,
            negatives=np.zeros((0, 2)),
            seed_indices=idx,
            t_index=t,
            skip=True,
            positives_all=positives_all,
        )
    negatives = expand_negatives(
        np.asarray(contours, dtype=np.float64)[idx], cfg, streams.negatives
    )
    return SampleSet(
        positive=positive,
        negatives=negatives,
        seed_indices=idx,
        t_index=t,
        skip=False,
        positives_all=positives_all,
    )
