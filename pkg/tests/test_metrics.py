"""Metric oracles via brute-force reference implementations."""

import json

import numpy as np
import pytest

from colav.gridmap import OccupancyMap
from colav.losses import collides
from colav.metrics import MetricsReport, ade_fde_min, ecfl


def brute_ade_fde(preds, gt):
    """Python-loop reference: independent best-of-K minima per pedestrian."""
    n, k, t, _ = preds.shape
    ades, fdes = [], []
    for i in range(n):
        best_a, best_f = np.inf, np.inf
        for s in range(k):
            d = [float(np.hypot(*(preds[i, s, j] - gt[i, j]))) for j in range(t)]
            best_a = min(best_a, sum(d) / t)
            best_f = min(best_f, d[-1])
        ades.append(best_a)
        fdes.append(best_f)
    return float(np.mean(ades)), float(np.mean(fdes))


def brute_ecfl(preds, occ_map):
    n, k = preds.shape[:2]
    hits = sum(collides(preds[i, s], occ_map) for i in range(n) for s in range(k))
    return 100.0 - 100.0 * hits / (n * k)


def block_map():
    cells = np.ones((20, 20), np.uint8)
    cells[8:12, 8:12] = 0
    return OccupancyMap(cells, np.diag([2.0, 2.0, 1.0]))


def test_ade_fde_matches_brute_force():
    rng = np.random.default_rng(0)
    preds = rng.normal(0.0, 2.0, (7, 5, 9, 2))
    gt = rng.normal(0.0, 2.0, (7, 9, 2))
    ade, fde = ade_fde_min(preds, gt)
    ba, bf = brute_ade_fde(preds, gt)
    assert abs(ade - ba) < 1e-12
    assert abs(fde - bf) < 1e-12


def test_ade_fde_minima_are_independent():
    """Best-ADE sample and best-FDE sample deliberately differ."""
    gt = np.zeros((1, 2, 2))
    preds = np.zeros((1, 2, 2, 2))
    preds[0, 0] = [[0.0, 0.0], [3.0, 0.0]]   # ade 1.5, fde 3
    preds[0, 1] = [[10.0, 0.0], [1.0, 0.0]]  # ade 5.5, fde 1
    ade, fde = ade_fde_min(preds, gt)
    assert abs(ade - 1.5) < 1e-12
    assert abs(fde - 1.0) < 1e-12  # from the other sample


def test_perfect_prediction_zero_error():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(4, 6, 2))
    preds = np.repeat(gt[:, None], 3, axis=1)
    ade, fde = ade_fde_min(preds, gt)
    assert ade == 0.0 and fde == 0.0


def test_ecfl_matches_brute_force():
    m = block_map()
    rng = np.random.default_rng(2)
    preds = rng.uniform(0.0, 10.0, (10, 8, 6, 2))
    assert abs(ecfl(preds, m) - brute_ecfl(preds, m)) < 1e-12


def test_ecfl_extremes():
    m = block_map()
    safe = np.full((3, 4, 5, 2), 1.0)
    assert ecfl(safe, m) == 100.0
    inside = np.full((3, 4, 5, 2), 5.0)
    assert ecfl(inside, m) == 0.0


def test_ecfl_counts_samples_not_points():
    m = block_map()
    preds = np.full((1, 2, 4, 2), 1.0)
    preds[0, 1, 2] = [5.0, 5.0]  # one sample clips the block at one timestep
    assert abs(ecfl(preds, m) - 50.0) < 1e-12


def test_metrics_report_round_trip():
    rng = np.random.default_rng(3)
    m = block_map()
    gt = np.full((5, 4, 2), 1.5)
    preds = np.repeat(gt[:, None], 6, axis=1) + rng.normal(0, 0.01, (5, 6, 4, 2))
    rep = MetricsReport.from_predictions(preds, gt, m)
    doc = json.loads(rep.to_json())
    assert doc["n_pedestrians"] == 5 and doc["k_samples"] == 6
    assert doc["ecfl"] == 100.0
    assert 0.0 < doc["ade"] < 0.1
    assert set(doc) >= {"ade", "fde", "ecfl", "n_pedestrians", "k_samples"}


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ade_fde_min(np.zeros((2, 3, 4, 2)), np.zeros((2, 5, 2)))
    with pytest.raises(ValueError):
        ade_fde_min(np.zeros((2, 3, 4)), np.zeros((2, 4, 2)))
