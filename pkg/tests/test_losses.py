"""Loss-layer oracles: hand-computed values and gradient gating."""

import numpy as np
import pytest

from colav.autodiff import Tensor
from colav.gridmap import OccupancyMap
from colav.losses import (
    collides,
    collision_mask,
    env_collision_loss,
    total_loss,
    variety_loss,
)


def block_map():
    """10x10 m walkable square with a 2x2 m obstacle at [4,6)x[4,6)."""
    cells = np.ones((20, 20), np.uint8)
    cells[8:12, 8:12] = 0
    return OccupancyMap(cells, np.diag([2.0, 2.0, 1.0]))  # 0.5 m cells


def test_collides_point_and_segment():
    m = block_map()
    safe = np.array([[1.0, 1.0], [2.0, 2.0]])
    assert not collides(safe, m)
    hit = np.array([[1.0, 1.0], [5.0, 5.0]])
    assert collides(hit, m)
    # jumps across the block: endpoints safe, midpoint inside
    jump = np.array([[3.0, 5.0], [7.0, 5.0]])
    assert not collides(jump, m)
    assert collides(jump, m, segment_check=True)


def test_collides_out_of_bounds():
    m = block_map()
    assert collides(np.array([[0.5, 0.5], [-1.0, 0.5]]), m)


def test_collision_mask_matches_scalar():
    m = block_map()
    rng = np.random.default_rng(0)
    preds = rng.uniform(0.0, 10.0, (6, 4, 5, 2))
    mask = collision_mask(preds, m)
    assert mask.shape == (6, 4)
    for i in range(6):
        for k in range(4):
            assert mask[i, k] == collides(preds[i, k], m)


def test_env_collision_loss_oracle():
    """Hand-computed: one ped, K=3, exactly two colliding samples."""
    m = block_map()
    gt = np.zeros((1, 2, 2))
    gt[0] = [[1.0, 1.0], [1.5, 1.0]]
    preds = np.zeros((1, 3, 2, 2))
    preds[0, 0] = [[1.0, 1.0], [1.5, 1.0]]  # exact, safe
    preds[0, 1] = [[5.0, 5.0], [1.5, 1.0]]  # collides at t0
    preds[0, 2] = [[1.0, 1.0], [4.5, 5.5]]  # collides at t1
    loss, mask = env_collision_loss(preds, gt, m)
    assert np.array_equal(mask, [[False, True, True]])
    err1 = (5.0 - 1.0) ** 2 + (5.0 - 1.0) ** 2          # sample 1 full sq error
    err2 = (4.5 - 1.5) ** 2 + (5.5 - 1.0) ** 2          # sample 2
    assert abs(float(loss.data) - 0.5 * (err1 + err2)) < 1e-12


def test_env_collision_loss_zero_when_safe():
    m = block_map()
    gt = np.full((2, 3, 2), 1.0)
    preds = np.full((2, 4, 3, 2), 2.0)
    loss, mask = env_collision_loss(preds, gt, m)
    assert float(loss.data) == 0.0
    assert not mask.any()


def test_env_collision_mean_over_pedestrians():
    """Pedestrians with no collisions still count in the denominator."""
    m = block_map()
    gt = np.zeros((2, 1, 2))
    gt[:] = [[1.0, 1.0]]
    preds = np.zeros((2, 2, 1, 2))
    preds[0, 0] = [[5.0, 5.0]]  # ped 0 sample 0 collides
    preds[0, 1] = [[1.0, 1.0]]
    preds[1] = [[1.0, 1.0]]     # ped 1 all safe
    loss, _ = env_collision_loss(preds, gt, m)
    expect = 0.5 * ((5.0 - 1.0) ** 2 * 2)  # ped0 mean over its 1 colliding sample, / N=2
    assert abs(float(loss.data) - expect) < 1e-12


def test_env_collision_gradient_only_on_colliding():
    m = block_map()
    gt = np.zeros((1, 2, 2))
    gt[0] = [[1.0, 1.0], [1.5, 1.0]]
    preds_val = np.zeros((1, 3, 2, 2))
    preds_val[0, 0] = [[1.2, 1.0], [1.6, 1.1]]  # safe
    preds_val[0, 1] = [[5.0, 5.0], [1.5, 1.0]]  # collides
    preds_val[0, 2] = [[1.0, 1.0], [4.5, 5.5]]  # collides
    preds = Tensor(preds_val, requires_grad=True)
    loss, mask = env_collision_loss(preds, gt, m)
    loss.backward()
    g = preds.grad
    assert np.all(g[0, 0] == 0.0)        # safe sample gets exactly zero
    assert np.any(g[0, 1] != 0.0)
    assert np.any(g[0, 2] != 0.0)
    # gate is frozen: gradient of sample 1 = 2 (pred - gt) / (n_colliding) / N
    expect = 2.0 * (preds_val[0, 1] - gt[0]) / 2.0 / 1.0
    assert np.allclose(g[0, 1], expect, atol=1e-12)


def test_env_collision_precomputed_mask_reused():
    m = block_map()
    gt = np.zeros((1, 2, 2))
    preds = np.zeros((1, 2, 2, 2)) + 1.0
    forced = np.array([[True, False]])
    loss, mask = env_collision_loss(preds, gt, m, mask=forced)
    assert mask is forced
    assert abs(float(loss.data) - (1.0 * 4)) < 1e-12  # sq err 1 per coord over 2 steps


def test_variety_loss_oracle():
    gt = np.zeros((1, 3, 2))
    preds = np.zeros((1, 2, 3, 2))
    preds[0, 0] += 1.0   # per-timestep sq err 2 -> cost 2
    preds[0, 1] += 0.5   # cost 0.5
    loss, best = variety_loss(preds, gt)
    assert best.tolist() == [1]
    assert abs(float(loss.data) - 0.5) < 1e-12


def test_variety_loss_nonargmin_zero_gradient():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(3, 4, 2))
    pv = rng.normal(size=(3, 5, 4, 2))
    preds = Tensor(pv, requires_grad=True)
    loss, best = variety_loss(preds, gt)
    loss.backward()
    for i in range(3):
        for k in range(5):
            g = preds.grad[i, k]
            if k == best[i]:
                assert np.abs(g).max() > 0.0
            else:
                assert np.all(g == 0.0), "non-argmin sample leaked gradient"


def test_variety_loss_mean_over_pedestrians():
    gt = np.zeros((2, 2, 2))
    preds = np.zeros((2, 1, 2, 2))
    preds[0] += 1.0  # cost 2.0
    preds[1] += 2.0  # cost 8.0
    loss, _ = variety_loss(preds, gt)
    assert abs(float(loss.data) - 5.0) < 1e-12


def test_total_loss_weights():
    t = total_loss(Tensor(2.0), Tensor(3.0), Tensor(4.0), lambda_env=1.0, lambda_nce=0.25)
    assert abs(float(t.data) - (2.0 + 3.0 + 1.0)) < 1e-12
    t = total_loss(1.0, 1.0, 1.0, lambda_env=0.0, lambda_nce=0.0)
    assert abs(float(t.data) - 1.0) < 1e-12


def test_shape_validation():
    m = block_map()
    with pytest.raises(ValueError):
        collides(np.zeros((3,)), m)
    with pytest.raises(ValueError):
        collision_mask(np.zeros((2, 3, 2)), m)
    with pytest.raises(ValueError):
        variety_loss(np.zeros((1, 2, 3, 2)), np.zeros((1, 3, 3)))
