"""Predictor invariances, decoder semantics, and checkpoint round trips."""

import numpy as np
import pytest

from colav.gridmap import OccupancyMap
from colav.model import (
    ModelConfig,
    canonical_frame,
    canonicalize,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)


def open_map(size=100, mpp=0.1):
    return OccupancyMap(np.ones((size, size), np.uint8), np.diag([1 / mpp, 1 / mpp, 1.0]))


def random_past(rng, b=5, t=8, lo=2.0, hi=8.0):
    start = rng.uniform(lo, hi, (b, 1, 2))
    steps = rng.normal(0.0, 0.2, (b, t, 2)).cumsum(axis=1)
    return start + steps


def test_canonical_frame_origin_and_heading():
    past = np.zeros((1, 8, 2))
    past[0, :, 0] = np.linspace(0, 0.7, 8)  # walking +x
    origin, theta = canonical_frame(past)
    assert np.allclose(origin, [[0.7, 0.0]])
    assert abs(theta[0]) < 1e-12

    past_y = np.zeros((1, 4, 2))
    past_y[0, :, 1] = [0.0, 0.1, 0.2, 0.3]  # walking +y
    _, theta = canonical_frame(past_y)
    assert abs(theta[0] - np.pi / 2) < 1e-12


def test_canonical_frame_uses_last_moving_step():
    past = np.zeros((1, 5, 2))
    past[0, 1] = [1.0, 1.0]   # early diagonal move
    past[0, 2:] = [1.0, 1.0]  # then still
    _, theta = canonical_frame(past)
    assert abs(theta[0] - np.pi / 4) < 1e-12


def test_canonical_frame_stationary_defaults_plus_x():
    past = np.full((2, 8, 2), 3.0)
    origin, theta = canonical_frame(past)
    assert np.allclose(origin, 3.0)
    assert np.allclose(theta, 0.0)


def test_canonicalize_translation_invariant():
    rng = np.random.default_rng(0)
    past = random_past(rng)
    flat_a, _, _ = canonicalize(past)
    flat_b, origin_b, _ = canonicalize(past + np.array([12.3, -4.5]))
    # (a + c) - (b + c) loses a few ulps relative to a - b, so not bit-exact
    assert np.allclose(flat_a, flat_b, atol=1e-9)
    assert np.allclose(origin_b, past[:, -1] + [12.3, -4.5])


def test_canonicalize_rotation_invariant():
    rng = np.random.default_rng(1)
    past = random_past(rng)
    ang = 1.234
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    flat_a, _, theta_a = canonicalize(past)
    flat_b, _, theta_b = canonicalize(past @ R.T)
    assert np.allclose(flat_a, flat_b, atol=1e-9)
    # headings differ by exactly the applied rotation (mod 2 pi)
    d = np.mod(theta_b - theta_a - ang + np.pi, 2 * np.pi) - np.pi
    assert np.abs(d).max() < 1e-9


def test_zero_decoder_predicts_last_position():
    cfg = ModelConfig(use_map=False)
    rng = np.random.default_rng(2)
    params = init_params(cfg, rng)
    params["dec.w2"][:] = 0.0
    params["dec.b2"][:] = 0.0
    past = random_past(rng, b=3)
    preds = predict(params, cfg, past, k=4, rng=np.random.default_rng(0))
    for i in range(3):
        assert np.allclose(preds[i], past[i, -1], atol=1e-9)


def test_predict_shapes_and_determinism():
    cfg = ModelConfig(use_map=True)
    rng = np.random.default_rng(3)
    params = init_params(cfg, rng)
    past = random_past(rng)
    m = open_map()
    a = predict(params, cfg, past, m, k=6, rng=np.random.default_rng(42))
    b = predict(params, cfg, past, m, k=6, rng=np.random.default_rng(42))
    assert a.shape == (5, 6, cfg.t_pred, 2)
    assert np.array_equal(a, b)
    c = predict(params, cfg, past, m, k=6, rng=np.random.default_rng(43))
    assert not np.array_equal(a, c)


def test_predict_translation_equivariance():
    """Model without map input: translating history translates predictions."""
    cfg = ModelConfig(use_map=False)
    rng = np.random.default_rng(4)
    params = init_params(cfg, rng)
    past = random_past(rng)
    noise = np.random.default_rng(7).standard_normal((5, 3, cfg.noise_dim))
    a = predict(params, cfg, past, k=3, noise=noise)
    shift = np.array([5.0, -2.0])
    b = predict(params, cfg, past + shift, k=3, noise=noise)
    assert np.allclose(b, a + shift, atol=1e-9)


def test_predict_rotation_equivariance():
    cfg = ModelConfig(use_map=False)
    rng = np.random.default_rng(5)
    params = init_params(cfg, rng)
    past = random_past(rng)
    noise = np.random.default_rng(8).standard_normal((5, 3, cfg.noise_dim))
    ang = 0.77
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    a = predict(params, cfg, past, k=3, noise=noise)
    b = predict(params, cfg, past @ R.T, k=3, noise=noise)
    assert np.allclose(b, a @ R.T, atol=1e-6)


def test_predict_requires_map_when_configured():
    cfg = ModelConfig(use_map=True)
    params = init_params(cfg, np.random.default_rng(0))
    past = random_past(np.random.default_rng(1))
    with pytest.raises(ValueError):
        predict(params, cfg, past, occ_map=None, k=2)


def test_map_input_changes_predictions():
    cfg = ModelConfig(use_map=True)
    rng = np.random.default_rng(6)
    params = init_params(cfg, rng)
    past = random_past(rng)
    noise = np.random.default_rng(9).standard_normal((5, 2, cfg.noise_dim))
    open_preds = predict(params, cfg, past, open_map(), k=2, noise=noise)
    cells = np.ones((100, 100), np.uint8)
    cells[40:60, 40:60] = 0
    blocked = OccupancyMap(cells, np.diag([10.0, 10.0, 1.0]))
    blocked_preds = predict(params, cfg, past, blocked, k=2, noise=noise)
    assert not np.allclose(open_preds, blocked_preds)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = ModelConfig()
    params = init_params(cfg, np.random.default_rng(10))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, {"model": cfg.to_dict()}, meta={"note": "x"})
    back, config, meta = load_checkpoint(path)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])
        assert back[k].dtype == params[k].dtype
    assert config["model"]["hidden_dim"] == cfg.hidden_dim
    assert meta == {"note": "x"}


def test_checkpoint_bytes_deterministic(tmp_path):
    cfg = ModelConfig()
    params = init_params(cfg, np.random.default_rng(11))
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params, {"model": cfg.to_dict()})
    save_checkpoint(p2, {k: v.copy() for k, v in params.items()}, {"model": cfg.to_dict()})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC" + bytes(64))
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(t_obs=1)
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=0)
    with pytest.raises(ValueError):
        ModelConfig(use_map=True, patch_size=5)  # conv stack cannot fit


def test_restored_params_drive_identical_predictions(tmp_path):
    cfg = ModelConfig(use_map=True)
    rng = np.random.default_rng(12)
    params = init_params(cfg, rng)
    past = random_past(rng, b=2)
    noise = np.random.default_rng(0).standard_normal((2, 3, cfg.noise_dim))
    m = open_map()
    before = predict(params, cfg, past, m, k=3, noise=noise)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, {"model": cfg.to_dict()})
    loaded, _, _ = load_checkpoint(path)
    after = predict(loaded, cfg, past, m, k=3, noise=noise)
    assert np.array_equal(before, after)
