import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chroma_se.codec import ColorImage, DisplayRange, PixelDataset, encode_named, pixel_dataset
from chroma_se.regnet import (GRAY_SIZES, RegnetFormatError, RegnetTrainConfig, UntrainedModelError, regnet_decode,
                              regnet_forward, regnet_grad, regnet_init, regnet_load, regnet_mse, regnet_save,
                              regnet_train, split_indices)

RANGE = DisplayRange(-23.0, 6.0)


def trained_stub(seed=0, sizes=None):
    m = regnet_init(seed) if sizes is None else regnet_init(seed, sizes)
    m.input_mean = np.full(m.n_inputs, 0.5)
    m.input_std = np.full(m.n_inputs, 0.3)
    return m


def test_init_deterministic_and_seed_sensitive():
    a, b, c = regnet_init(4), regnet_init(4), regnet_init(5)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert any(not np.array_equal(p, q) for p, q in zip(a.params(), c.params()))
    assert all(not np.any(bias) for bias in a.biases)


def test_parameter_counts():
    assert regnet_init().count() == (240, 271)
    assert 3 * 10 + 10 * 10 + 10 * 10 + 10 * 1 == 240
    assert regnet_init(0, GRAY_SIZES).count() == (220, 251)


def test_zero_weights_output_bias():
    m = regnet_init()
    for w in m.weights:
        w[:] = 0
    m.biases[-1][:] = 3.25
    x = np.random.default_rng(0).uniform(size=(7, 3))
    np.testing.assert_array_equal(regnet_forward(m, x, bypass_stats=True), 3.25)


def test_single_path_hand_arithmetic():
    m = regnet_init()
    for w in m.weights:
        w[:] = 0
    for b in m.biases:
        b[:] = 0
    m.weights[0][1, 0] = 0.8
    m.biases[0][0] = 0.1
    m.weights[1][0, 0] = 1.5
    m.weights[2][0, 0] = -0.7
    m.weights[3][0, 0] = 2.0
    m.biases[3][0] = -4.0
    m.input_mean = np.array([0.2, 0.4, 0.6])
    m.input_std = np.array([0.1, 0.25, 0.3])
    rgb = np.array([0.3, 0.9, 0.1])
    g = (0.9 - 0.4) / 0.25
    expected = np.tanh(-0.7 * np.tanh(1.5 * np.tanh(0.8 * g + 0.1))) * 2.0 - 4.0
    assert regnet_forward(m, rgb) == pytest.approx(expected, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000))
def test_output_bound(seed):
    m = regnet_init(seed)
    m.biases[-1][:] = np.random.default_rng(seed).normal()
    x = np.random.default_rng(seed).normal(scale=50, size=(50, 3))
    bound = np.abs(m.weights[-1]).sum() + abs(m.biases[-1][0])
    assert np.all(np.abs(regnet_forward(m, x, bypass_stats=True)) <= bound + 1e-12)


def test_untrained_forward_and_decode_raise():
    m = regnet_init()
    with pytest.raises(UntrainedModelError):
        regnet_forward(m, [0.1, 0.2, 0.3])
    img = ColorImage(np.zeros((4, 4, 3)), "gray", RANGE)
    with pytest.raises(UntrainedModelError):
        regnet_decode(m, img)


def _flat(grads):
    return np.concatenate([g.ravel() for g in grads])


def numeric_grad(m, x, y):
    out = []
    for p in m.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            h = 1e-5 * max(1.0, abs(orig))
            p[idx] = orig + h
            fp = regnet_mse(m, x, y, bypass_stats=True)
            p[idx] = orig - h
            fm = regnet_mse(m, x, y, bypass_stats=True)
            p[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def test_gradient_matches_finite_differences_20_trials():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(trial)
        m = regnet_init(trial)
        for b in m.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)
        x, y = rng.normal(size=(16, 3)), rng.normal(scale=3, size=16)
        ana = _flat(regnet_grad(m, x, y, bypass_stats=True))
        num = _flat(numeric_grad(m, x, y))
        assert ana.size == 271
        worst = max(worst, np.max(np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)))
    assert worst <= 1e-4


def test_gradient_zero_at_minimum_and_batch_duplication():
    m = regnet_init(1)
    x = np.random.default_rng(0).normal(size=(10, 3))
    y = regnet_forward(m, x, bypass_stats=True)
    assert np.max(np.abs(_flat(regnet_grad(m, x, y, bypass_stats=True)))) == 0
    y2 = y + 1.0
    g1 = _flat(regnet_grad(m, x, y2, bypass_stats=True))
    g2 = _flat(regnet_grad(m, np.vstack([x, x]), np.concatenate([y2, y2]), bypass_stats=True))
    np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=1e-15)
    with pytest.raises(ValueError, match="empty"):
        regnet_grad(m, np.zeros((0, 3)), [], bypass_stats=True)


def _dataset(n, fn, seed=0):
    rgb = np.random.default_rng(seed).uniform(size=(n, 3))
    return PixelDataset(rgb, fn(rgb))


def test_constant_target():
    data = _dataset(2000, lambda r: np.full(len(r), -7.5))
    # small batches: the hidden units need many updates to flatten out
    _, report = regnet_train(regnet_init(), data, RegnetTrainConfig(epochs=300, batch_size=16))
    assert report.test_mse <= 1e-6


def test_linear_target():
    data = _dataset(4000, lambda r: 40 * r[:, 0] - 23)
    _, report = regnet_train(regnet_init(), data, RegnetTrainConfig(epochs=200, batch_size=32))
    assert report.test_mse <= 1e-3
    assert report.n_train == 3200 and report.n_test == 800
    assert len(report.loss_curve) == 200
    assert "adam" in report.optimizer


def test_training_deterministic():
    data = _dataset(500, lambda r: r.sum(axis=1))
    cfg = RegnetTrainConfig(epochs=5, seed=3)
    a, ra = regnet_train(regnet_init(), data, cfg)
    b, rb = regnet_train(regnet_init(), data, cfg)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert ra.loss_curve == rb.loss_curve


def test_standardization_uses_training_split_only():
    data = _dataset(1000, lambda r: r[:, 1])
    cfg = RegnetTrainConfig(epochs=1, seed=2)
    train_idx, test_idx = split_indices(len(data), cfg.holdout, cfg.seed)
    m, _ = regnet_train(regnet_init(), data, cfg)
    np.testing.assert_allclose(m.input_mean, data.rgb[train_idx].mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(m.input_std, data.rgb[train_idx].std(axis=0), rtol=1e-14)
    # changing test rows must not move the statistics
    poisoned = PixelDataset(data.rgb.copy(), data.target)
    poisoned.rgb[test_idx] = 100.0
    m2, _ = regnet_train(regnet_init(), poisoned, cfg)
    np.testing.assert_array_equal(m.input_mean, m2.input_mean)
    np.testing.assert_array_equal(m.input_std, m2.input_std)


def test_train_errors():
    with pytest.raises(ValueError, match="too small"):
        regnet_train(regnet_init(), _dataset(50, lambda r: r[:, 0]))
    with pytest.raises(ValueError):
        RegnetTrainConfig(holdout=1.0)
    with pytest.raises(ValueError):
        RegnetTrainConfig(epochs=0)
    bad = _dataset(200, lambda r: np.full(len(r), np.inf))
    with pytest.raises(FloatingPointError):
        regnet_train(regnet_init(), bad, RegnetTrainConfig(epochs=1))


def test_decode_uniform_and_elementwise():
    m = trained_stub()
    img = ColorImage(np.full((8, 8, 3), [0.2, 0.5, 0.9]), "jet", RANGE)
    out = regnet_decode(m, img).values
    np.testing.assert_array_equal(out, regnet_forward(m, np.array([0.2, 0.5, 0.9])))
    px = np.random.default_rng(0).uniform(size=(8, 8, 3))
    d = regnet_decode(m, ColorImage(px, "jet", RANGE)).values
    # row 0 of the image is the highest frequency
    assert d[2, 5] == pytest.approx(regnet_forward(m, px[8 - 1 - 2, 5]), abs=1e-15)
    # transposing the underlying grid transposes the decoded matrix
    grid = px[::-1]
    px_t = grid.transpose(1, 0, 2)[::-1]
    np.testing.assert_array_equal(regnet_decode(m, ColorImage(px_t, "jet", RANGE)).values, d.T)
    perm = np.random.default_rng(1).permutation(8)
    np.testing.assert_array_equal(regnet_decode(m, ColorImage(px[:, perm], "jet", RANGE)).values, d[:, perm])


def test_gray_variant_decodes_channel_mean():
    m = trained_stub(sizes=GRAY_SIZES)
    assert m.count() == (220, 251)
    img = encode_named(np.linspace(-20, 5, 64).reshape(8, 8), "gray", RANGE, size=None)
    d = regnet_decode(m, img).values
    np.testing.assert_array_equal(d[0, 0], regnet_forward(m, img.pixels[-1, 0, :1]))


def test_round_trip_on_encoded_image():
    rng = np.random.default_rng(0)
    lps = [rng.uniform(-20, 5, size=(32, 32)) for _ in range(3)]
    imgs = [encode_named(v, "parula", RANGE, size=None) for v in lps]
    m, rep = regnet_train(regnet_init(), pixel_dataset(zip(imgs, lps)), RegnetTrainConfig(epochs=300, batch_size=32))
    err = regnet_decode(m, imgs[0]).values - lps[0]
    # 8-bit quantization alone leaves step**2 / 12 of squared error
    step = (RANGE.hi - RANGE.lo) / 255
    assert np.mean(err ** 2) < step ** 2 / 12 + 0.01
    assert rep.test_mse <= 0.3


def test_save_load_round_trip(tmp_path):
    m = trained_stub(2)
    path = tmp_path / "regnet.json"
    regnet_save(m, path)
    m2 = regnet_load(path)
    x = np.random.default_rng(0).uniform(size=(100, 3))
    np.testing.assert_array_equal(regnet_forward(m, x), regnet_forward(m2, x))


def test_load_errors(tmp_path):
    m = trained_stub()
    path = tmp_path / "regnet.json"
    regnet_save(m, path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    bad = tmp_path / "v99.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(RegnetFormatError, match="version"):
        regnet_load(bad)
    trunc = tmp_path / "trunc.json"
    trunc.write_text(path.read_text()[:-40])
    with pytest.raises(RegnetFormatError, match="truncated"):
        regnet_load(trunc)
    other = tmp_path / "other.json"
    other.write_text("[1, 2]")
    with pytest.raises(RegnetFormatError):
        regnet_load(other)
