"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; a summary with one
PASS/FAIL line per criterion is printed at the end of the session.
"""
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from chroma_se import pipeline
from chroma_se.dsp import AudioClip, istft, lps_from_magnitude, magnitude_from_lps, read_wav, stft, write_wav
from chroma_se.fixtures import mix_at_snr, noise, synth_speech, write_corpus
from chroma_se.metrics import lsd_metric, seg_snr, stoi
from chroma_se.regnet import regnet_grad, regnet_init, regnet_mse
from chroma_se.unet import (REFERENCE_PARAM_COUNT, LayerSpec, TrainRunConfig, UNetConfig, count_params, lsd_loss,
                            train_denoiser, unet_backward, unet_build, unet_forward)
from chroma_se.unet import layers as L

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tools"))
from make_stoi_golden import make_pair  # noqa: E402


def report(record_property, line):
    print(line)
    record_property("detail", line)


# ---------------------------------------------------------------------------

@pytest.mark.criterion(1, "STFT/ISTFT round trip")
def test_c1_stft_round_trip(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = np.inf
    for _ in range(20):
        x = rng.standard_normal(65920)
        y = istft(stft(AudioClip(x, 16000))).samples
        # interior: away from the first and last frame, where the window sum is incomplete
        a, b = x[512:len(y) - 512], y[512:len(y) - 512]
        worst = min(worst, 10 * np.log10(np.sum(a ** 2) / np.sum((a - b) ** 2)))
    elapsed = time.perf_counter() - t0
    report(record_property, f"worst interior SNR {worst:.1f} dB (>= 60), {elapsed:.2f} s (< 5)")
    assert worst >= 60 and elapsed < 5


@pytest.mark.criterion(2, "LPS inverse pair")
def test_c2_lps_inverse_pair(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10):
        m = 10 ** rng.uniform(-4, 4, size=(257, 256))
        back = magnitude_from_lps(lps_from_magnitude(m))
        worst = max(worst, float(np.max(np.abs(back - m) / m)))
    elapsed = time.perf_counter() - t0
    report(record_property, f"max relative error {worst:.2e} (<= 1e-9), {elapsed:.3f} s (< 1)")
    assert worst <= 1e-9 and elapsed < 1


def _regnet_fd_worst():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        m = regnet_init(trial)
        for b in m.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)
        x, y = rng.normal(size=(16, 3)), rng.normal(scale=3, size=16)
        ana = regnet_grad(m, x, y, bypass_stats=True)
        for p, g in zip(m.params(), ana):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                h = 1e-5 * max(1.0, abs(orig))
                p[idx] = orig + h
                fp = regnet_mse(m, x, y, bypass_stats=True)
                p[idx] = orig - h
                fm = regnet_mse(m, x, y, bypass_stats=True)
                p[idx] = orig
                num = (fp - fm) / (2 * h)
                worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    return worst


def _unet_fd_worst(mode):
    m = unet_build(UNetConfig.desk(scale_divisor=64, size=8, depth=2, init_std=0.5))
    rng = np.random.default_rng(7)
    for k in m.params:
        if k.endswith((".bias", ".gamma", ".beta")):
            m.params[k] = m.params[k] + rng.normal(0, 0.1, m.params[k].shape)
    for k in m.buffers:
        m.buffers[k] = m.buffers[k] + rng.uniform(0, 0.2, m.buffers[k].shape)
    x, target = rng.normal(size=(8, 8, 3)), rng.normal(size=(8, 8, 3))
    _, grads = unet_backward(m, x, target, mode=mode, seed=11)
    worst = 0.0
    for name, p in m.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            h = 1e-6 * max(1.0, abs(orig))
            p[idx] = orig + h
            lp = lsd_loss(target, unet_forward(m, x, mode, 11, update_stats=False))
            p[idx] = orig - h
            lm = lsd_loss(target, unet_forward(m, x, mode, 11, update_stats=False))
            p[idx] = orig
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]), 1e-6))
    return worst


def _adjoint_worst():
    rng = np.random.default_rng(4)
    worst = 0.0
    for shape, kernel, stride in [((16, 16), (5, 7), (1, 2)), ((15, 9), (3, 3), (2, 2)),
                                  ((8, 8), (5, 5), (2, 2)), ((7, 12), (3, 5), (1, 1))]:
        k = rng.normal(size=kernel + (3, 4))
        x = rng.normal(size=shape + (3,))
        cx = L.conv2d(x, k, stride=stride)
        y = rng.normal(size=cx.shape)
        lhs = np.sum(cx * y)
        rhs = np.sum(x * L.conv2d_transpose(y, k, stride=stride, out_hw=shape))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


@pytest.mark.criterion(3, "gradient suites")
def test_c3_gradients(record_property):
    t0 = time.perf_counter()
    reg = _regnet_fd_worst()
    unet = max(_unet_fd_worst("eval"), _unet_fd_worst("train"))
    adj = _adjoint_worst()
    elapsed = time.perf_counter() - t0
    report(record_property, f"regnet {reg:.1e} (<= 1e-4), tiny U-Net {unet:.1e} (<= 1e-3), "
                            f"adjoint {adj:.1e} (<= 1e-9), {elapsed:.1f} s (< 60)")
    assert reg <= 1e-4 and unet <= 1e-3 and adj <= 1e-9 and elapsed < 60


@pytest.mark.criterion(4, "LSD definition")
def test_c4_lsd(record_property):
    rng = np.random.default_rng(0)
    # integer-valued entries keep s + 0.5 - s exact in floating point
    s = rng.integers(-40, 40, size=(256, 257)).astype(float)
    zero = lsd_loss(s, s)
    offset = lsd_loss(s, s + 0.5)
    a, b = rng.normal(size=(257, 256)), rng.normal(size=(257, 256))
    same = lsd_metric(a, b) == lsd_loss(a.T, b.T)
    report(record_property, f"LSD(S,S)={zero}, LSD(S,S+0.5)={offset!r}, metric == loss bitwise: {same}")
    assert zero == 0.0 and offset == 0.5 and same


@pytest.fixture(scope="module")
def bench_corpus(tmp_path_factory):
    """Clean speech fixtures: 2 training files and 16 test segments (about 66 s)."""
    root = tmp_path_factory.mktemp("bench")
    write_corpus(root / "corpus" / "train", n_files=2, duration=9.0, seed=1, snr_db=10)
    write_corpus(root / "corpus" / "test", n_files=7, duration=10.0, seed=2, snr_db=10)
    man = pipeline.cmd_prepare(root / "corpus", root / "exp")
    return man


@pytest.mark.criterion(5, "colormap round-trip benchmark")
def test_c5_colormap_bench(bench_corpus, record_property):
    man = bench_corpus
    n_test = len(man.segments["test"]["clean"])
    assert n_test * man.segment_len / man.sample_rate >= 60
    t0 = time.perf_counter()
    rows = pipeline.cmd_colormap_bench(man, ["parula", "pink", "prism"], n_train_images=2, epochs=200,
                                       include_gray_1input=False)
    elapsed = time.perf_counter() - t0
    s = {r["colormap"]: r["stoi"] for r in rows}
    report(record_property, f"STOI parula {s['parula']:.4f} pink {s['pink']:.4f} prism {s['prism']:.4f} "
                            f"over {n_test} segments, {elapsed:.0f} s (< 600)")
    assert s["parula"] >= 0.90
    assert s["parula"] > s["pink"] > s["prism"]
    assert s["prism"] <= 0.6
    assert elapsed < 600


@pytest.mark.criterion(6, "regnet reproduction at desk scale")
def test_c6_regnet(bench_corpus, tmp_path, record_property):
    man = bench_corpus
    t0 = time.perf_counter()
    cfg = pipeline.RegnetTrainConfig(epochs=100, seed=0)
    _, rep, data = pipeline.train_regnet_for(man, "parula", 2, cfg)
    elapsed = time.perf_counter() - t0
    report(record_property, f"parula hold-out MSE {rep.test_mse:.4f} (<= 0.3) on {len(data)} rows, "
                            f"{elapsed:.0f} s (< 300)")
    assert rep.test_mse <= 0.3 and elapsed < 300


@pytest.mark.skipif(os.environ.get("CHROMA_SE_FULL") != "1",
                    reason="full 10-image, 1000-epoch protocol; set CHROMA_SE_FULL=1 to run")
def test_c6_regnet_full_protocol(tmp_path):
    write_corpus(tmp_path / "corpus", n_files=5, duration=9.0, seed=3, snr_db=10)
    man = pipeline.cmd_prepare(tmp_path / "corpus", tmp_path / "exp")
    _, rep, data = pipeline.train_regnet_for(man, "parula", 10, pipeline.RegnetTrainConfig())
    assert len(data) == 655_360
    assert rep.test_mse <= 0.2


@pytest.mark.criterion(7, "U-Net optimization smoke test")
def test_c7_unet_smoke(record_property):
    t0 = time.perf_counter()
    cfg = UNetConfig.desk(scale_divisor=8, size=64)
    rng = np.random.default_rng(0)
    clean = gaussian_filter(rng.normal(size=(64, 64, 3)), (2, 2, 0))
    clean /= clean.std()
    noisy = clean + 0.5 * rng.normal(size=clean.shape)
    run = TrainRunConfig(steps=500)
    assert (run.lr, run.beta1, run.beta2) == (1e-4, 0.5, 0.9)
    _, _, curve = train_denoiser(unet_build(cfg), [(noisy, clean)], run)
    elapsed = time.perf_counter() - t0
    first, last = curve[0][1], curve[-1][1]
    report(record_property, f"loss {first:.4f} -> {last:.4f} ({100 * last / first:.1f}% of initial, <= 20%), "
                            f"{elapsed:.0f} s (< 600)")
    assert len(curve) == 500 and last <= 0.2 * first and elapsed < 600


def _hand_count(cfg):
    ch = [s.channels // cfg.scale_divisor for s in cfg.layers]
    total, cin = 0, cfg.in_channels
    for spec, c in zip(cfg.layers, ch):
        total += spec.kernel[0] * spec.kernel[1] * cin * c + c + 2 * c
        cin = c
    n = len(ch)
    for k in range(n):
        enc = n - 1 - k
        kh, kw = cfg.layers[enc].kernel
        d_in = ch[-1] if k == 0 else 2 * ch[enc]
        d_out = cfg.out_channels if k == n - 1 else ch[enc - 1]
        total += kh * kw * d_in * d_out + d_out + (0 if k == n - 1 else 2 * d_out)
    return total


@pytest.mark.criterion(8, "parameter accounting")
def test_c8_param_accounting(record_property):
    rng = np.random.default_rng(8)
    for _ in range(5):
        depth = int(rng.integers(1, 9))
        layers = tuple(LayerSpec(int(rng.choice([8, 16, 32, 64])),
                                 (int(rng.integers(1, 3)), int(rng.integers(1, 3))),
                                 (int(rng.choice([1, 3, 5])), int(rng.choice([3, 5, 7])))) for _ in range(depth))
        cfg = UNetConfig(layers=layers, scale_divisor=int(rng.choice([1, 2, 4, 8])), input_hw=(32, 32),
                         in_channels=int(rng.integers(1, 4)))
        assert count_params(cfg)[0] == _hand_count(cfg) == unet_build(cfg).n_params()
    rgb, _ = count_params(UNetConfig(in_channels=3))
    gray, _ = count_params(UNetConfig(in_channels=1))
    kh, kw = UNetConfig().layers[0].kernel
    total, _ = count_params(UNetConfig.full())
    report(record_property, f"RGB-gray delta {rgb - gray} (= {kh}*{kw}*2*64); full config {total:,} vs "
                            f"reference {REFERENCE_PARAM_COUNT:,} (difference {total - REFERENCE_PARAM_COUNT:+,}; "
                            f"exact match not required)")
    assert rgb - gray == kh * kw * 2 * 64


# ---------------------------------------------------------------------------
# end-to-end enhancement with desk-trained models

E2E_STEPS = 1500
E2E_LR = 1e-3
E2E_DIVISOR = 16


@pytest.mark.criterion(9, "end-to-end enhancement property")
def test_c9_end_to_end(tmp_path, record_property):
    write_corpus(tmp_path / "corpus", n_files=6, duration=8.3, seed=0, source="speech", noise_kind="white",
                 snr_db=5)
    man = pipeline.cmd_prepare(tmp_path / "corpus", tmp_path / "exp")
    pipeline.cmd_spectrograms(man, "parula")
    regnet_path, _ = pipeline.cmd_train_regnet(man, "parula", n_images=4, epochs=100)
    cfg = tmp_path / "unet.json"
    cfg.write_text(json.dumps({"unet": {"preset": "desk", "scale_divisor": E2E_DIVISOR, "size": 256},
                               "train": {"steps": E2E_STEPS, "lr": E2E_LR, "checkpoint_interval": 500}}))
    ck, _ = pipeline.cmd_train_denoiser(man, cfg)

    # held-out mixture: unseen utterance seed and noise realisation
    clean = synth_speech(8.3, seed=777)
    mix = mix_at_snr(clean, noise("white", len(clean), seed=9777), 5)
    g = 0.9 / np.max(np.abs(mix.samples))
    clean, mix = AudioClip(clean.samples * g, 16000), AudioClip(mix.samples * g, 16000)
    write_wav(mix, tmp_path / "held_out.wav")
    out = pipeline.cmd_enhance(tmp_path / "held_out.wav", regnet_path, ck, man, tmp_path / "enhanced",
                               tail_policy="drop")
    y = read_wav(out[0])
    n = len(y)
    ref = AudioClip(clean.samples[:n], 16000)
    noisy = AudioClip(read_wav(tmp_path / "held_out.wav").samples[:n], 16000)
    d_seg = seg_snr(ref.samples, y.samples) - seg_snr(ref.samples, noisy.samples)
    d_stoi = stoi(ref, y) - stoi(ref, noisy)
    report(record_property, f"segSNR gain {d_seg:+.2f} dB (>= +1), STOI change {d_stoi:+.4f} (>= -0.02)")
    assert d_seg >= 1.0
    assert d_stoi >= -0.02


@pytest.mark.criterion(10, "STOI oracle equivalence")
def test_c10_stoi_golden(record_property):
    t0 = time.perf_counter()
    golden = json.loads((ROOT / "tests" / "data" / "stoi_golden.json").read_text())["pairs"]
    diffs = []
    for row in golden:
        clean, noisy = make_pair(row["seed"], row["noise"], row["snr_db"])
        diffs.append(abs(stoi(clean, noisy) - row["stoi"]))
    elapsed = time.perf_counter() - t0
    report(record_property, f"max |STOI - reference| {max(diffs):.4f} over {len(diffs)} pairs (<= 0.01), "
                            f"{elapsed:.1f} s (< 30)")
    assert len(diffs) == 10 and max(diffs) <= 0.01 and elapsed < 30
