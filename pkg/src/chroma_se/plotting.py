"""Report figures, rendered off-screen next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .regnet import regnet_forward  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_figure(curve, path, title="Denoiser training loss") -> Path:
    """Loss against step from ``(step, loss)`` pairs."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if curve:
        steps, loss = zip(*curve)
        ax.plot(steps, loss, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("LSD loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def regnet_figures(report, model, data, prefix, seed=0, n_points=4000) -> list:
    """Training curve plus predicted-versus-target scatter on a random subsample."""
    prefix = Path(prefix)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(np.arange(1, len(report.loss_curve) + 1), report.loss_curve, lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE")
    ax.set_title(f"Regnet fit (test MSE {report.test_mse:.4f})")
    ax.grid(alpha=0.3)
    out = [_save(fig, prefix.with_name(prefix.name + "_loss.png"))]

    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), size=min(n_points, len(data)), replace=False)
    x = data.rgb[idx][:, :model.n_inputs]
    pred = regnet_forward(model, x)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(data.target[idx], pred, s=2, alpha=0.4)
    lo, hi = float(data.target.min()), float(data.target.max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("target LPS")
    ax.set_ylabel("decoded LPS")
    out.append(_save(fig, prefix.with_name(prefix.name + "_scatter.png")))
    return out


def bench_figure(rows, path) -> Path:
    """Bar charts of STOI and LSD per colormap, best STOI first."""
    rows = sorted(rows, key=lambda r: -r["stoi"])
    names = [r["colormap"] for r in rows]
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    a1.bar(names, [r["stoi"] for r in rows])
    a1.set_ylabel("STOI")
    a1.set_ylim(min(r["stoi"] for r in rows) - 0.05, 1.0)
    a2.bar(names, [r["lsd"] for r in rows], color="tab:orange")
    a2.set_ylabel("LSD")
    a2.tick_params(axis="x", rotation=60)
    a1.set_title("Colormap round trip without denoising")
    return _save(fig, path)


def metrics_figure(reports, baseline, path) -> Path:
    """Per-clip STOI and SNR, with the unprocessed baseline when given."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    ids = np.arange(len(reports))
    for ax, key, label in ((axes[0], "stoi", "STOI"), (axes[1], "snr", "SNR (dB)")):
        vals = [min(getattr(r, key), 99.0) for r in reports]
        ax.plot(ids, vals, "o-", ms=3, label="processed")
        if baseline is not None:
            ax.plot(ids, [min(getattr(r, key), 99.0) for r in baseline], "s--", ms=3, label="unprocessed")
            ax.legend()
        ax.set_xlabel("clip")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    return _save(fig, path)


def spectrogram_figure(img, path, title="") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow(img.pixels, aspect="auto")
    ax.set_xlabel("frame")
    ax.set_ylabel("frequency bin (top = high)")
    ax.set_title(title or img.colormap_name)
    return _save(fig, path)
