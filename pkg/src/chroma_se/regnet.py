"""Shallow fully connected regressor from pixel colour to LPS value.

Layout is ``3 -> 10 -> 10 -> 10 -> 1`` with tanh hidden units and a linear
output. Inputs are standardized with column statistics taken from the
training split; targets stay in raw LPS units.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .codec import ColorImage, PixelDataset, pixel_rows
from .dsp import LpsMatrix

log = logging.getLogger(__name__)

DEFAULT_SIZES = (3, 10, 10, 10, 1)
GRAY_SIZES = (1, 10, 10, 10, 1)
FORMAT = "chroma-se-regnet"
FORMAT_VERSION = 1


class RegnetFormatError(ValueError):
    pass


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class RegnetModel:
    sizes: tuple
    weights: list  # weights[k] has shape (sizes[k], sizes[k+1])
    biases: list
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)  # e.g. colormap name and display range

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def trained(self) -> bool:
        return self.input_mean is not None

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def count(self) -> tuple[int, int]:
        """``(weights only, weights + biases)``."""
        n_w = sum(w.size for w in self.weights)
        return n_w, n_w + sum(b.size for b in self.biases)

    def copy(self) -> "RegnetModel":
        return RegnetModel(
            tuple(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            None if self.input_mean is None else self.input_mean.copy(),
            None if self.input_std is None else self.input_std.copy(),
            dict(self.meta),
        )


@dataclass
class RegnetTrainConfig:
    epochs: int = 1000
    holdout: float = 0.2
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.holdout < 1:
            raise ValueError("holdout fraction must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RegnetReport:
    train_mse: float
    test_mse: float
    loss_curve: list = field(default_factory=list)  # per-epoch training-split MSE
    optimizer: str = ""
    n_train: int = 0
    n_test: int = 0

    def to_dict(self) -> dict:
        return {
            "train_mse": self.train_mse, "test_mse": self.test_mse, "optimizer": self.optimizer,
            "n_train": self.n_train, "n_test": self.n_test, "loss_curve": list(self.loss_curve),
        }


def regnet_init(seed: int = 0, sizes=DEFAULT_SIZES) -> RegnetModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return RegnetModel(tuple(sizes), weights, biases)


def _scale_inputs(model: RegnetModel, x, bypass_stats: bool) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.n_inputs:
        raise ValueError(f"model takes {model.n_inputs} inputs, got {x.shape[1]}")
    if bypass_stats:
        return x
    if not model.trained:
        raise UntrainedModelError("input statistics are unset; train the model or pass bypass_stats=True")
    return (x - model.input_mean) / model.input_std


def _forward(model: RegnetModel, xs: np.ndarray):
    acts = [xs]
    h = xs
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if k == last else np.tanh(z)
        acts.append(h)
    return acts


def regnet_forward(model: RegnetModel, rgb, bypass_stats: bool = False):
    """Predict LPS for one colour triplet (returns a float) or an ``(N, C)`` batch."""
    single = np.ndim(rgb) == 1
    out = _forward(model, _scale_inputs(model, rgb, bypass_stats))[-1][:, 0]
    return float(out[0]) if single else out


def _backward(model: RegnetModel, acts, y):
    n = len(y)
    delta = (2.0 / n) * (acts[-1][:, 0] - y)[:, None]
    grads = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (1.0 - acts[k] ** 2)
    return grads


def regnet_grad(model: RegnetModel, x, y, bypass_stats: bool = False) -> list:
    """Exact gradient of the batch MSE, ordered like :meth:`RegnetModel.params`."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        raise ValueError("empty batch")
    acts = _forward(model, _scale_inputs(model, x, bypass_stats))
    return _backward(model, acts, y)


def regnet_mse(model: RegnetModel, x, y, bypass_stats: bool = False) -> float:
    pred = regnet_forward(model, x, bypass_stats)
    return float(np.mean((np.atleast_1d(pred) - np.asarray(y)) ** 2))


def _column_stats(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    # constant columns (e.g. the red channel of "autumn") carry no information
    return mu, np.where(sd < 1e-12, 1.0, sd)


def split_indices(n: int, holdout: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * holdout))
    return perm[n_test:], perm[:n_test]


def regnet_train(model: RegnetModel, data: PixelDataset, cfg: RegnetTrainConfig = RegnetTrainConfig(),
                 rgb_columns=None):
    """Hold-out training with mini-batch Adam. Returns ``(model, report)``.

    ``rgb_columns`` selects predictor columns from the dataset (the 1-input
    gray variant uses ``[0]``).
    """
    n = len(data)
    if n < 100:
        raise ValueError(f"dataset too small for training: {n} rows (need >= 100)")
    x = data.rgb if rgb_columns is None else data.rgb[:, rgb_columns]
    y = data.target
    train_idx, test_idx = split_indices(n, cfg.holdout, cfg.seed)
    model = model.copy()
    model.input_mean, model.input_std = _column_stats(x[train_idx])
    xtr = (x[train_idx] - model.input_mean) / model.input_std
    ytr = y[train_idx]

    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([cfg.seed, 1])
    curve = []
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(ytr))
        # a diverging run is caught by the epoch-level check below
        with np.errstate(invalid="ignore", over="ignore"):
            for start in range(0, len(order), cfg.batch_size):
                bi = order[start:start + cfg.batch_size]
                grads = _backward(model, _forward(model, xtr[bi]), ytr[bi])
                t += 1
                c1 = 1 - cfg.beta1 ** t
                c2 = 1 - cfg.beta2 ** t
                for p, g, mk, vk in zip(params, grads, m, v):
                    mk *= cfg.beta1
                    mk += (1 - cfg.beta1) * g
                    vk *= cfg.beta2
                    vk += (1 - cfg.beta2) * g * g
                    p -= cfg.lr * (mk / c1) / (np.sqrt(vk / c2) + cfg.eps)
            loss = float(np.mean((_forward(model, xtr)[-1][:, 0] - ytr) ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError(f"regnet training diverged at epoch {epoch + 1} (loss={loss})")
        curve.append(loss)
    test_mse = regnet_mse(model, x[test_idx], y[test_idx])
    report = RegnetReport(
        train_mse=curve[-1], test_mse=test_mse, loss_curve=curve,
        optimizer=(f"adam(lr={cfg.lr}, beta1={cfg.beta1}, beta2={cfg.beta2}, eps={cfg.eps}), "
                   f"batch={cfg.batch_size}, epochs={cfg.epochs}, holdout={cfg.holdout}, seed={cfg.seed}"),
        n_train=len(train_idx), n_test=len(test_idx),
    )
    log.info("regnet trained: train MSE %.4f, test MSE %.4f", report.train_mse, report.test_mse)
    return model, report


def regnet_decode(model: RegnetModel, img: ColorImage) -> LpsMatrix:
    """Per-pixel prediction arranged back into an ``(F, T)`` LPS matrix."""
    if not model.trained:
        raise UntrainedModelError("cannot decode with an untrained regnet")
    rows = pixel_rows(img)
    if model.n_inputs == 1:
        rows = rows.mean(axis=1, keepdims=True)
    # identical colours decode identically; predict each distinct colour once
    colors, inverse = np.unique(rows, axis=0, return_inverse=True)
    pred = regnet_forward(model, colors)[inverse.ravel()]
    h, w = img.pixels.shape[:2]
    return LpsMatrix(pred.reshape(w, h).T)


# ---------------------------------------------------------------------------
# persistence: JSON text; floats are written with repr() so they round-trip exactly

def regnet_save(model: RegnetModel, path) -> None:
    doc = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "sizes": list(model.sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_mean": None if model.input_mean is None else model.input_mean.tolist(),
        "input_std": None if model.input_std is None else model.input_std.tolist(),
        "meta": model.meta,
    }
    with open(os.fspath(path), "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def regnet_load(path) -> RegnetModel:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise RegnetFormatError(f"{path}: corrupt or truncated regnet file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise RegnetFormatError(f"{path}: not a regnet model file")
    if doc.get("version") != FORMAT_VERSION:
        raise RegnetFormatError(
            f"{path}: regnet file version {doc.get('version')} unsupported (expected {FORMAT_VERSION})")
    sizes = tuple(doc["sizes"])
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(doc["weights"], sizes[:-1], sizes[1:])]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    mean = None if doc["input_mean"] is None else np.array(doc["input_mean"], dtype=np.float64)
    std = None if doc["input_std"] is None else np.array(doc["input_std"], dtype=np.float64)
    return RegnetModel(sizes, weights, biases, mean, std, dict(doc.get("meta") or {}))
