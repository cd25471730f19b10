"""Adam, the step-based training loop, and checkpoint files."""
from __future__ import annotations

import csv
import json
import logging
import os
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import UNetConfig, UNetModel, unet_backward, unet_build

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "chroma-se-unet-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **kw) -> "OptimizerState":
        st = cls(**kw)
        st.m = {k: np.zeros_like(p) for k, p in params.items()}
        st.v = {k: np.zeros_like(p) for k, p in params.items()}
        return st


def adam_step(state: OptimizerState, params: dict, grads: dict):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        if g.shape != m.shape:
            raise ValueError(f"gradient shape {g.shape} for {k} does not match {m.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainRunConfig:
    steps: int = 6000
    batch_size: int = 1
    seed: int = 0
    checkpoint_interval: int = 1000
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    loss: str = "lsd"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss != "lsd":
            raise ValueError("only the LSD loss is supported")

    @classmethod
    def load(cls, path) -> "TrainRunConfig":
        with open(os.fspath(path)) as fh:
            doc = json.load(fh)
        known = {k: doc[k] for k in asdict(cls()) if k in doc}
        return cls(**known)

    def save(self, path) -> None:
        with open(os.fspath(path), "w") as fh:
            json.dump(asdict(self), fh, indent=2)


def _step_rng(seed: int, step: int):
    # one stream per step so resuming at step k replays the same draws
    return np.random.default_rng([seed, step])


def train_denoiser(model: UNetModel, pairs, run_cfg: TrainRunConfig, state: OptimizerState | None = None,
                   start_step: int = 0, checkpoint_path=None, curve_path=None):
    """Train on ``(noisy, clean)`` tensor pairs, one sampled pair per step.

    Returns ``(model, state, curve)`` where ``curve`` is a list of
    ``(step, loss)``. ``start_step`` continues a run restored from a
    checkpoint; the pair and dropout draws depend only on ``(seed, step)``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("training set is empty")
    if state is None:
        state = OptimizerState.for_params(model.params, lr=run_cfg.lr, beta1=run_cfg.beta1, beta2=run_cfg.beta2)
    curve = []
    for step in range(start_step, run_cfg.steps):
        rng = _step_rng(run_cfg.seed, step)
        picks = rng.integers(len(pairs), size=run_cfg.batch_size)
        total = None
        loss = 0.0
        for i, idx in enumerate(picks):
            noisy, clean = pairs[idx]
            li, g = unet_backward(model, noisy, clean, mode="train", seed=rng.integers(2**63), update_stats=True)
            loss += li / run_cfg.batch_size
            if total is None:
                total = {k: v / run_cfg.batch_size for k, v in g.items()}
            else:
                for k in total:
                    total[k] += g[k] / run_cfg.batch_size
        if not np.isfinite(loss):
            if checkpoint_path:
                log.error("non-finite loss at step %d; last checkpoint kept at %s", step + 1, checkpoint_path)
            raise FloatingPointError(f"non-finite loss at step {step + 1}")
        adam_step(state, model.params, total)
        curve.append((step + 1, loss))
        done = step + 1
        if checkpoint_path and run_cfg.checkpoint_interval and done % run_cfg.checkpoint_interval == 0:
            checkpoint_save(model, state, checkpoint_path, step=done)
        if curve_path and (done % 50 == 0 or done == run_cfg.steps):
            write_loss_curve(curve, curve_path)
    if checkpoint_path:
        checkpoint_save(model, state, checkpoint_path, step=max(run_cfg.steps, start_step))
    if curve_path:
        write_loss_curve(curve, curve_path)
    return model, state, curve


def write_loss_curve(curve, path) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in curve:
            w.writerow([step, repr(float(loss))])


def read_loss_curve(path) -> list:
    with open(os.fspath(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["loss"])) for r in rows]


# ---------------------------------------------------------------------------
# checkpoints: an .npz archive with a JSON header entry

def checkpoint_save(model: UNetModel, state: OptimizerState | None, path, step: int = 0) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "step": int(step),
        "meta": model.meta,
        "optimizer": None if state is None else
        {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "t": state.t},
    }
    arrays = {"header": np.array(json.dumps(header))}
    for k, v in model.params.items():
        arrays[f"param/{k}"] = v
    for k, v in model.buffers.items():
        arrays[f"buffer/{k}"] = v
    if state is not None:
        for k in model.params:
            arrays[f"adam_m/{k}"] = state.m[k]
            arrays[f"adam_v/{k}"] = state.v[k]
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def checkpoint_load(path, expect_config: UNetConfig | None = None):
    """Returns ``(model, optimizer_state_or_None, step)``."""
    path = os.fspath(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "header" not in data:
        raise CheckpointError(f"{path}: missing checkpoint header")
    header = json.loads(str(data["header"]))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a U-Net checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} unsupported")
    config = UNetConfig.from_dict(header["config"])
    if expect_config is not None and config != expect_config:
        raise CheckpointError(f"{path}: checkpoint config does not match the requested config")
    model = unet_build(config)
    model.meta = dict(header.get("meta") or {})
    for k in model.params:
        arr = data.get(f"param/{k}")
        if arr is None or arr.shape != model.params[k].shape:
            raise CheckpointError(f"{path}: parameter {k} missing or mis-shaped")
        model.params[k] = arr.astype(np.float64)
    for k in model.buffers:
        arr = data.get(f"buffer/{k}")
        if arr is None or arr.shape != model.buffers[k].shape:
            raise CheckpointError(f"{path}: buffer {k} missing or mis-shaped")
        model.buffers[k] = arr.astype(np.float64)
    state = None
    if header.get("optimizer") is not None:
        opt = header["optimizer"]
        state = OptimizerState(lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"], t=opt["t"])
        state.m = {k: data[f"adam_m/{k}"].astype(np.float64) for k in model.params}
        state.v = {k: data[f"adam_v/{k}"].astype(np.float64) for k in model.params}
    return model, state, int(header["step"])
