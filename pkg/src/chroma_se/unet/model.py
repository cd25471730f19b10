"""Eight-down / eight-up encoder-decoder with skip connections.

Encoder layer k: conv -> batch norm -> leaky ReLU.
Decoder layer k (k < depth): transposed conv -> batch norm -> [dropout] -> ReLU,
then concatenated with the encoder output of the mirrored level. The last
decoder layer is a plain transposed conv producing the output channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..metrics import log_spectral_distance
from . import layers as L

# (channels, stride, kernel) for e1..e8; stride and kernel pairs are (time, freq)
REFERENCE_LAYERS = (
    (64, (1, 2), (5, 7)),
    (128, (1, 2), (5, 7)),
    (256, (1, 2), (5, 7)),
    (512, (1, 2), (5, 5)),
    (512, (2, 2), (5, 5)),
    (512, (2, 2), (3, 3)),
    (512, (2, 2), (3, 3)),
    (512, (2, 2), (3, 3)),
)
REFERENCE_PARAM_COUNT = 64_975_171
LSD_GRAD_EPS = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    channels: int
    stride: tuple
    kernel: tuple


@dataclass(frozen=True)
class UNetConfig:
    layers: tuple = field(default_factory=lambda: tuple(LayerSpec(c, s, k) for c, s, k in REFERENCE_LAYERS))
    in_channels: int = 3
    out_channels: int = 3
    input_hw: tuple = (256, 256)
    dropout: float = 0.5
    n_dropout: int = 3
    slope: float = 0.2
    scale_divisor: int = 1
    seed: int = 0
    init_std: float = 0.02

    def __post_init__(self):
        if self.scale_divisor < 1:
            raise ValueError("scale_divisor must be >= 1")
        if not self.layers:
            raise ValueError("at least one encoder layer required")
        for spec in self.layers:
            if spec.channels % self.scale_divisor:
                raise ValueError(f"scale_divisor {self.scale_divisor} does not divide {spec.channels} channels")
            if spec.channels // self.scale_divisor < 1:
                raise ValueError("scaled channel count must be >= 1")
            if any(s not in (1, 2) for s in spec.stride):
                raise ValueError(f"stride {spec.stride} not in {{1, 2}}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        if any(n < 1 for n in self.input_hw):
            raise ValueError("input size must be positive")

    @classmethod
    def full(cls, **kw) -> "UNetConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, scale_divisor=8, size=64, depth=8, **kw) -> "UNetConfig":
        specs = tuple(LayerSpec(c, s, k) for c, s, k in REFERENCE_LAYERS[:depth])
        return cls(layers=specs, scale_divisor=scale_divisor, input_hw=(size, size), **kw)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def channels(self) -> list:
        return [spec.channels // self.scale_divisor for spec in self.layers]

    def effective_strides(self) -> list:
        """Per-layer strides after truncating axes already reduced to size 1."""
        hw = list(self.input_hw)
        out = []
        for spec in self.layers:
            s = tuple(1 if n == 1 else st for n, st in zip(hw, spec.stride))
            out.append(s)
            hw = [-(-n // st) for n, st in zip(hw, s)]
        return out

    def shape_trace(self) -> list:
        """Encoder output shapes ``(time, freq, channels)`` for e1..eN."""
        hw = list(self.input_hw)
        trace = []
        for c, s in zip(self.channels(), self.effective_strides()):
            hw = [-(-n // st) for n, st in zip(hw, s)]
            trace.append((hw[0], hw[1], c))
        return trace

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [[s.channels, list(s.stride), list(s.kernel)] for s in self.layers]
        d["input_hw"] = list(self.input_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        d["layers"] = tuple(LayerSpec(int(c), tuple(s), tuple(k)) for c, s, k in d["layers"])
        d["input_hw"] = tuple(d["input_hw"])
        return cls(**d)


def _layer_shapes(cfg: UNetConfig):
    """Ordered ``(name, kind, kh, kw, cin, cout, norm)`` for every conv layer."""
    ch = cfg.channels()
    out = []
    cin = cfg.in_channels
    for k, spec in enumerate(cfg.layers):
        out.append((f"e{k + 1}", "conv", spec.kernel[0], spec.kernel[1], cin, ch[k], True))
        cin = ch[k]
    n = cfg.depth
    for k in range(n):
        enc = n - 1 - k  # mirrored encoder index (0-based)
        spec = cfg.layers[enc]
        d_in = ch[n - 1] if k == 0 else 2 * ch[enc]
        last = k == n - 1
        d_out = cfg.out_channels if last else ch[enc - 1]
        out.append((f"d{k + 1}", "deconv", spec.kernel[0], spec.kernel[1], d_in, d_out, not last))
    return out


def count_params(model_or_config):
    """``(total, table)`` of trainable parameters.

    Per layer: ``kh*kw*cin*cout`` kernel weights + ``cout`` biases, plus
    ``2*cout`` batch-norm scale/shift where present. Running statistics are
    buffers and are not counted.
    """
    cfg = model_or_config.config if isinstance(model_or_config, UNetModel) else model_or_config
    table = []
    for name, kind, kh, kw, cin, cout, norm in _layer_shapes(cfg):
        n = L.conv_param_count(kh, kw, cin, cout, bias=True, norm=norm)
        table.append({"layer": name, "kind": kind, "kernel": (kh, kw), "in": cin, "out": cout,
                      "batchnorm": norm, "params": n})
    return sum(r["params"] for r in table), table


class UNetModel:
    def __init__(self, config: UNetConfig, params: dict, buffers: dict):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.mode = "train"
        self.meta = {}
        self._cache = None

    def param_names(self) -> list:
        return list(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "UNetModel":
        out = UNetModel(self.config, {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.buffers.items()})
        out.meta = dict(self.meta)
        return out


def unet_build(config: UNetConfig) -> UNetModel:
    """Allocate parameters; kernels drawn from N(0, init_std), biases zero, BN scale 1."""
    rng = np.random.default_rng(config.seed)
    params, buffers = {}, {}
    for name, kind, kh, kw, cin, cout, norm in _layer_shapes(config):
        # deconv kernels are stored in forward-conv layout (kh, kw, out, in)
        shape = (kh, kw, cin, cout) if kind == "conv" else (kh, kw, cout, cin)
        params[f"{name}.kernel"] = rng.normal(0.0, config.init_std, size=shape)
        params[f"{name}.bias"] = np.zeros(cout)
        if norm:
            params[f"{name}.gamma"] = np.ones(cout)
            params[f"{name}.beta"] = np.zeros(cout)
            buffers[f"{name}.running_mean"] = np.zeros(cout)
            buffers[f"{name}.running_var"] = np.ones(cout)
    return UNetModel(config, params, buffers)


def _check_input(model, x):
    cfg = model.config
    expect = (cfg.input_hw[0], cfg.input_hw[1], cfg.in_channels)
    if x.shape != expect:
        raise ValueError(f"input shape {x.shape} does not match config {expect}")


def _check_finite(h, name):
    if not np.all(np.isfinite(h)):
        raise FloatingPointError(f"non-finite activations at layer {name}")


def unet_forward(model: UNetModel, x, mode: str = "eval", seed=None, update_stats: bool = True,
                 keep_cache: bool = False):
    """Run the network on one ``(time, freq, channels)`` tensor.

    Train mode normalizes with per-example statistics and applies dropout
    drawn from ``seed``; eval mode is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(model, x)
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = model.config
    p, b = model.params, model.buffers
    strides = cfg.effective_strides()
    rng = np.random.default_rng(seed) if mode == "train" else None
    n = cfg.depth
    cache = {"input": x}
    skips = []
    h = x
    for k in range(n):
        name = f"e{k + 1}"
        z, cc = L.conv2d_with_cache(h, p[f"{name}.kernel"], p[f"{name}.bias"], strides[k], "same")
        zn, bc = L.batchnorm_with_cache(z, p[f"{name}.gamma"], p[f"{name}.beta"], b[f"{name}.running_mean"],
                                        b[f"{name}.running_var"], mode, update_stats)
        h = L.leaky_relu(zn, cfg.slope)
        _check_finite(h, name)
        cache[name] = (cc, bc, zn)
        skips.append(h)
    for k in range(n):
        name = f"d{k + 1}"
        enc = n - 1 - k
        target_hw = cfg.input_hw if enc == 0 else skips[enc - 1].shape[:2]
        z, cc = L.conv2d_transpose_with_cache(h, p[f"{name}.kernel"], p[f"{name}.bias"], strides[enc], target_hw)
        if k == n - 1:
            cache[name] = (cc,)
            h = z
            break
        zn, bc = L.batchnorm_with_cache(z, p[f"{name}.gamma"], p[f"{name}.beta"], b[f"{name}.running_mean"],
                                        b[f"{name}.running_var"], mode, update_stats)
        mask = None
        if mode == "train" and k < cfg.n_dropout:
            mask = L.dropout_mask(zn.shape, cfg.dropout, rng)
        zd = zn if mask is None else zn * mask
        a = L.relu(zd)
        _check_finite(a, name)
        cache[name] = (cc, bc, mask, zd)
        h = np.concatenate([a, skips[enc - 1]], axis=2)
    _check_finite(h, f"d{n}")
    model.mode = mode
    model._cache = cache if keep_cache else None
    return h


def _backward_from_cache(model: UNetModel, gout):
    cfg = model.config
    p = model.params
    cache = model._cache
    n = cfg.depth
    ch = cfg.channels()
    grads = {}
    skip_grads = [None] * n
    g = gout
    for k in range(n - 1, -1, -1):
        name = f"d{k + 1}"
        enc = n - 1 - k
        if k == n - 1:
            (cc,) = cache[name]
        else:
            cc, bc, mask, zd = cache[name]
            # split concatenated gradient: [decoder activation | skip]
            ga, gs = g[..., :ch[enc - 1]], g[..., ch[enc - 1]:]
            skip_grads[enc - 1] = gs
            gz = L.relu_backward(ga, zd)
            if mask is not None:
                gz = gz * mask
            gz, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(gz, bc)
            g = gz
        g, grads[f"{name}.kernel"], grads[f"{name}.bias"] = L.conv2d_transpose_backward(g, p[f"{name}.kernel"], cc)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at layer {name}")
    for k in range(n - 1, -1, -1):
        name = f"e{k + 1}"
        cc, bc, zn = cache[name]
        if skip_grads[k] is not None:
            g = g + skip_grads[k]
        gz = L.leaky_relu_backward(g, zn, cfg.slope)
        gz, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(gz, bc)
        g, grads[f"{name}.kernel"], grads[f"{name}.bias"] = L.conv2d_backward(gz, p[f"{name}.kernel"], cc)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at layer {name}")
    return {k: grads[k] for k in model.params}


# ---------------------------------------------------------------------------
# loss

def lsd_loss(target, estimate) -> float:
    """Log-spectral distance of ``(time, freq[, channels])`` tensors, averaged over channels."""
    a = np.asarray(target, dtype=np.float64)
    b = np.asarray(estimate, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return log_spectral_distance(a, b)
    return float(np.mean([log_spectral_distance(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def lsd_loss_grad(target, estimate) -> np.ndarray:
    """Gradient of :func:`lsd_loss` with respect to ``estimate``.

    Each frame contributes ``d / (C * T * F * sqrt(mean_f d^2 + eps))``; the
    epsilon keeps frames with zero error finite.
    """
    a = np.asarray(target, dtype=np.float64)
    b = np.asarray(estimate, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
        squeeze = True
    else:
        squeeze = False
    t, f, c = a.shape
    d = b - a
    rms = np.sqrt(np.mean(d * d, axis=1, keepdims=True) + LSD_GRAD_EPS)
    g = d / (c * t * f * rms)
    return g[..., 0] if squeeze else g


def unet_backward(model: UNetModel, x, target, mode: str = "eval", seed=None, update_stats: bool = False):
    """``(loss, grads)`` of the LSD loss between ``unet(x)`` and ``target``."""
    out = unet_forward(model, x, mode, seed, update_stats=update_stats, keep_cache=True)
    if out.shape != np.shape(target):
        raise ValueError(f"target shape {np.shape(target)} does not match output {out.shape}")
    loss = lsd_loss(target, out)
    grads = _backward_from_cache(model, lsd_loss_grad(target, out))
    model._cache = None
    return loss, grads
