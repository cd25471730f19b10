"""Tensor primitives with hand-written backward passes.

Tensors are single examples of shape ``(time, freq, channels)``. Kernels
have shape ``(kh, kw, c_in, c_out)`` with ``kh`` along time. All reductions
run in a fixed order so repeated calls are bit-identical.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """``(out, pad_lo, pad_hi)`` for "same" padding: ``out = ceil(n / s)``.

    The total pad is ``max((out - 1) * s + k - n, 0)`` with the extra sample,
    if any, on the high side.
    """
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def _geometry(shape, kernel_shape, stride, padding):
    geo = []
    for n, k, s in zip(shape[:2], kernel_shape[:2], stride):
        if s not in (1, 2):
            raise ValueError(f"stride components must be 1 or 2, got {stride}")
        if padding == "same":
            geo.append(same_padding(n, k, s))
        elif padding == "valid":
            if n < k:
                raise ValueError(f"input size {n} smaller than kernel {k} with valid padding")
            geo.append(((n - k) // s + 1, 0, 0))
        else:
            raise ValueError(f"unknown padding {padding!r}")
    return geo


def _im2col(xp, out_hw, kernel_hw, stride):
    """Patch view ``(o1, o2, kh, kw, c)`` of a padded input (no copy)."""
    s0, s1, s2 = xp.strides
    o1, o2 = out_hw
    kh, kw = kernel_hw
    return as_strided(xp, shape=(o1, o2, kh, kw, xp.shape[2]),
                      strides=(s0 * stride[0], s1 * stride[1], s0, s1, s2), writeable=False)


def _col2im(cols, padded_shape, stride):
    o1, o2, kh, kw, _ = cols.shape
    out = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            out[i:i + stride[0] * (o1 - 1) + 1:stride[0], j:j + stride[1] * (o2 - 1) + 1:stride[1]] += cols[:, :, i, j]
    return out


def _pad(x, geo):
    (_, a0, b0), (_, a1, b1) = geo
    if a0 == b0 == a1 == b1 == 0:
        return x
    return np.pad(x, ((a0, b0), (a1, b1), (0, 0)))


def _unpad(xp, geo, shape):
    (_, a0, _), (_, a1, _) = geo
    return xp[a0:a0 + shape[0], a1:a1 + shape[1]]


def _check_channels(x, kernel, axis):
    if x.shape[2] != kernel.shape[axis]:
        raise ValueError(f"channel mismatch: input has {x.shape[2]}, kernel expects {kernel.shape[axis]}")


def conv2d(x, kernel, bias=None, stride=(1, 1), padding="same"):
    out, _ = conv2d_with_cache(x, kernel, bias, stride, padding)
    return out


def conv2d_with_cache(x, kernel, bias=None, stride=(1, 1), padding="same"):
    x = np.asarray(x, dtype=np.float64)
    _check_channels(x, kernel, 2)
    kh, kw, cin, cout = kernel.shape
    geo = _geometry(x.shape, kernel.shape, stride, padding)
    xp = np.ascontiguousarray(_pad(x, geo))
    cols = _im2col(xp, (geo[0][0], geo[1][0]), (kh, kw), stride)
    o1, o2 = geo[0][0], geo[1][0]
    flat = cols.reshape(o1 * o2, kh * kw * cin)
    y = (flat @ kernel.reshape(-1, cout)).reshape(o1, o2, cout)
    if bias is not None:
        y = y + bias
    return y, (x.shape, xp.shape, geo, flat, stride)


def conv2d_backward(gout, kernel, cache):
    """Gradients ``(dx, dkernel, dbias)`` of :func:`conv2d`."""
    x_shape, xp_shape, geo, flat, stride = cache
    kh, kw, cin, cout = kernel.shape
    g = gout.reshape(-1, cout)
    dk = (flat.T @ g).reshape(kernel.shape)
    db = g.sum(axis=0)
    dcols = (g @ kernel.reshape(-1, cout).T).reshape(gout.shape[0], gout.shape[1], kh, kw, cin)
    dx = _unpad(_col2im(dcols, xp_shape, stride), geo, x_shape)
    return dx, dk, db


def transpose_output_size(n: int, s: int) -> int:
    return n * s


def conv2d_transpose(y, kernel, bias=None, stride=(1, 1), out_hw=None):
    out, _ = conv2d_transpose_with_cache(y, kernel, bias, stride, out_hw)
    return out


def conv2d_transpose_with_cache(y, kernel, bias=None, stride=(1, 1), out_hw=None):
    """Adjoint of a "same"-padded :func:`conv2d` sharing ``kernel``.

    ``kernel`` has the shape of the forward convolution, ``(kh, kw, c_out,
    c_in)`` from this layer's point of view: it maps ``kernel.shape[3]``
    channels to ``kernel.shape[2]``. The output spatial size defaults to
    ``in * stride``.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_channels(y, kernel, 3)
    kh, kw, cx, cy = kernel.shape
    if out_hw is None:
        out_hw = (transpose_output_size(y.shape[0], stride[0]), transpose_output_size(y.shape[1], stride[1]))
    x_shape = (out_hw[0], out_hw[1], cx)
    geo = _geometry(x_shape, kernel.shape, stride, "same")
    if (geo[0][0], geo[1][0]) != y.shape[:2]:
        raise ValueError(f"output size {out_hw} does not map onto input {y.shape[:2]} with stride {stride}")
    xp_shape = (out_hw[0] + geo[0][1] + geo[0][2], out_hw[1] + geo[1][1] + geo[1][2], cx)
    g = y.reshape(-1, cy)
    cols = (g @ kernel.reshape(-1, cy).T).reshape(y.shape[0], y.shape[1], kh, kw, cx)
    out = _unpad(_col2im(cols, xp_shape, stride), geo, x_shape)
    if bias is not None:
        out = out + bias
    return out, (y, x_shape, geo, stride)


def conv2d_transpose_backward(gout, kernel, cache):
    y, x_shape, geo, stride = cache
    kh, kw, cx, cy = kernel.shape
    gp = np.ascontiguousarray(_pad(gout, geo))
    cols = _im2col(gp, y.shape[:2], (kh, kw), stride)
    flat = cols.reshape(y.shape[0] * y.shape[1], kh * kw * cx)
    dy = (flat @ kernel.reshape(-1, cy)).reshape(y.shape)
    dk = (flat.T @ y.reshape(-1, cy)).reshape(kernel.shape)
    db = gout.sum(axis=(0, 1))
    return dy, dk, db


# ---------------------------------------------------------------------------
# normalization and activations

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm(x, gamma, beta, running_mean, running_var, mode="train", update_stats=True,
              eps=BN_EPS, momentum=BN_MOMENTUM):
    out, _ = batchnorm_with_cache(x, gamma, beta, running_mean, running_var, mode, update_stats, eps, momentum)
    return out


def batchnorm_with_cache(x, gamma, beta, running_mean, running_var, mode="train", update_stats=True,
                         eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalization over the spatial extent of one example.

    Train mode uses the example's own statistics and (optionally) folds them
    into the running estimates in place; eval mode applies the running
    estimates as a fixed affine map.
    """
    if gamma.shape != (x.shape[2],):
        raise ValueError(f"batch-norm parameters sized {gamma.shape} for {x.shape[2]} channels")
    if mode == "train":
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        if update_stats:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var
    elif mode == "eval":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (mode, xhat, inv, gamma)


def batchnorm_backward(gout, cache):
    mode, xhat, inv, gamma = cache
    dgamma = (gout * xhat).sum(axis=(0, 1))
    dbeta = gout.sum(axis=(0, 1))
    gx = gout * gamma
    if mode == "eval":
        return gx * inv, dgamma, dbeta
    m = gout.shape[0] * gout.shape[1]
    dx = inv / m * (m * gx - gx.sum(axis=(0, 1)) - xhat * (gx * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


def leaky_relu(x, slope=0.2):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(gout, x, slope=0.2):
    return np.where(x >= 0, gout, slope * gout)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(gout, x):
    return np.where(x > 0, gout, 0.0)


def dropout_mask(shape, rate, rng):
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if rate == 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(x, rate, mode="train", seed=None):
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode == "eval" or rate == 0:
        return x
    return x * dropout_mask(x.shape, rate, np.random.default_rng(seed))


def conv_param_count(kh, kw, cin, cout, bias=True, norm=False) -> int:
    return kh * kw * cin * cout + (cout if bias else 0) + (2 * cout if norm else 0)


