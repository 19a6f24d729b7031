"""
Tensor core - forward and backward passes for every layer kind
Tensors are numpy arrays in channel-first layout (C x H x W); every op also
accepts a leading batch axis so training and evaluation can run batched.
All functions are pure: inputs are never modified in place.
"""
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import InvalidArgumentError


LAYER_KINDS = ("conv", "relu", "maxpool2", "avgpool2", "dense", "flatten", "add-skip")


@dataclass(frozen=True)
class LayerCache:
    """What a layer's backward needs from its forward"""
    kind: str
    saved: Dict[str, Any] = field(default_factory=dict)


def _float(x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return x


def _as_batch(x, ndim):
    """Add a batch axis to a single sample; returns (batched, was_single)"""
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim == ndim:
        return x, False
    raise InvalidArgumentError(
        f"expected a {ndim - 1}D sample or a {ndim}D batch, got shape {x.shape}"
    )


def _windows(xb, kh, kw, stride, zero_pad):
    if zero_pad:
        xb = np.pad(xb, ((0, 0), (0, 0), (zero_pad, zero_pad), (zero_pad, zero_pad)))
    win = sliding_window_view(xb, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_conv_args(xb, weights, bias, stride, zero_pad):
    if weights.ndim != 4:
        raise InvalidArgumentError(f"conv weights must be Cout x Cin x kh x kw, got {weights.shape}")
    cout, cin, kh, kw = weights.shape
    if xb.shape[1] != cin:
        raise InvalidArgumentError(
            f"input has {xb.shape[1]} channels but weights expect {cin}"
        )
    if int(stride) < 1 or int(zero_pad) < 0:
        raise InvalidArgumentError(f"invalid stride={stride} / zero_pad={zero_pad}")
    if kh > xb.shape[2] + 2 * zero_pad or kw > xb.shape[3] + 2 * zero_pad:
        raise InvalidArgumentError(
            f"kernel {kh}x{kw} larger than padded input {xb.shape[2:]} (pad {zero_pad})"
        )
    if bias is not None and np.shape(bias) != (cout,):
        raise InvalidArgumentError(f"bias must have shape ({cout},), got {np.shape(bias)}")


def conv_output_shape(h, w, kh, kw, stride=1, zero_pad=0):
    return (h + 2 * zero_pad - kh) // stride + 1, (w + 2 * zero_pad - kw) // stride + 1


def conv2d_forward(x, weights, bias=None, stride=1, zero_pad=0):
    """Direct cross-correlation plus bias"""
    xb, single = _as_batch(_float(x), 4)
    weights = _float(weights)
    _check_conv_args(xb, weights, bias, stride, zero_pad)
    cout, _, kh, kw = weights.shape

    windows = _windows(xb, kh, kw, stride, zero_pad)  # N, Cin, Ho, Wo, kh, kw
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, Cout
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias).reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out, dtype=xb.dtype)
    return out[0] if single else out


def conv2d_backward(x, weights, grad_output, stride=1, zero_pad=0):
    """
    Adjoint of conv2d_forward with respect to input, weights and bias

    Returns:
        (grad_input, grad_weights, grad_bias); weight and bias grads are summed over the batch
    """
    xb, single = _as_batch(_float(x), 4)
    weights = _float(weights)
    _check_conv_args(xb, weights, None, stride, zero_pad)
    grad_output = _float(grad_output)
    gb = grad_output[None] if single and grad_output.ndim == 3 else grad_output
    n, cin, h, w = xb.shape
    cout, _, kh, kw = weights.shape
    ho, wo = conv_output_shape(h, w, kh, kw, stride, zero_pad)
    if gb.shape != (n, cout, ho, wo):
        raise InvalidArgumentError(
            f"grad_output shape {grad_output.shape} does not match forward output {(n, cout, ho, wo)}"
        )

    windows = _windows(xb, kh, kw, stride, zero_pad)
    grad_w = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))  # Cout, Cin, kh, kw
    grad_b = gb.sum(axis=(0, 2, 3))
    grad_x = _conv_input_grad(xb, weights, gb, stride, zero_pad)
    return (grad_x[0] if single else grad_x), grad_w.astype(weights.dtype), grad_b.astype(weights.dtype)


def _pool_windows(x):
    xb, single = _as_batch(x, 4)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise InvalidArgumentError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
    win = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, h // 2, w // 2, 4), single


def _unpool(windows_grad):
    n, c, ho, wo, _ = windows_grad.shape
    g = windows_grad.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(n, c, 2 * ho, 2 * wo)


def layer_forward(kind, params, x):
    """
    Run one layer

    Args:
        kind: one of LAYER_KINDS
        params: weights/hyperparameters ({} for parameter-free kinds)
        x: input tensor, or an (a, b) pair for add-skip

    Returns:
        (output, LayerCache)
    """
    params = params or {}
    if kind == "add-skip":
        a, b = (_float(t) for t in x)
        if a.shape != b.shape:
            raise InvalidArgumentError(f"add-skip operands differ in shape: {a.shape} vs {b.shape}")
        return a + b, LayerCache(kind)

    x = _float(x)
    if kind == "conv":
        stride = int(params.get("stride", 1))
        zero_pad = int(params.get("zero_pad", 0))
        out = conv2d_forward(x, params["weights"], params.get("bias"), stride, zero_pad)
        return out, LayerCache(kind, {"input": x, "weights": params["weights"],
                                      "stride": stride, "zero_pad": zero_pad})

    if kind == "relu":
        return np.maximum(x, 0), LayerCache(kind, {"mask": x > 0})

    if kind == "maxpool2":
        win, single = _pool_windows(x)
        idx = win.argmax(axis=-1)  # first max in row-major window order
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return (out[0] if single else out), LayerCache(kind, {"argmax": idx, "single": single})

    if kind == "avgpool2":
        win, single = _pool_windows(x)
        out = win.mean(axis=-1, dtype=x.dtype)
        return (out[0] if single else out), LayerCache(kind, {"out_shape": win.shape[:4], "single": single})

    if kind == "dense":
        weights = _float(params["weights"])
        if weights.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weights.shape[1]:
            raise InvalidArgumentError(
                f"dense expects input length {weights.shape[-1]}, got shape {x.shape}"
            )
        out = x @ weights.T
        if params.get("bias") is not None:
            out = out + params["bias"]
        return out.astype(x.dtype, copy=False), LayerCache(kind, {"input": x, "weights": weights})

    if kind == "flatten":
        out = x.reshape(x.shape[0], -1) if x.ndim == 4 else x.reshape(-1)
        return out, LayerCache(kind, {"shape": x.shape})

    raise InvalidArgumentError(f"unknown layer kind '{kind}'")


def _conv_input_grad(x, weights, grad_output, stride, zero_pad):
    """Input half of conv2d_backward, for callers that do not need weight grads"""
    xb, single = _as_batch(x, 4)
    gb = grad_output[None] if single else grad_output
    n, cin, h, w = xb.shape
    _, _, kh, kw = weights.shape
    ho, wo = gb.shape[2:]
    if gb.shape[:2] != (n, weights.shape[0]) or (ho, wo) != conv_output_shape(h, w, kh, kw, stride, zero_pad):
        raise InvalidArgumentError(f"conv grad shape {grad_output.shape} does not match forward output")
    cols = np.tensordot(gb, weights, axes=([1], [0]))
    padded = np.zeros((n, cin, h + 2 * zero_pad, w + 2 * zero_pad), dtype=xb.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    grad_x = np.ascontiguousarray(padded[:, :, zero_pad:zero_pad + h, zero_pad:zero_pad + w])
    return grad_x[0] if single else grad_x


def layer_backward(kind, cache, grad_output, need_params=True):
    """
    Vector-Jacobian product of one layer

    Returns:
        (grad_input, grad_params); add-skip returns a (grad_a, grad_b) pair as grad_input.
        With need_params=False parameter gradients are skipped and {} is returned for them.
    """
    if not isinstance(cache, LayerCache) or cache.kind != kind:
        got = cache.kind if isinstance(cache, LayerCache) else type(cache).__name__
        raise InvalidArgumentError(f"cache from '{got}' cannot feed the backward of '{kind}'")
    g = _float(grad_output)
    saved = cache.saved

    if kind == "add-skip":
        return (g, g.copy()), {}

    if kind == "conv":
        if not need_params:
            gi = _conv_input_grad(saved["input"], _float(saved["weights"]), g,
                                  saved["stride"], saved["zero_pad"])
            return gi, {}
        gi, gw, gb = conv2d_backward(saved["input"], saved["weights"], g,
                                     saved["stride"], saved["zero_pad"])
        return gi, {"weights": gw, "bias": gb}

    if kind == "relu":
        if g.shape != saved["mask"].shape:
            raise InvalidArgumentError(f"relu grad shape {g.shape} != {saved['mask'].shape}")
        return np.where(saved["mask"], g, np.zeros_like(g)), {}

    if kind in ("maxpool2", "avgpool2"):
        gb = g[None] if saved["single"] else g
        expected = saved["argmax"].shape if kind == "maxpool2" else saved["out_shape"]
        if gb.shape != tuple(expected):
            raise InvalidArgumentError(f"{kind} grad shape {g.shape} does not match forward output")
        if kind == "maxpool2":
            win_grad = np.zeros(gb.shape + (4,), dtype=gb.dtype)
            np.put_along_axis(win_grad, saved["argmax"][..., None], gb[..., None], axis=-1)
        else:
            win_grad = np.repeat(gb[..., None] / 4, 4, axis=-1)
        gi = _unpool(win_grad)
        return (gi[0] if saved["single"] else gi), {}

    if kind == "dense":
        x, weights = saved["input"], saved["weights"]
        expected = x.shape[:-1] + (weights.shape[0],)
        if g.shape != expected:
            raise InvalidArgumentError(f"dense grad shape {g.shape} != {expected}")
        g2 = g.reshape(-1, weights.shape[0])
        x2 = x.reshape(-1, weights.shape[1])
        gi = (g @ weights).astype(x.dtype, copy=False)
        if not need_params:
            return gi, {}
        return gi, {"weights": g2.T @ x2, "bias": g2.sum(axis=0)}

    if kind == "flatten":
        return g.reshape(saved["shape"]), {}

    raise InvalidArgumentError(f"unknown layer kind '{kind}'")


def sign(t):
    """Elementwise sign with sign(0) = 0"""
    return np.sign(t)


def clamp(t, lo, hi):
    if lo > hi:
        raise InvalidArgumentError(f"clamp bounds reversed: {lo} > {hi}")
    return np.clip(t, lo, hi)


def l1_norm(t):
    return float(np.abs(t).sum(dtype=np.float64))
