"""
Stochastic input transforms and gradient smoothing for the attacks

- TI: depthwise Gaussian smoothing of gradients
- DI: random resize-and-pad with its exact adjoint
- Loc: random square crop resized back to full size
All randomness comes from an RngStream, so a key replays a draw bit-exactly,
and every draw is returned as a trace that apply_* can replay.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from core.tensor_ops import conv2d_forward
from utils.errors import InvalidArgumentError


@dataclass(frozen=True)
class TiKernel:
    weights: np.ndarray  # (2r+1) x (2r+1), sums to 1
    radius: int
    sigma: float

    @property
    def is_identity(self):
        return self.radius == 0


def make_ti_kernel(radius, sigma):
    """Discretized 2D Gaussian exp(-(i^2 + j^2) / (2 sigma^2)) on [-r, r]^2, normalized"""
    if radius < 0 or sigma <= 0:
        raise InvalidArgumentError(f"TI kernel needs radius >= 0 and sigma > 0, got {radius}, {sigma}")
    r = int(radius)
    axis = np.arange(-r, r + 1, dtype=np.float64)
    kernel = np.exp(-(axis[:, None] ** 2 + axis[None, :] ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    kernel.setflags(write=False)
    return TiKernel(kernel, r, float(sigma))


IDENTITY_KERNEL = make_ti_kernel(0, 1.0)


def ti_smooth(grad, kernel):
    """Per-channel cross-correlation with zero padding; shape is preserved"""
    grad = np.asarray(grad)
    if kernel.is_identity:
        return grad.copy()
    side = 2 * kernel.radius + 1
    h, w = grad.shape[-2:]
    if side > min(h, w):
        raise InvalidArgumentError(f"TI kernel side {side} exceeds image {h}x{w}")
    planes = grad.reshape(-1, 1, h, w)
    weights = kernel.weights.astype(grad.dtype)[None, None]
    out = conv2d_forward(planes, weights, stride=1, zero_pad=kernel.radius)
    return out.reshape(grad.shape)


@lru_cache(maxsize=64)
def _interp_matrix(in_size, out_size):
    """out_size x in_size bilinear weights with half-pixel centers and edge clamping"""
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    matrix.setflags(write=False)
    return matrix


def _check_dims(*dims):
    if any(int(d) < 1 for d in dims):
        raise InvalidArgumentError(f"resize dims must be positive, got {dims}")


def bilinear_resize(img, out_h, out_w):
    """Resize the last two axes of img to out_h x out_w"""
    img = np.asarray(img)
    _check_dims(out_h, out_w)
    in_h, in_w = img.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ry = _interp_matrix(in_h, int(out_h)).astype(img.dtype)
    rx = _interp_matrix(in_w, int(out_w)).astype(img.dtype)
    return np.ascontiguousarray(ry @ img @ rx.T)


def bilinear_resize_adjoint(grad, in_h, in_w):
    """Transpose of bilinear_resize from in_h x in_w to grad's trailing size"""
    grad = np.asarray(grad)
    _check_dims(in_h, in_w)
    out_h, out_w = grad.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return grad.copy()
    ry = _interp_matrix(int(in_h), out_h).astype(grad.dtype)
    rx = _interp_matrix(int(in_w), out_w).astype(grad.dtype)
    return np.ascontiguousarray(ry.T @ grad @ rx)


@dataclass(frozen=True)
class DiTrace:
    applied: bool
    size: int = 0
    top: int = 0
    left: int = 0
    in_shape: Tuple[int, int] = (0, 0)


def di_size_range(h, w, ratio=0.7):
    """Inclusive [low, high] range of the DI resize target; empty when low > high"""
    low = math.ceil(round(ratio * h, 9))
    return low, min(h, w) - 1


def draw_di(shape, p, rng, ratio=0.7):
    """Draw a DI trace for an image of trailing shape (H, W)"""
    if not 0 <= p <= 1:
        raise InvalidArgumentError(f"DI probability must lie in [0, 1], got {p}")
    h, w = (int(d) for d in shape[-2:])
    gen = rng.generator()
    low, high = di_size_range(h, w, ratio)
    if gen.random() >= p or low > high:
        return DiTrace(False, in_shape=(h, w))
    size = int(gen.integers(low, high + 1))
    top = int(gen.integers(0, h - size + 1))
    left = int(gen.integers(0, w - size + 1))
    return DiTrace(True, size, top, left, (h, w))


def _check_trace(shape, trace):
    if tuple(shape[-2:]) != tuple(trace.in_shape):
        raise InvalidArgumentError(f"DI trace recorded for {trace.in_shape}, got tensor {shape}")


def apply_di(img, trace):
    img = np.asarray(img)
    _check_trace(img.shape, trace)
    if not trace.applied:
        return img.copy()
    resized = bilinear_resize(img, trace.size, trace.size)
    out = np.zeros_like(img)
    out[..., trace.top:trace.top + trace.size, trace.left:trace.left + trace.size] = resized
    return out


def di_transform(img, p, rng, ratio=0.7):
    """With probability p resize to r x r and pad back to H x W at a random offset"""
    trace = draw_di(np.shape(img), p, rng, ratio)
    return apply_di(img, trace), trace


def di_adjoint(grad_out, trace):
    """Exact adjoint of apply_di for the recorded trace"""
    grad_out = np.asarray(grad_out)
    _check_trace(grad_out.shape, trace)
    if not trace.applied:
        return grad_out.copy()
    window = grad_out[..., trace.top:trace.top + trace.size, trace.left:trace.left + trace.size]
    return bilinear_resize_adjoint(window, *trace.in_shape)


@dataclass(frozen=True)
class LocTrace:
    top: int
    left: int
    side: int


def loc_side(h, w, area):
    """Square crop side round(sqrt(area * H * W)) clamped to [1, min(H, W)]"""
    side = int(math.floor(math.sqrt(area * h * w) + 0.5))
    return max(1, min(side, h, w))


def draw_loc(shape, s_l, s_int, rng):
    if not 0 < s_l <= 1 or s_int < 0 or s_l + s_int > 1 + 1e-12:
        raise InvalidArgumentError(f"invalid locality scale s=({s_l}, {s_int})")
    h, w = (int(d) for d in shape[-2:])
    gen = rng.generator()
    area = s_l if s_int == 0 else float(gen.uniform(s_l, s_l + s_int))
    side = loc_side(h, w, area)
    top = int(gen.integers(0, h - side + 1))
    left = int(gen.integers(0, w - side + 1))
    return LocTrace(top, left, side)


def apply_loc(img, trace):
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if trace.side < 1 or trace.top + trace.side > h or trace.left + trace.side > w:
        raise InvalidArgumentError(f"crop {trace} does not fit a {h}x{w} image")
    crop = img[..., trace.top:trace.top + trace.side, trace.left:trace.left + trace.side]
    return bilinear_resize(crop, h, w)


def loc_crop(img, s_l, s_int, rng):
    """Random square patch covering an area fraction in [s_l, s_l + s_int], resized to H x W"""
    trace = draw_loc(np.shape(img), s_l, s_int, rng)
    return apply_loc(img, trace), trace
