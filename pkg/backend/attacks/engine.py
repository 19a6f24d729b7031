"""
Targeted transfer attacks

One driver covers I-FGSM, DTMI (diverse inputs + translation-invariant
smoothing + momentum) and the locality attack that adds a cropped local
branch and a feature cosine-similarity term. Every iteration:

    gradient of the composite loss -> momentum update -> sign step + projection

Sign bookkeeping: the composite objective
    L = J(global) + J(local) - lambda * CS(feature_global, feature_local)
is MINIMIZED, so the momentum is built from grad L and the step subtracts
alpha * sign(g) exactly once.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from attacks.transforms import (
    DiTrace, LocTrace, apply_di, apply_loc, di_adjoint, draw_di, draw_loc, make_ti_kernel, ti_smooth,
)
from core.losses import cosine_similarity, softmax_cross_entropy
from core.metrics import argmax_predictions
from core.rng import RngStream
from core.tensor_ops import l1_norm, sign
from models.zoo import run_backward, run_forward, tap_layer_index
from utils.errors import InvalidArgumentError


GLOBAL_DI_TAG = "di-global"
LOC_TAG = "loc"
LOCAL_DI_TAG = "di-local"


class AttackConfig(BaseModel):
    """Attack hyperparameters; epsilon and alpha are in [0, 1] pixel units"""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    epsilon: float = Field(16 / 255, ge=0)
    alpha: float = Field(2 / 255, gt=0)
    iterations: int = Field(300, ge=1)
    mu: float = Field(1.0, ge=0)
    di_p: float = Field(0.7, ge=0, le=1)
    di_resize_ratio: float = Field(0.7, gt=0, le=1)
    ti_radius: int = Field(2, ge=0)
    ti_sigma: float = Field(3.0, gt=0)
    s_l: float = Field(0.1, gt=0, le=1)
    s_int: float = Field(0.0, ge=0)
    lam: float = Field(0.4, ge=0, alias="lambda")
    tap: int = Field(3, ge=1, le=4)
    loss: Literal["ce", "logit"] = "ce"
    enable_local: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _scale_fits(self):
        if self.s_l + self.s_int > 1 + 1e-12:
            raise ValueError(f"s_l + s_int must not exceed 1, got {self.s_l} + {self.s_int}")
        return self

    @property
    def kernel(self):
        return _kernel(self.ti_radius, self.ti_sigma)


@lru_cache(maxsize=32)
def _kernel(radius, sigma):
    return make_ti_kernel(radius, sigma)


def classification_loss(logits, y_t, kind):
    """
    Targeted loss to minimize

    ce: softmax cross-entropy to y_t
    logit: -logits[y_t], so minimizing it raises the target logit
    """
    logits = np.asarray(logits)
    kind = str(kind).lower()
    if kind == "ce":
        return softmax_cross_entropy(logits, y_t)
    if kind == "logit":
        if not 0 <= int(y_t) < logits.shape[-1]:
            raise InvalidArgumentError(f"target {y_t} outside [0, {logits.shape[-1]})")
        grad = np.zeros_like(logits)
        grad[int(y_t)] = -1
        return -float(logits[int(y_t)]), grad
    raise InvalidArgumentError(f"unknown loss kind '{kind}' (expected ce or logit)")


@dataclass(frozen=True)
class BranchTraces:
    """Random draws of one iteration: DI for each branch and the local crop"""
    global_di: DiTrace
    loc: Optional[LocTrace] = None
    local_di: Optional[DiTrace] = None


def draw_traces(shape, cfg, rng):
    global_di = draw_di(shape, cfg.di_p, rng.child(GLOBAL_DI_TAG), cfg.di_resize_ratio)
    if not cfg.enable_local:
        return BranchTraces(global_di)
    loc = draw_loc(shape, cfg.s_l, cfg.s_int, rng.child(LOC_TAG))
    local_di = draw_di(shape, cfg.di_p, rng.child(LOCAL_DI_TAG), cfg.di_resize_ratio)
    return BranchTraces(global_di, loc, local_di)


class GradientResult(NamedTuple):
    grad: np.ndarray
    loss: float
    cs: float
    degenerate: bool
    traces: BranchTraces


def _branch_inputs(x, delta, traces):
    """DI-transformed inputs of the global and (optional) local branch"""
    z_global = apply_di(x + delta, traces.global_di)
    if traces.loc is None:
        return z_global, None
    z_local = apply_di(apply_loc(x, traces.loc) + delta, traces.local_di)
    return z_global, z_local


def _prepare(model, x, delta):
    x = np.asarray(x, dtype=model.dtype)
    delta = np.asarray(delta, dtype=model.dtype)
    if x.shape != delta.shape or x.shape != model.input_shape:
        raise InvalidArgumentError(
            f"x {x.shape} and delta {delta.shape} must both match {model.name} input {model.input_shape}"
        )
    return x, delta


def li_gradient(model, x, delta, y_t, cfg, rng=None, traces=None):
    """
    Gradient of the composite objective with respect to delta

    Draws fresh DI/Loc traces from `rng` unless frozen `traces` are given.
    The CS gradient is injected at the tap layer of each branch, so each
    branch costs one forward and one backward pass.
    """
    x, delta = _prepare(model, x, delta)
    if traces is None:
        if rng is None:
            raise InvalidArgumentError("li_gradient needs an rng stream or frozen traces")
        traces = draw_traces(x.shape, cfg, rng)
    z_global, z_local = _branch_inputs(x, delta, traces)

    trace_g = run_forward(model, z_global)
    loss_g, grad_logits_g = classification_loss(trace_g.logits, y_t, cfg.loss)
    if z_local is None:
        grad_z, _ = run_backward(model, trace_g, grad_logits_g)
        return GradientResult(di_adjoint(grad_z, traces.global_di), loss_g, 0.0, False, traces)

    trace_l = run_forward(model, z_local)
    loss_l, grad_logits_l = classification_loss(trace_l.logits, y_t, cfg.loss)
    tap_idx = tap_layer_index(model.spec, cfg.tap)
    cs = cosine_similarity(trace_g.outputs[tap_idx], trace_l.outputs[tap_idx])
    inject_g = inject_l = None
    if cfg.lam > 0 and not cs.degenerate:
        inject_g = {tap_idx: -cfg.lam * cs.grad_a}
        inject_l = {tap_idx: -cfg.lam * cs.grad_b}

    grad_zg, _ = run_backward(model, trace_g, grad_logits_g, inject_g)
    grad_zl, _ = run_backward(model, trace_l, grad_logits_l, inject_l)
    grad = di_adjoint(grad_zg, traces.global_di) + di_adjoint(grad_zl, traces.local_di)
    loss = loss_g + loss_l - cfg.lam * cs.score
    return GradientResult(grad, loss, cs.score, cs.degenerate, traces)


def composite_objective(model, x, delta, y_t, cfg, traces):
    """Value of the objective li_gradient differentiates, for fixed traces"""
    x, delta = _prepare(model, x, delta)
    z_global, z_local = _branch_inputs(x, delta, traces)
    trace_g = run_forward(model, z_global)
    value = classification_loss(trace_g.logits, y_t, cfg.loss)[0]
    if z_local is None:
        return value
    trace_l = run_forward(model, z_local)
    value += classification_loss(trace_l.logits, y_t, cfg.loss)[0]
    tap_idx = tap_layer_index(model.spec, cfg.tap)
    cs = cosine_similarity(trace_g.outputs[tap_idx], trace_l.outputs[tap_idx])
    return value - cfg.lam * cs.score


@dataclass(frozen=True)
class MomentumState:
    g: np.ndarray


def mi_update(state, raw_grad, mu, kernel):
    """g = mu * g_prev + smooth / |smooth|_1 with smooth = ti_smooth(raw_grad); a zero norm adds nothing"""
    raw_grad = np.asarray(raw_grad)
    if raw_grad.shape != state.g.shape:
        raise InvalidArgumentError(f"gradient {raw_grad.shape} does not match momentum {state.g.shape}")
    smooth = ti_smooth(raw_grad, kernel)
    norm = l1_norm(smooth)
    term = smooth / norm if norm > 0 else np.zeros_like(smooth)
    return MomentumState((mu * state.g + term).astype(state.g.dtype, copy=False))


def _floor_to_dtype(value, dtype):
    """Largest value of `dtype` that does not exceed `value`"""
    out = np.asarray(value, dtype=dtype)
    if float(out) > value:
        out = np.nextafter(out, np.asarray(-np.inf, dtype=dtype))
    return out


def step_and_clip(delta, g, alpha, epsilon, x):
    """
    delta' = clamp(delta - alpha * sign(g), -eps, eps), then clamped so x + delta' lies in [0, 1]

    Both constraints hold exactly in delta's dtype.
    """
    delta = np.asarray(delta)
    dtype = delta.dtype
    x = np.asarray(x, dtype=dtype)
    if delta.shape != np.shape(g) or delta.shape != x.shape:
        raise InvalidArgumentError(f"delta {delta.shape}, g {np.shape(g)} and x {x.shape} must match")
    eps = _floor_to_dtype(epsilon, dtype)
    out = delta - np.asarray(alpha, dtype=dtype) * sign(g).astype(dtype)
    out = np.clip(out, -eps, eps)
    out = np.clip(out, -x, 1 - x)
    # rounding of x + delta can still leave the box by an ulp
    while True:
        adv = x + out
        over = adv > 1
        under = adv < 0
        if not over.any() and not under.any():
            return out
        out[over] = np.nextafter(out[over], np.asarray(-np.inf, dtype=dtype))
        out[under] = np.nextafter(out[under], np.asarray(np.inf, dtype=dtype))


@dataclass
class AdvResult:
    delta: np.ndarray
    x_adv: np.ndarray
    success: bool
    iterations: int
    target: int
    losses: List[float] = field(default_factory=list)
    cs_values: List[float] = field(default_factory=list)
    first_success: Optional[int] = None
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)


def ensemble_logits(models, x):
    """Equal-weight mean of the models' logits"""
    logits = [run_forward(m, x).logits for m in models]
    return sum(logits[1:], logits[0]) / len(logits) if len(logits) > 1 else logits[0]


def _check_models(models, y_t):
    models = list(models)
    if not models:
        raise InvalidArgumentError("ensemble attack needs at least one model")
    first = models[0]
    for m in models[1:]:
        if m.input_shape != first.input_shape or m.num_classes != first.num_classes:
            raise InvalidArgumentError(
                f"ensemble members disagree: {first.name} {first.input_shape}/K={first.num_classes} "
                f"vs {m.name} {m.input_shape}/K={m.num_classes}"
            )
    if not 0 <= int(y_t) < first.num_classes:
        raise InvalidArgumentError(f"target {y_t} outside [0, {first.num_classes})")
    return models


def ensemble_attack(models, x, y_t, cfg, image_index=0, checkpoints: Sequence[int] = (), telemetry=False):
    """
    Attack an equal-weight ensemble: per iteration the update direction comes from
    the mean of the members' composite-loss gradients, all drawn with the same
    RNG key (seed, image_index, iteration)

    Args:
        checkpoints: iterations at which delta is copied into AdvResult.snapshots
        telemetry: record per-iteration loss / CS and the first successful iteration
    """
    models = _check_models(models, y_t)
    dtype = models[0].dtype
    x = np.asarray(x, dtype=dtype)
    if x.shape != models[0].input_shape:
        raise InvalidArgumentError(f"image shape {x.shape} != model input {models[0].input_shape}")
    y_t = int(y_t)
    wanted = {int(c) for c in checkpoints}
    bad = sorted(c for c in wanted if not 1 <= c <= cfg.iterations)
    if bad:
        raise InvalidArgumentError(f"snapshot checkpoints {bad} outside 1..{cfg.iterations}")

    kernel = cfg.kernel
    delta = np.zeros_like(x)
    state = MomentumState(np.zeros_like(x))
    result = AdvResult(delta, x.copy(), False, 0, y_t)
    stream = RngStream(cfg.seed, image_index)

    for i in range(1, cfg.iterations + 1):
        rng = stream.at_iteration(i)
        parts = [li_gradient(m, x, delta, y_t, cfg, rng) for m in models]
        raw = parts[0].grad
        if len(parts) > 1:
            raw = sum((p.grad for p in parts[1:]), raw.copy()) / len(parts)
        state = mi_update(state, raw, cfg.mu, kernel)
        delta = step_and_clip(delta, state.g, cfg.alpha, cfg.epsilon, x)

        if i in wanted:
            result.snapshots[i] = delta.copy()
        if telemetry:
            result.losses.append(float(np.mean([p.loss for p in parts])))
            result.cs_values.append(float(np.mean([p.cs for p in parts])))
            if result.first_success is None and argmax_predictions(ensemble_logits(models, x + delta)) == y_t:
                result.first_success = i

    result.delta = delta
    result.x_adv = x + delta
    result.iterations = cfg.iterations
    result.success = bool(argmax_predictions(ensemble_logits(models, result.x_adv)) == y_t)
    return result


def attack(model, x, y_t, cfg, image_index=0, checkpoints: Sequence[int] = (), telemetry=False):
    """Single-surrogate attack; the one-member case of ensemble_attack"""
    return ensemble_attack([model], x, y_t, cfg, image_index, checkpoints, telemetry)
