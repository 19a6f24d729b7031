"""
Surrogate and victim training
Classic momentum SGD on softmax cross-entropy, deterministic per (spec, hyper, seed)
"""
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.losses import batch_softmax_cross_entropy
from core.metrics import argmax_predictions, fraction
from core.rng import RngStream
from models.zoo import Model, init_model, predict_logits, run_backward, run_forward
from utils.errors import InvalidArgumentError, TrainingError


SHUFFLE_TAG = "shuffle"


class TrainHyper(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(30, ge=0)
    batch_size: int = Field(64, gt=0)
    learning_rate: float = Field(0.05, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    # epoch (0-based) -> multiplier applied from that epoch on; multipliers compound
    decay: Dict[int, float] = Field(default_factory=lambda: {20: 0.1, 25: 0.1})
    seed: int = 0

    @field_validator("decay")
    @classmethod
    def _positive_decay(cls, value):
        for epoch, mult in value.items():
            if epoch < 0 or mult <= 0:
                raise ValueError(f"decay entries must map epoch >= 0 to a positive multiplier, got {epoch}: {mult}")
        return value

    def lr_at(self, epoch):
        lr = self.learning_rate
        for start, mult in sorted(self.decay.items()):
            if epoch >= start:
                lr *= mult
        return lr


def sgd_step(weights, velocity, grads, lr, momentum):
    """
    One momentum SGD update, in place: v = m * v + g, w = w - lr * v

    With lr = 0 the weights are left untouched.
    """
    for name, grad in grads.items():
        v = velocity[name]
        v *= momentum
        v += grad
        if lr:
            weights[name] -= np.asarray(lr, dtype=weights[name].dtype) * v


def _write_log(log_file, line):
    if log_file is not None:
        log_file.write(line + "\n")
        log_file.flush()


def train(spec, dataset, hyper: Optional[TrainHyper] = None, seed=None, log_path=None):
    """
    Train a freshly initialized model of `spec` on `dataset`

    Args:
        seed: seeds both the weight init and the per-epoch shuffles; defaults to hyper.seed
        log_path: optional plain-text log, one "epoch loss accuracy" line per epoch

    Raises:
        TrainingError: the loss became non-finite
    """
    hyper = hyper or TrainHyper()
    seed = hyper.seed if seed is None else int(seed)
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    if tuple(dataset.image_shape) != tuple(spec.input_shape) or dataset.num_classes != spec.num_classes:
        raise InvalidArgumentError(
            f"dataset {dataset.image_shape} / K={dataset.num_classes} does not fit "
            f"{spec.architecture} {spec.input_shape} / K={spec.num_classes}"
        )

    initial = init_model(spec, seed)
    weights = {k: v.copy() for k, v in initial.weights.items()}
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    model = Model(spec, weights)  # shares the arrays sgd_step updates
    n = len(dataset)

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")
    try:
        for epoch in range(hyper.epochs):
            lr = hyper.lr_at(epoch)
            order = RngStream(seed, 0, epoch, SHUFFLE_TAG).generator().permutation(n)
            loss_sum = 0.0
            correct = 0
            for start in range(0, n, hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                x = dataset.images[idx]
                y = dataset.labels[idx]
                trace = run_forward(model, x)
                loss, grad_logits = batch_softmax_cross_entropy(trace.logits, y)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged to {loss} with learning rate {lr:g}", epoch + 1)
                _, grads = run_backward(model, trace, grad_logits, need_params=True)
                sgd_step(weights, velocity, grads, lr, hyper.momentum)
                loss_sum += loss * len(idx)
                correct += int((argmax_predictions(trace.logits) == y).sum())

            epoch_loss = loss_sum / n
            epoch_acc = correct / n
            _write_log(log_file, f"{epoch + 1} {epoch_loss:.6f} {epoch_acc:.6f}")
            print(f"📊 {spec.architecture} epoch {epoch + 1}/{hyper.epochs}: "
                  f"loss={epoch_loss:.4f} acc={epoch_acc:.3f} lr={lr:g}")
    finally:
        if log_file is not None:
            log_file.close()

    return Model(spec, {k: v.copy() for k, v in weights.items()})


def eval_accuracy(model, dataset, batch_size=256):
    """Fraction of records whose argmax logit equals the label (empty -> 0, flagged)"""
    if len(dataset) == 0:
        return fraction([])
    logits = predict_logits(model, dataset.images, batch_size)
    return fraction(argmax_predictions(logits) == dataset.labels)
