"""
Loss primitives: softmax cross-entropy and cosine similarity, each with its gradient
"""
from typing import NamedTuple

import numpy as np

from utils.errors import InvalidArgumentError


def _check_target(k, target):
    if k < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {k}")
    if not 0 <= int(target) < k:
        raise InvalidArgumentError(f"target {target} outside [0, {k})")


def softmax_cross_entropy(logits, target):
    """
    -log softmax(logits)[target], computed with max-subtraction

    Returns:
        (loss, grad_logits) where grad_logits = softmax(logits) - onehot(target)
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise InvalidArgumentError(f"logits must be a vector, got shape {logits.shape}")
    _check_target(logits.shape[0], target)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[int(target)])
    grad = exp / total
    grad[int(target)] -= 1
    return loss, grad


def batch_softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over a batch; the gradient is already divided by N"""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise InvalidArgumentError(
            f"expected N x K logits and N targets, got {logits.shape} / {targets.shape}"
        )
    n, k = logits.shape
    if k < 2 or targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        raise InvalidArgumentError(f"targets must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(total[:, 0]) - shifted[rows, targets]
    grad = exp / total
    grad[rows, targets] -= 1
    return float(losses.mean()), grad / n


class CosineSimilarity(NamedTuple):
    score: float
    grad_a: np.ndarray
    grad_b: np.ndarray
    degenerate: bool


def cosine_similarity(a, b):
    """
    <a, b> / (|a| |b|) and its gradients

    A zero-norm operand gives score 0, zero gradients and degenerate=True
    rather than an error, so a dead feature map cannot abort an attack.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"cosine similarity operands differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a.ravel()))
    nb = float(np.linalg.norm(b.ravel()))
    if na == 0.0 or nb == 0.0:
        return CosineSimilarity(0.0, np.zeros_like(a), np.zeros_like(b), True)

    score = float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))
    grad_a = (b / nb - score * a / na) / na
    grad_b = (a / na - score * b / nb) / nb
    return CosineSimilarity(score, grad_a.astype(a.dtype, copy=False),
                            grad_b.astype(b.dtype, copy=False), False)
