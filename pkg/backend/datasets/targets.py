"""
Seeded target classes and evaluation subsets
"""
from dataclasses import dataclass

import numpy as np

from core.rng import RngStream
from utils.errors import InvalidArgumentError


TARGET_TAG = "target"
EVAL_SUBSET_TAG = "eval-subset"


@dataclass(frozen=True)
class TargetAssignment:
    targets: np.ndarray
    seed: int

    def __len__(self):
        return int(self.targets.shape[0])

    def __getitem__(self, index):
        return int(self.targets[index])


def assign_targets(dataset, seed):
    """
    Draw y_t uniformly from the K-1 classes other than each image's label

    Each image has its own stream keyed by (seed, image index), so the result
    does not depend on the order images are visited in.
    """
    k = dataset.num_classes
    if k < 2:
        raise InvalidArgumentError(f"targeted attacks need at least 2 classes, got {k}")
    targets = np.empty(len(dataset), dtype=np.int64)
    for i, label in enumerate(dataset.labels):
        draw = int(RngStream(seed, i, 0, TARGET_TAG).generator().integers(0, k - 1))
        targets[i] = draw if draw < label else draw + 1
    return TargetAssignment(targets, int(seed))


def eval_subset(dataset, n, seed):
    """Indices of the first n records of the seeded shuffle keyed by (seed, "eval-subset")"""
    if n < 0:
        raise InvalidArgumentError(f"subset size must be non-negative, got {n}")
    order = RngStream(seed, 0, 0, EVAL_SUBSET_TAG).generator().permutation(len(dataset))
    return order[:n]
