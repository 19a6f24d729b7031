"""
Prediction helpers shared by the trainer and the evaluation harness
"""
from typing import NamedTuple

import numpy as np


class FractionResult(NamedTuple):
    """A rate in [0, 1]; empty inputs give value 0 with empty=True"""
    value: float
    hits: int
    total: int
    empty: bool

    def __float__(self):
        return self.value


def argmax_predictions(logits):
    """Class ids per row; ties go to the lowest class index"""
    return np.asarray(logits).argmax(axis=-1)


def fraction(hits):
    hits = np.asarray(hits, dtype=bool).ravel()
    total = int(hits.size)
    if total == 0:
        return FractionResult(0.0, 0, 0, True)
    count = int(hits.sum())
    return FractionResult(count / total, count, total, False)
