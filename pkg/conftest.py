"""
Shared pytest setup: backend/ on sys.path, finite-difference helper, tiny fixtures
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent / "backend"))

from datasets.dataset import Dataset  # noqa: E402
from models.zoo import Model, build_model, build_spec  # noqa: E402
from training.trainer import TrainHyper, train  # noqa: E402


def numerical_grad(fn, x, coords, h=1e-6):
    """Central differences of scalar fn at the given index tuples of x"""
    out = []
    for idx in coords:
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out.append((fn(xp) - fn(xm)) / (2 * h))
    return np.array(out)


def sample_coords(shape, n, rng):
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


@pytest.fixture
def fd():
    return numerical_grad


@pytest.fixture
def coords():
    return sample_coords


@pytest.fixture
def tiny_model64():
    """Randomly initialized ConvNetA on 3 x 16 x 16, K = 5, in double precision"""
    return build_model("ConvNetA", 5, (3, 16, 16), seed=3).astype(np.float64)


@pytest.fixture(scope="session")
def memorized():
    """ConvNetA trained to memorize 8 random 3 x 16 x 16 images with distinct labels"""
    rng = np.random.default_rng(7)
    data = Dataset(rng.random((8, 3, 16, 16)), np.arange(8), 10, "random-8")
    hyper = TrainHyper(epochs=300, batch_size=8, learning_rate=0.01, momentum=0.9, decay={})
    model = train(build_spec("ConvNetA", 10, (3, 16, 16)), data, hyper, seed=11)
    return model, data


def _corner_colours(s=0.02):
    """+-1 codes of the 8 corners of the RGB cube (bit c of the label) and flat images 0.5 + s * code"""
    codes = np.array([[1.0 if (k >> c) & 1 else -1.0 for c in range(3)] for k in range(8)])
    images = np.broadcast_to((0.5 + s * codes)[:, :, None, None], (8, 3, 16, 16)).astype(np.float32)
    return codes, images


@pytest.fixture(scope="session")
def colour_memorizer():
    """
    ConvNetB with hand-set weights that memorizes 8 flat colour images, plus their codes

    Every conv passes channels 0-2 through its centre tap, so the classifier
    sees the mean colour m and scores class k as gain * code_k . (m - 0.5).
    Channel 3 is a constant the same in every view, which keeps the tap
    features of any two views nearly parallel.
    """
    gain, level = 10.0, 100.0
    codes, images = _corner_colours()
    template = build_model("ConvNetB", 8, (3, 16, 16), seed=0)
    weights = {k: np.zeros_like(v) for k, v in template.weights.items()}
    for layer in template.spec.layers:
        if layer.kind != "conv":
            continue
        w = weights[f"{layer.name}.weight"]
        centre = layer.kernel // 2
        for c in range(3):
            w[c, c, centre, centre] = 1.0
        if layer.name == "stage1.conv1":
            weights[f"{layer.name}.bias"][3] = level
        else:
            w[3, 3, centre, centre] = 1.0
    weights["classifier.weight"][:, :3] = gain * codes
    weights["classifier.bias"][:] = -0.5 * gain * codes.sum(axis=1)
    model = Model(template.spec, weights)
    return model, Dataset(images, np.arange(8), 8, "corner-colours"), codes
