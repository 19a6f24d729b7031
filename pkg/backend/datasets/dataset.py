"""
In-memory labelled image sets
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from utils.errors import InvalidArgumentError


class ImageRecord(NamedTuple):
    pixels: np.ndarray  # C x H x W in [0, 1]
    label: int


@dataclass(frozen=True)
class Dataset:
    """
    Immutable image set stored as one N x C x H x W float32 array

    Records are exposed through indexing and iteration so callers can treat it
    as an ordered list of ImageRecord.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = ""
    source_ndim: Optional[int] = None  # rank of the image array in the file it was parsed from

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float32)
        labels = np.array(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise InvalidArgumentError(f"images must be N x C x H x W, got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise InvalidArgumentError(f"{labels.shape[0]} labels for {images.shape[0]} images")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        if images.size and (images.min() < 0 or images.max() > 1):
            raise InvalidArgumentError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.images.shape[0])

    def __getitem__(self, index):
        return ImageRecord(self.images[index], int(self.labels[index]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices, tag=None):
        indices = np.asarray(indices, dtype=np.int64)
        provenance = f"{self.provenance}[{tag}]" if tag else self.provenance
        return Dataset(self.images[indices], self.labels[indices], self.num_classes, provenance, self.source_ndim)

    @staticmethod
    def concatenate(parts, provenance=""):
        if not parts:
            raise InvalidArgumentError("nothing to concatenate")
        classes = {p.num_classes for p in parts}
        shapes = {p.image_shape for p in parts}
        ranks = {p.source_ndim for p in parts}
        if len(classes) != 1 or len(shapes) != 1:
            raise InvalidArgumentError("datasets disagree on class count or image shape")
        return Dataset(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            classes.pop(),
            provenance or "+".join(p.provenance for p in parts),
            ranks.pop() if len(ranks) == 1 else None,
        )
