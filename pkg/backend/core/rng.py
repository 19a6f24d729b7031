"""
Keyed random streams

A stream is identified by (seed, image index, iteration, branch tag); the
same key always replays the same draws, whatever thread or order runs it.
"""
import zlib
from dataclasses import dataclass, replace

import numpy as np


def tag_id(tag):
    """Stable 32-bit id for a text tag"""
    return zlib.crc32(str(tag).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    seed: int
    image_index: int = 0
    iteration: int = 0
    branch: str = ""

    def child(self, tag):
        branch = f"{self.branch}/{tag}" if self.branch else str(tag)
        return replace(self, branch=branch)

    def at_iteration(self, iteration):
        return replace(self, iteration=int(iteration))

    def generator(self):
        entropy = [int(self.seed) & 0xFFFFFFFF, int(self.image_index), int(self.iteration),
                   tag_id(self.branch)]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
