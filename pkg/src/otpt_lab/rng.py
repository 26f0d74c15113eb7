"""Counter-based random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox generator on a tuple of integers.  Philox output depends only on the
key and counter, so a given key yields the same numbers on every platform.
"""

from __future__ import annotations

import numpy as np

# stream tags; keep stable, they are part of the on-disk determinism contract
TAG_ENCODER = 1
TAG_CLASSES = 2
TAG_PROTOTYPES = 3
TAG_SAMPLES = 4
TAG_SHUFFLE = 5
TAG_PROMPT = 6
TAG_AUGMENT = 7
TAG_VALIDATION = 8


def stream(*key: int) -> np.random.Generator:
    words = [int(k) & 0xFFFFFFFF for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
