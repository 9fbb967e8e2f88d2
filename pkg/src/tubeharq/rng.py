"""Deterministic, stream-split random number generation.

Every stochastic component draws from its own Philox stream keyed by
``(seed, *labels)``, so e.g. policy-side randomness can never shift the
channel's erasure draws.
"""

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be nonnegative, got {label}")
        return int(label)
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return a Philox generator for the stream named by ``labels``."""
    words = [_label_word(seed)] + [_label_word(lab) for lab in labels]
    ss = np.random.SeedSequence(entropy=words)
    return np.random.Generator(np.random.Philox(ss))
