"""Seed derivation shared by dataset generation, training and sampling."""

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive an independent 63-bit seed from a root seed and integer keys.

    The result depends only on (seed, keys), never on the order in which
    workers ask for it, so parallel and serial runs draw identical streams.
    """
    sequence = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
