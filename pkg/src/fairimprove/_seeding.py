import numpy as np

# Stream tags inside a procedure round.
SPLIT, BOOTSTRAP, SELECTION = 0, 1, 2


def derive_rng(seed, *key):
    """Generator that is a pure function of ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
