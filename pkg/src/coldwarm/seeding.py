"""Deterministic per-task seed derivation.

Every scan task gets its own RNG stream derived from (base_seed, entity, N),
so results do not depend on execution order or worker count, and a recorded
seed replays one task exactly.
"""

import numpy as np


def derive_seed(*components: int) -> int:
    """Mix integer components into a single 32-bit seed."""
    ss = np.random.SeedSequence([int(c) for c in components])
    return int(ss.generate_state(1)[0])


def rng_for(*components: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*components))
