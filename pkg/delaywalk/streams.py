"""Deterministic per-trajectory random substreams."""

import numpy as np

from delaywalk.exceptions import ConfigurationError

MAX_SEED = 2**64 - 1


def check_seed(master_seed: int) -> int:
    if not 0 <= int(master_seed) <= MAX_SEED:
        raise ConfigurationError(f"Master seed must be an unsigned 64-bit integer, got {master_seed}")
    return int(master_seed)


def substream(master_seed: int, index: int) -> np.random.Generator:
    """
    Generator for trajectory `index`.

    The stream depends only on (master_seed, index), so results never
    depend on how trajectories are spread over workers.
    """
    sequence = np.random.SeedSequence(check_seed(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(sequence))
