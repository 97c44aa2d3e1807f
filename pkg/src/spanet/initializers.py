"""Weight initialization."""

import numpy as np


def xavier_init(shape, fan_in, fan_out, rng):
    """Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).

    `rng` is an integer seed or a numpy Generator; passing a Generator lets a
    builder draw many arrays from one reproducible stream.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be >= 1, got fan_in={fan_in}, fan_out={fan_out}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
