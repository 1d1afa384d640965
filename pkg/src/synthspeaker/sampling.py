"""Temperature sampling shared by the character generators.

Each generated block owns one RNG and consumes exactly one uniform draw per
character, so a block's text depends only on its own seed and the model, not
on how many blocks happen to be batched together.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def validate_temperature(temperature: float) -> None:
    if temperature < 0:
        raise ParameterError(f"temperature must be >= 0, got {temperature}")


def draw_next(logits: np.ndarray, temperature: float, rngs) -> np.ndarray:
    """Pick one symbol per batch row from [batch, vocab] logits.

    Temperature 0 is greedy argmax; otherwise logits are divided by the
    temperature and one uniform draw per row picks from the softmax
    distribution via its CDF.
    """
    validate_temperature(temperature)
    if temperature == 0:
        return np.argmax(logits, axis=-1)
    probs = softmax(logits / temperature)
    cdf = np.cumsum(probs, axis=-1)
    u = np.array([rng.random() for rng in rngs])
    idx = np.sum(cdf <= u[:, None], axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)
