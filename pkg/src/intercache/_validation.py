"""Input checks shared by the public entry points."""
from __future__ import annotations

import numpy as np


class NonFiniteError(ValueError):
    pass


def check_finite(x: np.ndarray, what: str = "latent") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def check_tokens(x, d: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected a (n, {d}) token array, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("token subsequence must hold at least one token")
    return check_finite(x)


def check_latent(x, config) -> np.ndarray:
    """Validate a flattened (L, d) latent against a ModelConfig."""
    x = np.asarray(x)
    expected = (config.n_tokens, config.d)
    if x.shape != expected:
        raise ValueError(f"latent shape {x.shape} does not match config {expected}")
    return check_finite(x)


def check_mask(mask, shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask values must be 0 or 1")
        mask = mask.astype(bool)
    return mask
