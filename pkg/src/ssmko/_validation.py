"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, InputError, NumericError


def as_tensor(x, ndim: int | None = None, name: str = "input") -> np.ndarray:
    """Return ``x`` as a float64 array, checking dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_sequence_matrix(X, width: int | None = None, name: str = "X") -> np.ndarray:
    """Validate an ``L x H`` activation matrix."""
    arr = check_finite(as_tensor(X, ndim=2, name=name), name)
    if arr.shape[0] < 1:
        raise DimensionError(f"{name} must contain at least one position")
    if width is not None and arr.shape[1] != width:
        raise DimensionError(f"{name} has width {arr.shape[1]}, expected {width}")
    return arr


def check_tokens(tokens: Iterable[int], vocab_size: int) -> np.ndarray:
    """Validate a token-id sequence against a vocabulary size."""
    ids = np.asarray(list(tokens) if not isinstance(tokens, np.ndarray) else tokens)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("token sequence must be a non-empty 1-D sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError(f"token ids must be integers, got dtype {ids.dtype}")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InputError(
            f"token ids must lie in [0, {vocab_size}), got range [{ids.min()}, {ids.max()}]"
        )
    return ids.astype(np.int64)


def check_token_batch(X: Sequence, vocab_size: int) -> list[np.ndarray]:
    """Validate a collection of token sequences (ragged allowed)."""
    if len(X) == 0:
        raise InputError("expected at least one token sequence")
    return [check_tokens(seq, vocab_size) for seq in X]
