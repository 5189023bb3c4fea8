"""Dense float64 math shared by every layer kind.

Tensors are plain ``numpy.ndarray`` objects in float64.  ``-inf`` is a legal
logit value for :func:`softmax_rows` and marks a masked entry.
"""
from __future__ import annotations

import numpy as np

from ._validation import as_tensor
from .errors import DimensionError, NumericError

GELU_C = np.sqrt(2.0 / np.pi)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: numpy PCG64 seeded with a 64-bit integer."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``m x k`` and ``k x n`` operands in float64."""
    a = as_tensor(a, ndim=2, name="a")
    b = as_tensor(b, ndim=2, name="b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax over the last axis with ``-inf`` treated as masked.

    Masked entries come out as exact zeros; a row that is entirely masked maps
    to all zeros instead of NaN.
    """
    x = as_tensor(x)
    if np.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    if np.isposinf(x).any():
        raise NumericError("softmax input contains +inf")
    row_max = np.max(x, axis=-1, keepdims=True)
    dead = np.isneginf(row_max)
    shifted = x - np.where(dead, 0.0, row_max)
    e = np.exp(shifted)
    total = e.sum(axis=-1, keepdims=True)
    return np.where(dead, 0.0, e / np.where(dead, 1.0, total))


def log_softmax(x) -> np.ndarray:
    x = as_tensor(x)
    m = np.max(x, axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def rms_norm(x, gain, eps: float = 1e-6) -> np.ndarray:
    """Scale each vector along the last axis to unit RMS, then by ``gain``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    gain = as_tensor(gain, ndim=1, name="gain")
    if x.shape[-1] != gain.shape[0]:
        raise DimensionError(f"gain has size {gain.shape[0]}, input width is {x.shape[-1]}")
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / rms * gain


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Inverse of :func:`softplus` for ``y > 0``."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def gelu(x):
    """GELU, tanh approximation (the GPT-2 variant)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x**3)))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
