"""Dense 2-D float64 matrix helpers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
Batches are stored one sample per column, so ``W @ X`` maps a whole batch.
Every helper validates shapes and returns a freshly allocated array.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a C-contiguous float64 matrix, promoting 1-D input to a column."""
    m = np.array(a, dtype=np.float64, order="C", copy=True)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def add_col_broadcast(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Add column vector ``v`` (rows x 1) to every column of ``a``."""
    if v.shape != (a.shape[0], 1):
        raise ShapeError(f"cannot broadcast {v.shape} over columns of {a.shape}")
    return a + v


def map(a: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:  # noqa: A001
    """Apply a vectorised elementwise function."""
    out = np.asarray(f(a), dtype=np.float64)
    if out.shape != a.shape:
        raise ShapeError(f"elementwise function changed shape {a.shape} -> {out.shape}")
    return out


def rowsum(a: np.ndarray) -> np.ndarray:
    return a.sum(axis=1, keepdims=True)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard of mismatched shapes {a.shape} and {b.shape}")
    return a * b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * float(c)
