"""Elementwise activation rules and their backward gates.

Each backward takes the pre-activation ``z`` seen in the forward pass and the
upstream gradient, and returns either the upstream value or zero per element.
"""

from __future__ import annotations

import enum

import numpy as np

from .tensor import ShapeError


class ActivationKind(str, enum.Enum):
    RELU = "relu"
    HTANH = "htanh"
    SIGN_STE = "sign_ste"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value: "str | ActivationKind") -> "ActivationKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"sign": "sign_ste", "ste": "sign_ste", "hardtanh": "htanh", "linear": "identity"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown activation {value!r}") from None


def _check(z: np.ndarray, upstream: np.ndarray) -> None:
    if z.shape != upstream.shape:
        raise ShapeError(f"pre-activation {z.shape} and upstream {upstream.shape} differ")


def relu_forward(z: np.ndarray) -> np.ndarray:
    # z == 0 falls on the inactive branch
    return np.where(z > 0, z, 0.0)


def relu_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    _check(z, upstream)
    return np.where(z > 0, upstream, 0.0)


def htanh_forward(z: np.ndarray) -> np.ndarray:
    return np.clip(z, -1.0, 1.0)


def htanh_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    _check(z, upstream)
    return np.where(np.abs(z) < 1.0, upstream, 0.0)


def sign_forward(z: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1, so the output is always in {-1, +1}."""
    return np.where(z >= 0, 1.0, -1.0)


def sign_ste_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Clipped straight-through estimator: pass where |z| <= 1."""
    _check(z, upstream)
    return np.where(np.abs(z) <= 1.0, upstream, 0.0)


def identity_forward(z: np.ndarray) -> np.ndarray:
    return z.copy()


def identity_backward(z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    _check(z, upstream)
    return upstream.copy()


FORWARD = {
    ActivationKind.RELU: relu_forward,
    ActivationKind.HTANH: htanh_forward,
    ActivationKind.SIGN_STE: sign_forward,
    ActivationKind.IDENTITY: identity_forward,
}

BACKWARD = {
    ActivationKind.RELU: relu_backward,
    ActivationKind.HTANH: htanh_backward,
    ActivationKind.SIGN_STE: sign_ste_backward,
    ActivationKind.IDENTITY: identity_backward,
}

# Points where the forward rule is not differentiable.
KINKS = {
    ActivationKind.RELU: (0.0,),
    ActivationKind.HTANH: (-1.0, 1.0),
    ActivationKind.SIGN_STE: (0.0,),
    ActivationKind.IDENTITY: (),
}


def forward(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    return FORWARD[ActivationKind.parse(kind)](z)


def backward(kind: ActivationKind, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return BACKWARD[ActivationKind.parse(kind)](z, upstream)


def kink_distance(kind: ActivationKind, z: np.ndarray) -> float:
    """Smallest distance from any element of ``z`` to a kink of ``kind`` (inf if none)."""
    kinks = KINKS[ActivationKind.parse(kind)]
    if not kinks or z.size == 0:
        return float("inf")
    return float(min(np.min(np.abs(z - k)) for k in kinks))
