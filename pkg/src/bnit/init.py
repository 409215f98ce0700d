"""Seeded parameter initialization.

All randomness flows from a PCG64 generator (``numpy.random.PCG64``) seeded
with a 64-bit integer. A layer always consumes its draws in the same order:
the m*n weight draws in row-major order, then m uniform bias draws top-down.
The bias draws are consumed even when ``bias_lambda`` is zero, so changing
lambda never shifts the weights of later layers.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np


class WeightScheme(str, enum.Enum):
    HE = "he"
    GLOROT = "glorot"
    UNIT_NORM_ROWS = "unit_norm_rows"


class BiasScope(str, enum.Enum):
    ALL_HIDDEN = "hidden"
    ALL_LAYERS = "all"


class BiasTarget(str, enum.Enum):
    # where the uniform draws land when a linear layer is followed by batchnorm
    LINEAR = "linear"
    BN_SHIFT = "bn_shift"


@dataclasses.dataclass(frozen=True)
class InitConfig:
    weight_scheme: WeightScheme = WeightScheme.HE
    bias_lambda: float = 0.0
    seed: int = 0
    apply_bias_to: BiasScope = BiasScope.ALL_HIDDEN
    bias_target: BiasTarget = BiasTarget.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "weight_scheme", WeightScheme(self.weight_scheme))
        object.__setattr__(self, "apply_bias_to", BiasScope(self.apply_bias_to))
        object.__setattr__(self, "bias_target", BiasTarget(self.bias_target))
        if not self.bias_lambda >= 0:
            raise ValueError(f"bias_lambda must be >= 0, got {self.bias_lambda}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")

    def with_lambda(self, lam: float) -> "InitConfig":
        return dataclasses.replace(self, bias_lambda=float(lam))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def init_weights(shape: tuple[int, int], cfg: InitConfig, rng: np.random.Generator) -> np.ndarray:
    m, n = shape
    if m < 1 or n < 1:
        raise ValueError(f"weight shape must be positive, got {shape}")
    scheme = cfg.weight_scheme
    if scheme is WeightScheme.GLOROT:
        limit = np.sqrt(6.0 / (n + m))
        return rng.uniform(-limit, limit, size=(m, n))
    w = rng.standard_normal((m, n)) * np.sqrt(2.0 / n)
    if scheme is WeightScheme.UNIT_NORM_ROWS:
        w /= np.linalg.norm(w, axis=1, keepdims=True)
    return w


def init_bias(m: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Draw an m x 1 bias uniformly from [-lam, lam]; lam == 0 gives exact zeros."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    u = rng.random((m, 1))
    if lam == 0:
        return np.zeros((m, 1))
    return lam * (2.0 * u - 1.0)


def unit_norm_rows(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w, axis=1, keepdims=True)
