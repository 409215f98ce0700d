"""Trainable layer blocks with explicit forward/backward passes.

Inputs are (features x batch) matrices. Backward calls accumulate into the
``grads`` dict of each layer; call ``zero_grad`` between optimizer steps.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import activations
from .activations import ActivationKind
from .tensor import ShapeError, add_col_broadcast, matmul, rowsum, transpose


class UsageError(RuntimeError):
    """A layer was used out of order, e.g. backward before forward."""


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)


class Linear(Layer):
    """Affine map ``W_eff @ x + b``; with ``binary`` set, ``W_eff = sign(W)``.

    For binary layers the weight gradient is passed straight through sign()
    to the latent full-precision ``W``; the bias stays real-valued.
    """

    def __init__(self, W: np.ndarray, b: np.ndarray, binary: bool = False, name: str = "linear"):
        super().__init__()
        W = np.array(W, dtype=np.float64)
        b = np.array(b, dtype=np.float64).reshape(-1, 1)
        if b.shape[0] != W.shape[0]:
            raise ShapeError(f"bias {b.shape} does not match weights {W.shape}")
        self.params = {"W": W, "b": b}
        self.grads = {"W": np.zeros_like(W), "b": np.zeros_like(b)}
        self.binary = binary
        self.name = name
        self.cache_x = None

    @property
    def W(self) -> np.ndarray:
        return self.params["W"]

    @property
    def b(self) -> np.ndarray:
        return self.params["b"]

    @property
    def in_features(self) -> int:
        return self.W.shape[1]

    @property
    def out_features(self) -> int:
        return self.W.shape[0]

    def effective_weight(self) -> np.ndarray:
        if self.binary:
            return activations.sign_forward(self.W)
        return self.W

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[0] != self.in_features:
            raise ShapeError(f"{self.name}: input {x.shape} does not match weights {self.W.shape}")
        self.cache_x = x
        return add_col_broadcast(matmul(self.effective_weight(), x), self.b)

    def backward(self, upstream):
        if self.cache_x is None:
            raise UsageError(f"{self.name}: backward called before forward")
        if upstream.shape != (self.out_features, self.cache_x.shape[1]):
            raise ShapeError(f"{self.name}: upstream {upstream.shape} does not match output shape")
        self.grads["W"] += matmul(upstream, transpose(self.cache_x))
        self.grads["b"] += rowsum(upstream)
        return matmul(transpose(self.effective_weight()), upstream)


class BatchNorm(Layer):
    """Per-feature batch normalization over the batch (column) axis."""

    def __init__(self, features: int, epsilon: float = 1e-5, momentum: float = 0.1,
                 name: str = "bn"):
        super().__init__()
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        self.params = {"gamma": np.ones((features, 1)), "beta": np.zeros((features, 1))}
        self.grads = {k: np.zeros((features, 1)) for k in self.params}
        self.running_mean = np.zeros((features, 1))
        self.running_var = np.ones((features, 1))
        self.epsilon = epsilon
        self.momentum = momentum
        self.name = name
        self._cache = None

    @property
    def gamma(self) -> np.ndarray:
        return self.params["gamma"]

    @property
    def beta(self) -> np.ndarray:
        return self.params["beta"]

    def batch_stats(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean = x.mean(axis=1, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
        return mean, var

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[0] != self.gamma.shape[0]:
            raise ShapeError(f"{self.name}: input {x.shape} does not match {self.gamma.shape[0]} features")
        if training:
            n = x.shape[1]
            if n < 2:
                raise UsageError(f"{self.name}: training mode needs a batch of at least 2, got {n}")
            mean, var = self.batch_stats(x)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            unbiased = var * (n / (n - 1))
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return self.gamma * xhat + self.beta

    def backward(self, upstream):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called before forward")
        xhat, inv_std = self._cache
        n = upstream.shape[1]
        self.grads["gamma"] += rowsum(upstream * xhat)
        self.grads["beta"] += rowsum(upstream)
        g = upstream * self.gamma
        return (inv_std / n) * (n * g - rowsum(g) - xhat * rowsum(g * xhat))

    def fold(self, mean: np.ndarray, var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scale and shift such that the layer output equals ``scale * x + shift``."""
        s = self.gamma / np.sqrt(var + self.epsilon)
        return s, self.beta - s * mean


class Activation(Layer):
    def __init__(self, kind: ActivationKind, name: str = "act"):
        super().__init__()
        self.kind = ActivationKind.parse(kind)
        self.name = name
        self.cache_z = None

    def forward(self, x, training=True):
        self.cache_z = x
        return activations.forward(self.kind, x)

    def backward(self, upstream):
        if self.cache_z is None:
            raise UsageError(f"{self.name}: backward called before forward")
        return activations.backward(self.kind, self.cache_z, upstream)


class SoftmaxCrossEntropy:
    """Mean softmax cross-entropy over a batch of logit columns."""

    def __init__(self):
        self._cache = None

    def forward(self, logits: np.ndarray, labels) -> float:
        labels = np.asarray(labels, dtype=np.int64)
        c, n = logits.shape
        if labels.shape != (n,):
            raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for a batch of {n}")
        if n and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"labels must lie in [0, {c}), got range "
                             f"[{labels.min()}, {labels.max()}]")
        shifted = logits - logits.max(axis=0, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
        log_p = shifted - log_z
        self._cache = (np.exp(log_p), labels)
        return float(-log_p[labels, np.arange(n)].mean())

    def backward(self) -> np.ndarray:
        if self._cache is None:
            raise UsageError("loss backward called before forward")
        probs, labels = self._cache
        n = labels.shape[0]
        grad = probs.copy()
        grad[labels, np.arange(n)] -= 1.0
        return grad / n


def softmax_xent_forward(logits: np.ndarray, labels) -> float:
    return SoftmaxCrossEntropy().forward(logits, labels)


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique: {names}")

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self):
        """Yield ``(qualified_name, layer, key)`` in a fixed order."""
        for layer in self.layers:
            for key in layer.params:
                yield f"{layer.name}.{key}", layer, key

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for qname, layer, key in self.named_parameters():
            state[qname] = layer.params[key]
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                state[f"{layer.name}.running_mean"] = layer.running_mean
                state[f"{layer.name}.running_var"] = layer.running_var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        by_name = {layer.name: layer for layer in self.layers}
        expected = set(self.state_dict())
        if set(state) != expected:
            raise ValueError(f"state keys {sorted(state)} do not match model keys {sorted(expected)}")
        for qname, value in state.items():
            lname, key = qname.rsplit(".", 1)
            layer = by_name[lname]
            if key in layer.params:
                if layer.params[key].shape != value.shape:
                    raise ShapeError(f"{qname}: {value.shape} vs {layer.params[key].shape}")
                layer.params[key][...] = value
            else:
                setattr(layer, key, np.array(value, dtype=np.float64))


# Parameter container: b"BNIT", u32 version, then per entry
# u32 name length, UTF-8 name, u64 rows, u64 cols, rows*cols f64 (all little-endian).
MAGIC = b"BNIT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, value in state.items():
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"{name}: only 2-D matrices can be stored, got {value.shape}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<QQ", *value.shape))
        chunks.append(np.ascontiguousarray(value).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter container (bad magic)")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    state = {}
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            rows, cols = struct.unpack_from("<QQ", data, pos)
            pos += 16
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated entry header") from exc
        nbytes = 8 * rows * cols
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        state[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos) \
            .reshape(rows, cols).astype(np.float64)
        pos += nbytes
    return state
