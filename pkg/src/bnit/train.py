"""Model construction, SGD with momentum, the training loop and gradient checks."""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

from . import geometry
from .activations import ActivationKind, kink_distance
from .data import Dataset, batches
from .init import BiasScope, BiasTarget, InitConfig, init_bias, init_weights, make_rng
from .layers import Activation, BatchNorm, Linear, Sequential, SoftmaxCrossEntropy

KINK_MARGIN = 1e-3


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int, records: list):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.records = records


class UnsupportedGradcheck(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Architecture:
    """An MLP: ``sizes[0]`` inputs, hidden widths, ``sizes[-1]`` classes.

    ``activations`` and ``batchnorm`` have one entry per hidden layer,
    ``binary`` one entry per linear layer (output layer included).
    """

    sizes: tuple[int, ...]
    activations: tuple[ActivationKind, ...]
    binary: tuple[bool, ...]
    batchnorm: tuple[bool, ...]

    def __post_init__(self):
        n_hidden = len(self.sizes) - 2
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        object.__setattr__(self, "activations", tuple(ActivationKind.parse(a) for a in self.activations))
        if len(self.activations) != n_hidden or len(self.batchnorm) != n_hidden:
            raise ValueError("activations and batchnorm need one entry per hidden layer")
        if len(self.binary) != n_hidden + 1:
            raise ValueError("binary needs one entry per linear layer")

    @classmethod
    def mlp(cls, sizes: Sequence[int], activation, binary: bool = False, batchnorm: bool = False,
            binary_output: bool = False) -> "Architecture":
        n_hidden = len(sizes) - 2
        return cls(tuple(int(s) for s in sizes), (activation,) * n_hidden,
                   (binary,) * n_hidden + (binary_output,), (batchnorm,) * n_hidden)

    @property
    def has_binary(self) -> bool:
        return any(self.binary) or ActivationKind.SIGN_STE in self.activations


def build_model(arch: Architecture, cfg: InitConfig) -> Sequential:
    """Instantiate ``arch`` with parameters drawn from ``cfg``.

    Draw order per linear layer: weights row-major, then the bias draws.
    Biases land in the following batchnorm shift when ``cfg.bias_target`` is
    ``bn_shift`` and the layer has batchnorm, otherwise in the linear bias.
    """
    rng = make_rng(cfg.seed)
    layers = []
    n_linear = len(arch.sizes) - 1
    for i in range(n_linear):
        n, m = arch.sizes[i], arch.sizes[i + 1]
        hidden = i < n_linear - 1
        W = init_weights((m, n), cfg, rng)
        drawn = init_bias(m, cfg.bias_lambda, rng)
        if not hidden and cfg.apply_bias_to is not BiasScope.ALL_LAYERS:
            drawn = np.zeros_like(drawn)
        use_bn = hidden and arch.batchnorm[i]
        to_bn = use_bn and cfg.bias_target is BiasTarget.BN_SHIFT
        layers.append(Linear(W, np.zeros_like(drawn) if to_bn else drawn,
                             binary=arch.binary[i], name=f"fc{i + 1}"))
        if use_bn:
            bn = BatchNorm(m, name=f"bn{i + 1}")
            if to_bn:
                bn.params["beta"][...] = drawn
            layers.append(bn)
        if hidden:
            layers.append(Activation(arch.activations[i], name=f"act{i + 1}"))
    return Sequential(layers)


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 64
    clip_binary_weights: bool = True
    # step decay: multiply the rate by lr_decay every lr_decay_every epochs (0 = constant)
    lr_decay: float = 1.0
    lr_decay_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def rate(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)


@dataclasses.dataclass(frozen=True)
class TrainRecord:
    epoch: int
    train_loss: float
    val_error_rate: float
    geometry: dict[int, dict[str, float]] = dataclasses.field(default_factory=dict)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             velocity: Sequence[np.ndarray], cfg: OptimizerConfig, lr: float | None = None,
             clip: Sequence[bool] | None = None) -> Sequence[np.ndarray]:
    """In-place momentum SGD: ``v = mu*v + g; p -= lr*v``.

    Entries flagged in ``clip`` are clamped to [-1, 1] afterwards when
    ``cfg.clip_binary_weights`` is set.
    """
    lr = cfg.learning_rate if lr is None else lr
    clip = clip or [False] * len(params)
    if not len(params) == len(grads) == len(velocity) == len(clip):
        raise ValueError("params, grads, velocity and clip flags must have equal length")
    for p, g, v, c in zip(params, grads, velocity, clip):
        if not p.shape == g.shape == v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v += g
        p -= lr * v
        if c and cfg.clip_binary_weights:
            np.clip(p, -1.0, 1.0, out=p)
    return params


def _param_lists(model: Sequential):
    params, grads, clip = [], [], []
    for _, layer, key in model.named_parameters():
        params.append(layer.params[key])
        grads.append(layer.grads[key])
        clip.append(isinstance(layer, Linear) and layer.binary and key == "W")
    return params, grads, clip


def evaluate(model: Sequential, ds: Dataset, chunk: int = 4096) -> tuple[float, float]:
    """Mean loss and argmax error rate in inference mode."""
    loss_fn = SoftmaxCrossEntropy()
    total_loss, wrong = 0.0, 0
    for start in range(0, len(ds), chunk):
        X = ds.X[:, start:start + chunk]
        y = ds.y[start:start + chunk]
        logits = model.forward(X, training=False)
        total_loss += loss_fn.forward(logits, y) * y.size
        wrong += int(np.count_nonzero(logits.argmax(axis=0) != y))
    return total_loss / len(ds), wrong / len(ds)


def hidden_blocks(model: Sequential):
    """Yield ``(linear, batchnorm_or_None, activation)`` for each hidden block."""
    layers = list(model)
    i = 0
    while i < len(layers):
        lin = layers[i]
        if not isinstance(lin, Linear):
            i += 1
            continue
        bn = layers[i + 1] if i + 1 < len(layers) and isinstance(layers[i + 1], BatchNorm) else None
        j = i + (2 if bn else 1)
        if j < len(layers) and isinstance(layers[j], Activation):
            yield lin, bn, layers[j]
            i = j + 1
        else:
            i = j


def block_hyperplanes(lin: Linear, bn: BatchNorm | None, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine map from block input to activation input.

    Batchnorm is folded in using the statistics of ``X`` itself, i.e. the
    normalization a full batch of ``X`` would see in training mode.
    """
    W, b = lin.effective_weight(), lin.b
    if bn is None:
        return W, b
    mean, var = bn.batch_stats(W @ X + b)
    s, shift = bn.fold(mean, var)
    return s * W, s * b + shift


def audit_geometry(model: Sequential, X: np.ndarray, layers: str = "first",
                   seed: int = 0) -> dict[int, geometry.GeometryReport]:
    """Geometry reports of hidden blocks (1-based index) on inputs ``X``."""
    reports = {}
    h = X
    for idx, (lin, bn, act) in enumerate(hidden_blocks(model), start=1):
        W, b = block_hyperplanes(lin, bn, h)
        z = W @ h + b
        if act.kind is not ActivationKind.IDENTITY:
            mask = geometry.mask_from_preactivation(z, act.kind)
            reports[idx] = geometry.geometry_report(mask, h, seed=seed)
        if layers == "first":
            break
        h = act.forward(z, training=False)
    return reports


def fit(model: Sequential, train: Dataset, val: Dataset, opt: OptimizerConfig, seed: int,
        geometry_every: int = 0, geometry_layers: str = "first",
        on_record: Callable[[TrainRecord], None] | None = None) -> list[TrainRecord]:
    """Train ``model`` in place, returning one record per epoch (epoch 0 = initialization).

    Geometry is audited at epoch 0 and then every ``geometry_every`` epochs
    (0 = initialization only) on the training inputs.
    """
    loss_fn = SoftmaxCrossEntropy()
    params, grads, clip = _param_lists(model)
    velocity = [np.zeros_like(p) for p in params]
    records: list[TrainRecord] = []

    def record(epoch: int) -> None:
        train_loss, _ = evaluate(model, train)
        _, val_err = evaluate(model, val)
        geo = {}
        if epoch == 0 or (geometry_every > 0 and epoch % geometry_every == 0):
            geo = {k: r.summary() for k, r in audit_geometry(model, train.X, geometry_layers, seed).items()}
        rec = TrainRecord(epoch, train_loss, val_err, geo)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if not math.isfinite(train_loss):
            raise NonFiniteLossError(epoch, -1, records)

    record(0)
    for epoch in range(1, opt.epochs + 1):
        lr = opt.rate(epoch)
        for bi, (X, y) in enumerate(batches(train, opt.batch_size, seed, epoch)):
            model.zero_grad()
            loss = loss_fn.forward(model.forward(X, training=True), y)
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, bi, records)
            model.backward(loss_fn.backward())
            sgd_step(params, grads, velocity, opt, lr=lr, clip=clip)
        record(epoch)
    return records


def train_model(arch: Architecture, train: Dataset, val: Dataset, init_cfg: InitConfig,
                opt_cfg: OptimizerConfig, seed: int, **kwargs) -> list[TrainRecord]:
    """Build ``arch`` from ``init_cfg`` reseeded with ``seed`` and train it.

    The seed fixes both the initial parameters and the shuffling order, so
    runs that differ only in lambda start from identical weights.
    """
    if arch.sizes[0] != train.n_features:
        raise ValueError(f"architecture expects {arch.sizes[0]} inputs, data has {train.n_features}")
    if arch.sizes[-1] < train.n_classes:
        raise ValueError(f"architecture has {arch.sizes[-1]} outputs for {train.n_classes} classes")
    model = build_model(arch, dataclasses.replace(init_cfg, seed=seed))
    return fit(model, train, val, opt_cfg, seed, **kwargs)


def _preactivations(model: Sequential, X: np.ndarray) -> list[tuple[ActivationKind, np.ndarray]]:
    out = []
    h = X
    for layer in model:
        if isinstance(layer, Activation):
            out.append((layer.kind, h))
        h = layer.forward(h, training=True)
    return out


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def gradcheck(arch: Architecture, data: Dataset, seed: int, probes: int, init_cfg: InitConfig | None = None,
              batch_size: int = 4, h: float = 1e-5, max_attempts: int = 500) -> float:
    """Max relative error between backprop and central differences over random parameters.

    A batch is redrawn until every pre-activation is at least ``KINK_MARGIN``
    away from a kink. Binary layers and sign activations are refused.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if arch.has_binary:
        raise UnsupportedGradcheck("STE is not a true gradient; binary layers and sign "
                                   "activations cannot be finite-difference checked")
    cfg = dataclasses.replace(init_cfg or InitConfig(), seed=seed)
    model = build_model(arch, cfg)
    rng = np.random.Generator(np.random.PCG64([int(seed), 1]))
    batch_size = min(batch_size, len(data))

    for _ in range(max_attempts):
        idx = rng.choice(len(data), size=batch_size, replace=False)
        X, y = data.X[:, idx], data.y[idx]
        if all(kink_distance(kind, z) >= KINK_MARGIN for kind, z in _preactivations(model, X)):
            break
    else:
        raise RuntimeError(f"no off-kink batch found in {max_attempts} attempts")

    loss_fn = SoftmaxCrossEntropy()

    def loss() -> float:
        return loss_fn.forward(model.forward(X, training=True), y)

    model.zero_grad()
    loss()
    model.backward(loss_fn.backward())

    entries = list(model.named_parameters())
    sizes = np.array([layer.params[key].size for _, layer, key in entries])
    flat = rng.choice(sizes.sum(), size=min(probes, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in flat:
        which = int(np.searchsorted(offsets, f, side="right") - 1)
        _, layer, key = entries[which]
        p = layer.params[key].reshape(-1)
        k = int(f - offsets[which])
        analytic = float(layer.grads[key].reshape(-1)[k])
        theta = p[k]
        step = h * max(1.0, abs(theta))
        p[k] = theta + step
        up = loss()
        p[k] = theta - step
        down = loss()
        p[k] = theta
        worst = max(worst, relative_error(analytic, (up - down) / (2 * step)))
    return worst


def binary_weight_range(model: Sequential) -> tuple[float, float]:
    """Min and max over latent weights of binary layers ((0, 0) if none)."""
    ws = [layer.W for layer in model if isinstance(layer, Linear) and layer.binary]
    if not ws:
        return 0.0, 0.0
    return min(float(w.min()) for w in ws), max(float(w.max()) for w in ws)

