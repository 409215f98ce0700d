"""Experiment configuration: INI file sections plus command-line overrides.

Example::

    [arch]
    sizes = 784, 256, 256, 10
    activation = htanh
    batchnorm = true

    [data]
    source = idx
    images = data/mnist5k/images-idx3-ubyte.gz
    labels = data/mnist5k/labels-idx1-ubyte.gz

    [init]
    bias_lambda = 0
    bias_target = bn_shift

    [optim]
    learning_rate = 0.01
    epochs = 5

    [experiment]
    seeds = 0, 1, 2
    lambda_grid = 0, 1, 2

Relative data paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from pathlib import Path

import numpy as np

from .activations import ActivationKind
from .data import Dataset, load_idx, make_blobs, standardize, train_val_split
from .init import InitConfig
from .train import Architecture, OptimizerConfig

OUTPUT_ENV = "BNIT_OUT"
MAX_NORM_TOKEN = "max_norm+1"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class DataSpec:
    source: str = "blobs"
    images: str | None = None
    labels: str | None = None
    n_classes: int = 4
    dim: int = 16
    per_class: int = 200
    spread: float = 1.0
    radius: float = 4.0
    clusters_per_class: int = 1
    data_seed: int = 0
    val_fraction: float = 0.2
    standardize: bool = False

    def load(self) -> tuple[Dataset, Dataset]:
        if self.source == "idx":
            if not (self.images and self.labels):
                raise ConfigError("[data] source = idx needs both images and labels paths")
            ds = load_idx(self.images, self.labels, n_classes=self.n_classes)
        elif self.source == "blobs":
            ds = make_blobs(self.n_classes, self.dim, self.per_class, self.spread, self.data_seed,
                            radius=self.radius, clusters_per_class=self.clusters_per_class)
        else:
            raise ConfigError(f"unknown data source {self.source!r}")
        train, val = train_val_split(ds, self.val_fraction, self.data_seed)
        if self.standardize:
            train, val = standardize(train, val)
        return train, val


@dataclasses.dataclass(frozen=True)
class ArchSpec:
    sizes: tuple[int, ...] = (16, 32, 4)
    activation: tuple[str, ...] = ("htanh",)
    binary: bool = False
    binary_output: bool = False
    batchnorm: bool = False

    def build(self, activation: str | None = None, binary: bool | None = None) -> Architecture:
        n_hidden = len(self.sizes) - 2
        acts = (activation,) * n_hidden if activation else self.activation
        if len(acts) == 1:
            acts = acts * n_hidden
        if len(acts) != n_hidden:
            raise ConfigError(f"{len(acts)} activations given for {n_hidden} hidden layers")
        binary = self.binary if binary is None else binary
        return Architecture(self.sizes, acts, (binary,) * n_hidden + (self.binary_output,),
                            (self.batchnorm,) * n_hidden)


# named architecture presets for --arch: (activation, binary weights)
ARCH_PRESETS = {
    "relu": ("relu", False),
    "htanh": ("htanh", False),
    "binary": ("sign_ste", True),
}


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    arch: ArchSpec = ArchSpec()
    data: DataSpec = DataSpec()
    init: InitConfig = InitConfig()
    optim: OptimizerConfig = OptimizerConfig(learning_rate=0.05, epochs=20, batch_size=32)
    lambda_grid: tuple[str | float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
    seeds: tuple[int, ...] = (0,)
    output_dir: str | None = None
    geometry_every: int = 0
    geometry_layers: str = "first"
    gradcheck_probes: int = 200
    gradcheck_batch: int = 4
    # per-family learning rates for sweeps (None = optim.learning_rate)
    fp_learning_rate: float | None = None
    binary_learning_rate: float | None = None
    # lambda for a single train run given on the command line (overrides init.bias_lambda)
    train_lambda: float | str | None = None

    def architecture(self) -> Architecture:
        return self.arch.build()

    def out_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "runs")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in _split(text))


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_lambda(token) -> float | str:
    if isinstance(token, str) and token.strip().lower() == MAX_NORM_TOKEN:
        return MAX_NORM_TOKEN
    lam = float(token)
    if not lam >= 0:
        raise ConfigError(f"lambda must be non-negative, got {token!r}")
    return lam


def resolve_lambda(lam, X: np.ndarray) -> float:
    """Numeric lambda; ``max_norm+1`` becomes max ||x|| + 1 over the columns of X."""
    if lam == MAX_NORM_TOKEN:
        return float(np.linalg.norm(X, axis=0).max() + 1.0)
    return float(lam)


_SECTIONS = {
    "arch": {"sizes", "activation", "binary", "binary_output", "batchnorm"},
    "data": {f.name for f in dataclasses.fields(DataSpec)},
    "init": {f.name for f in dataclasses.fields(InitConfig)},
    "optim": {f.name for f in dataclasses.fields(OptimizerConfig)},
    "experiment": {"lambda_grid", "seeds", "output_dir", "geometry_every", "geometry_layers",
                   "gradcheck_probes", "gradcheck_batch"},
    "sweep": {"fp_learning_rate", "binary_learning_rate"},
}


def _coerce(value: str, like):
    if isinstance(like, bool):
        return _bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def load_config(path=None) -> ExperimentConfig:
    """Read an INI file on top of the defaults; ``path=None`` gives the defaults."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return _apply(cfg, parser, path.parent)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _apply(cfg: ExperimentConfig, parser: configparser.ConfigParser, base: Path) -> ExperimentConfig:
    if parser.has_section("arch"):
        sec = parser["arch"]
        arch = cfg.arch
        kw = {}
        if "sizes" in sec:
            kw["sizes"] = tuple(int(t) for t in _split(sec["sizes"]))
        if "activation" in sec:
            kw["activation"] = tuple(ActivationKind.parse(t).value for t in _split(sec["activation"]))
        for key in ("binary", "binary_output", "batchnorm"):
            if key in sec:
                kw[key] = _bool(sec[key])
        cfg = dataclasses.replace(cfg, arch=dataclasses.replace(arch, **kw))
    if parser.has_section("data"):
        sec = parser["data"]
        kw = {}
        for f in dataclasses.fields(DataSpec):
            if f.name in sec:
                default = getattr(cfg.data, f.name)
                if f.name in ("images", "labels"):
                    p = Path(sec[f.name])
                    kw[f.name] = str(p if p.is_absolute() else base / p)
                else:
                    kw[f.name] = _coerce(sec[f.name], default)
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, **kw))
    if parser.has_section("init"):
        sec = parser["init"]
        kw = {k: (float(v) if k == "bias_lambda" else int(v) if k == "seed" else v) for k, v in sec.items()}
        cfg = dataclasses.replace(cfg, init=dataclasses.replace(cfg.init, **kw))
    if parser.has_section("optim"):
        sec = parser["optim"]
        kw = {k: _coerce(v, getattr(cfg.optim, k)) for k, v in sec.items()}
        cfg = dataclasses.replace(cfg, optim=dataclasses.replace(cfg.optim, **kw))
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        kw = {}
        if "lambda_grid" in sec:
            kw["lambda_grid"] = tuple(parse_lambda(t) for t in _split(sec["lambda_grid"]))
        if "seeds" in sec:
            kw["seeds"] = tuple(int(t) for t in _split(sec["seeds"]))
        if "output_dir" in sec:
            kw["output_dir"] = sec["output_dir"]
        for key in ("geometry_every", "gradcheck_probes", "gradcheck_batch"):
            if key in sec:
                kw[key] = int(sec[key])
        if "geometry_layers" in sec:
            if sec["geometry_layers"] not in ("first", "all"):
                raise ConfigError("geometry_layers must be 'first' or 'all'")
            kw["geometry_layers"] = sec["geometry_layers"]
        cfg = dataclasses.replace(cfg, **kw)
    if parser.has_section("sweep"):
        sec = parser["sweep"]
        cfg = dataclasses.replace(cfg, **{k: float(v) for k, v in sec.items()})
    return cfg


def apply_overrides(cfg: ExperimentConfig, seeds=None, lambdas=None, out=None, epochs=None,
                    arch=None) -> ExperimentConfig:
    if seeds:
        cfg = dataclasses.replace(cfg, seeds=tuple(int(s) for s in seeds))
    if lambdas:
        cfg = dataclasses.replace(cfg, lambda_grid=tuple(parse_lambda(x) for x in lambdas))
    if out:
        cfg = dataclasses.replace(cfg, output_dir=str(out))
    if epochs is not None:
        cfg = dataclasses.replace(cfg, optim=dataclasses.replace(cfg.optim, epochs=int(epochs)))
    if arch:
        if arch not in ARCH_PRESETS:
            raise ConfigError(f"unknown --arch {arch!r}; choose from {', '.join(ARCH_PRESETS)}")
        act, binary = ARCH_PRESETS[arch]
        cfg = dataclasses.replace(cfg, arch=dataclasses.replace(cfg.arch, activation=(act,), binary=binary))
    for seed in cfg.seeds:
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed {seed} is not an unsigned 64-bit integer")
    return cfg
