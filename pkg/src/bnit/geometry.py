"""Hyperplane activation-region audits.

A layer with weight rows ``w_j`` and biases ``b_j`` defines one hyperplane per
neuron. A sample ``x`` *activates* neuron ``j`` when the neuron passes gradient
for it: ``w_j.x + b_j > 0`` for ReLU, ``|w_j.x + b_j| < 1`` for htanh and
sign/STE (the boundary counts as saturated).

Three statistics summarise the arrangement:

* ``per_plane_fraction`` -- share of samples activating each neuron
  (hyperplane equality: all close to one value).
* ``per_sample_count`` and its Pearson correlation with ``||x||``
  (data equality: the count should not depend on the distance to the origin).
* ``mean_pairwise_jaccard`` -- mean Jaccard overlap of the activated sample
  sets over neuron pairs (region diversity: lower is more diverse). This is
  our own quantitative reading of "diverse regions", not a standard metric.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np

from .activations import ActivationKind
from .init import InitConfig, init_bias, init_weights, make_rng
from .tensor import ShapeError

MAX_JACCARD_PAIRS = 10_000
_CHUNK = 8192


@dataclasses.dataclass(frozen=True)
class ActivationMask:
    mask: np.ndarray  # bool, neurons x samples
    kind: ActivationKind


@dataclasses.dataclass(frozen=True)
class GeometryReport:
    per_sample_count: np.ndarray
    per_plane_fraction: np.ndarray
    norm_count_correlation: float
    mean_pairwise_jaccard: float
    sample_norms: np.ndarray
    # True when counts or norms have zero variance and the correlation is undefined
    degenerate: bool = False

    @property
    def n_planes(self) -> int:
        return self.per_plane_fraction.shape[0]

    @property
    def n_samples(self) -> int:
        return self.per_sample_count.shape[0]

    def summary(self) -> dict[str, float]:
        return {
            "plane_fraction_mean": float(self.per_plane_fraction.mean()),
            "sample_count_mean": float(self.per_sample_count.mean()),
            "norm_count_corr": self.norm_count_correlation,
            "mean_jaccard": self.mean_pairwise_jaccard,
        }


def preactivation(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or X.ndim != 2 or W.shape[1] != X.shape[0]:
        raise ShapeError(f"weights {W.shape} do not conform with samples {X.shape}")
    if b.shape != (W.shape[0], 1):
        raise ShapeError(f"bias {b.shape} does not match weights {W.shape}")
    return W @ X + b


def mask_from_preactivation(z: np.ndarray, kind: ActivationKind) -> ActivationMask:
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.RELU:
        return ActivationMask(z > 0, kind)
    if kind in (ActivationKind.HTANH, ActivationKind.SIGN_STE):
        return ActivationMask(np.abs(z) < 1.0, kind)
    raise ValueError(f"no activated region is defined for {kind.value}")


def activation_mask(W: np.ndarray, b: np.ndarray, X: np.ndarray, kind: ActivationKind) -> ActivationMask:
    return mask_from_preactivation(preactivation(W, b, X), kind)


def _pearson(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        return 0.0, True
    return float(np.clip((a @ b) / denom, -1.0, 1.0)), False


def _gram(mask: np.ndarray) -> np.ndarray:
    # float32 holds 0/1 partial sums exactly up to 2**24 samples per chunk
    m, n = mask.shape
    inter = np.zeros((m, m))
    for start in range(0, n, _CHUNK):
        block = mask[:, start:start + _CHUNK].astype(np.float32)
        inter += (block @ block.T).astype(np.float64)
    return inter


def mean_pairwise_jaccard(mask: np.ndarray, seed: int = 0, max_pairs: int = MAX_JACCARD_PAIRS) -> float:
    m = mask.shape[0]
    if m < 2:
        return 1.0
    rows, cols = np.triu_indices(m, k=1)
    if rows.size > max_pairs:
        rng = np.random.Generator(np.random.PCG64(seed))
        pick = np.sort(rng.choice(rows.size, size=max_pairs, replace=False))
        rows, cols = rows[pick], cols[pick]
    inter = _gram(mask)
    sizes = np.diag(inter)
    i = inter[rows, cols]
    union = sizes[rows] + sizes[cols] - i
    # two empty regions are identical
    jac = np.where(union > 0, i / np.where(union > 0, union, 1.0), 1.0)
    return float(jac.mean())


def geometry_report(mask: ActivationMask, X: np.ndarray, seed: int = 0,
                    max_pairs: int = MAX_JACCARD_PAIRS) -> GeometryReport:
    m = mask.mask
    if X.ndim != 2 or m.shape[1] != X.shape[1]:
        raise ShapeError(f"mask {m.shape} and samples {X.shape} disagree on sample count")
    if X.shape[1] == 0:
        raise ValueError("geometry report needs at least one sample")
    counts = m.sum(axis=0)
    fractions = m.sum(axis=1) / m.shape[1]
    norms = np.linalg.norm(X, axis=0)
    corr, degenerate = _pearson(norms, counts.astype(np.float64))
    return GeometryReport(
        per_sample_count=counts,
        per_plane_fraction=fractions,
        norm_count_correlation=corr,
        mean_pairwise_jaccard=mean_pairwise_jaccard(m, seed, max_pairs),
        sample_norms=norms,
        degenerate=degenerate,
    )


def data_equality_score(report: GeometryReport) -> float:
    """|corr(||x||, active count)|; 0 means the count ignores the radius.

    Degenerate reports (``report.degenerate``) score 0.
    """
    if report.degenerate:
        return 0.0
    return abs(report.norm_count_correlation)


def mean_counts_over_draws(X: np.ndarray, m: int, lam: float, kind: ActivationKind,
                           seeds, weight_scheme: str = "unit_norm_rows") -> np.ndarray:
    """Per-sample active count averaged over independent layer initializations.

    Each seed draws an ``m x d`` weight matrix and a uniform [-lam, lam] bias
    in the usual order. This estimates the count a sample can expect under
    the initialization distribution; a single draw of ``m`` planes scatters
    around that expectation.
    """
    cfg = InitConfig(weight_scheme=weight_scheme)
    total = np.zeros(X.shape[1])
    seeds = list(seeds)
    for seed in seeds:
        rng = make_rng(seed)
        W = init_weights((m, X.shape[0]), cfg, rng)
        b = init_bias(m, lam, rng)
        total += activation_mask(W, b, X, kind).mask.sum(axis=0)
    return total / len(seeds)


def norm_count_correlation(X: np.ndarray, counts: np.ndarray) -> float:
    """Pearson correlation of sample norms with ``counts`` (0 when undefined)."""
    return _pearson(np.linalg.norm(X, axis=0), np.asarray(counts, dtype=np.float64))[0]


CSV_VERSION = "# bnit-geometry v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report_csv(report: GeometryReport, out_dir, prefix: str, lam: float,
                     layer: int, step: int) -> list[Path]:
    """Write ``<prefix>_planes.csv``, ``<prefix>_samples.csv`` and ``<prefix>_summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    planes = out_dir / f"{prefix}_planes.csv"
    samples = out_dir / f"{prefix}_samples.csv"
    summary = out_dir / f"{prefix}_summary.csv"
    with planes.open("w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "fraction"])
        for j, f in enumerate(report.per_plane_fraction):
            w.writerow([j, _fmt(f)])
    with samples.open("w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "norm", "count"])
        for k, (nrm, c) in enumerate(zip(report.sample_norms, report.per_sample_count)):
            w.writerow([k, _fmt(nrm), int(c)])
    with summary.open("w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["norm_count_corr", "mean_jaccard", "plane_fraction_mean",
                    "sample_count_mean", "degenerate", "lambda", "layer", "step"])
        s = report.summary()
        w.writerow([_fmt(s["norm_count_corr"]), _fmt(s["mean_jaccard"]),
                    _fmt(s["plane_fraction_mean"]), _fmt(s["sample_count_mean"]),
                    int(report.degenerate), _fmt(lam), layer, step])
    return [planes, samples, summary]
