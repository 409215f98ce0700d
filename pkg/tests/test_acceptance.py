"""End-to-end acceptance checks, one test per criterion.

Each test carries an ``acceptance`` marker; the terminal summary prints one
PASS/FAIL line per criterion with the measured numbers.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from bnit import cli
from bnit import geometry as G
from bnit import train as T
from bnit.activations import ActivationKind, sign_ste_backward
from bnit.config import apply_overrides, load_config
from bnit.data import (
    BadMagicError,
    CountMismatchError,
    TruncatedError,
    load_idx,
    make_blobs,
    train_val_split,
    write_idx,
)
from bnit.init import InitConfig, init_bias, init_weights, make_rng
from bnit.layers import Linear
from bnit.train import Architecture, OptimizerConfig, binary_weight_range, build_model, gradcheck

ROOT = Path(__file__).resolve().parents[1]
MNIST = ROOT / "data" / "mnist5k"
HTANH = ActivationKind.HTANH
UNIT = InitConfig(weight_scheme="unit_norm_rows")


@pytest.fixture
def detail(record_property):
    def note(text):
        record_property("detail", text)
    return note


def layer1_mask(X, m, lam, kind, seed):
    rng = make_rng(seed)
    W = init_weights((m, X.shape[0]), UNIT, rng)
    b = init_bias(m, lam, rng)
    return G.activation_mask(W, b, X, kind), W


@pytest.mark.acceptance("gradient correctness")
def test_gradient_correctness(detail):
    ds = make_blobs(4, 16, 50, 1.0, seed=0)
    init = InitConfig(bias_lambda=1.0)
    t0 = time.perf_counter()
    worst = {}
    for width in (8, 32, 128):
        relu = Architecture.mlp((16, width, 4), "relu")
        bn_htanh = Architecture.mlp((16, width, 4), "htanh", batchnorm=True)
        worst[f"relu{width}"] = gradcheck(relu, ds, seed=width, probes=200, init_cfg=init)
        worst[f"bn_htanh{width}"] = gradcheck(bn_htanh, ds, seed=width, probes=200, init_cfg=init)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    detail(f"max rel err {top:.2e} over {len(worst)} nets, {elapsed:.1f}s")
    assert top < 1e-5, worst
    assert elapsed < 30


@pytest.mark.acceptance("relu hyperplane equality at init")
def test_relu_plane_equality(detail):
    t0 = time.perf_counter()
    X = np.random.default_rng(11).standard_normal((16, 100_000))
    mask, _ = layer1_mask(X, 256, 0.0, ActivationKind.RELU, seed=0)
    frac = G.geometry_report(mask, X).per_plane_fraction
    elapsed = time.perf_counter() - t0
    dev = float(np.abs(frac - 0.5).max())
    detail(f"max |fraction - 0.5| = {dev:.4f}, {elapsed:.2f}s")
    assert dev <= 0.02
    assert elapsed < 10


@pytest.mark.acceptance("htanh data inequality at lambda=0")
def test_htanh_inequality(detail):
    X = np.random.default_rng(12).standard_normal((16, 100_000))
    corrs = []
    for seed in range(5):
        mask, _ = layer1_mask(X, 100, 0.0, HTANH, seed)
        corrs.append(G.geometry_report(mask, X, seed=seed).norm_count_correlation)
    detail("corr " + ", ".join(f"{c:.3f}" for c in corrs))
    assert max(corrs) < -0.5


@pytest.mark.acceptance("data-equality restoration at lambda = max|x|+1")
def test_restoration(detail):
    # max |x| = 3 so that lambda = max|x| + 1 = 4 and m / lambda = 25
    X = np.random.default_rng(13).standard_normal((128, 100_000))
    X *= 3.0 / np.linalg.norm(X, axis=0).max()
    lam = float(np.linalg.norm(X, axis=0).max() + 1.0)
    mask, _ = layer1_mask(X, 100, lam, HTANH, seed=0)
    single = G.geometry_report(mask, X).norm_count_correlation
    # one draw of 100 planes shares its bias values across all samples, so
    # the sample mean is compared with m / lambda after averaging over draws
    counts = G.mean_counts_over_draws(X, 100, lam, HTANH, seeds=range(100))
    mean = float(counts.mean())
    averaged = G.norm_count_correlation(X, counts)
    detail(f"lambda={lam:.6g} corr single={single:.4f} averaged={averaged:.4f} mean count={mean:.3f}")
    assert lam == pytest.approx(4.0)
    assert abs(single) < 0.1
    assert abs(averaged) < 0.1
    assert abs(mean - 25.0) <= 1.25


@pytest.mark.acceptance("region diversity improves with lambda")
def test_jaccard_drops(detail):
    X = np.random.default_rng(14).standard_normal((16, 10_000))
    pairs = []
    for seed in range(5):
        rng = make_rng(seed)
        W = init_weights((100, 16), UNIT, rng)
        u = rng.random((100, 1))  # one draw, scaled to both widths
        j0 = G.mean_pairwise_jaccard(G.activation_mask(W, 0.0 * u, X, HTANH).mask, seed=seed)
        j2 = G.mean_pairwise_jaccard(G.activation_mask(W, 2.0 * (2 * u - 1), X, HTANH).mask, seed=seed)
        pairs.append((j0, j2))
    detail("J(0) -> J(2): " + ", ".join(f"{a:.3f}->{b:.3f}" for a, b in pairs))
    assert all(j2 < j0 for j0, j2 in pairs)


@pytest.mark.acceptance("STE and binary-layer contracts")
def test_ste_binary_contracts(detail, monkeypatch):
    rng = np.random.default_rng(15)
    # binary forward sees only +-1, zeros included
    W = rng.uniform(-1, 1, (64, 32))
    W[::7, ::5] = 0.0
    lin = Linear(W, rng.standard_normal((64, 1)), binary=True)
    Weff = lin.effective_weight()
    x = rng.standard_normal((32, 10))
    ok_values = set(np.unique(Weff)) == {-1.0, 1.0}
    ok_forward = np.array_equal(lin.forward(x), np.where(W >= 0, 1.0, -1.0) @ x + lin.b)

    z = rng.uniform(-3, 3, 1_000_000)
    z[:6] = [-1.0, 1.0, np.nextafter(1.0, 2.0), np.nextafter(-1.0, -2.0), 0.0, -0.0]
    up = rng.standard_normal(z.size)
    gate = np.abs(z) <= 1.0
    got = sign_ste_backward(z, up)
    ok_gate = np.array_equal(got, np.where(gate, up, 0.0))

    ds = make_blobs(3, 8, 100, 1.0, seed=2)
    train, val = train_val_split(ds, 0.2, seed=2)
    model = build_model(Architecture.mlp((8, 32, 32, 3), "sign_ste", binary=True, batchnorm=True),
                        InitConfig(seed=0))
    ranges = []
    real = T.sgd_step

    def checked(*args, **kwargs):
        out = real(*args, **kwargs)
        ranges.append(binary_weight_range(model))
        return out

    monkeypatch.setattr(T, "sgd_step", checked)
    recs = T.fit(model, train, val, OptimizerConfig(learning_rate=0.1, epochs=20, batch_size=32), seed=0)
    lo, hi = min(r[0] for r in ranges), max(r[1] for r in ranges)
    ok_clip = len(recs) == 21 and -1.0 <= lo and hi <= 1.0
    detail(f"values={ok_values} forward={ok_forward} gate={ok_gate} latent in [{lo:.3f}, {hi:.3f}] "
           f"over {len(ranges)} steps")
    assert ok_values and ok_forward and ok_gate and ok_clip


@pytest.mark.acceptance("desk-scale lambda trend on MNIST subset")
def test_trend(detail, tmp_path):
    cfg = apply_overrides(load_config(ROOT / "configs" / "mnist5k_sweep.ini"), out=tmp_path)
    assert cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.lambda_grid == (0.0, 1.0, 2.0)
    t0 = time.perf_counter()
    res = cli.run_sweep(cfg)
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean(v)) for k, v in res.items()}
    fp_wins = sum(a < b for a, b in zip(res[("fp", 2.0)], res[("fp", 0.0)]))
    bin_wins = sum(a < b for a, b in zip(res[("binary", 2.0)], res[("binary", 0.0)]))
    relu = mean[("relu", 0.0)]
    detail(f"htanh {mean[('fp', 0.0)]:.4f}/{mean[('fp', 1.0)]:.4f}/{mean[('fp', 2.0)]:.4f} "
           f"({fp_wins}/5), binary {mean[('binary', 0.0)]:.4f}/{mean[('binary', 1.0)]:.4f}/"
           f"{mean[('binary', 2.0)]:.4f} ({bin_wins}/5), relu {relu:.4f}, {elapsed:.0f}s")
    assert mean[("fp", 2.0)] < mean[("fp", 0.0)] and fp_wins >= 4
    assert mean[("binary", 2.0)] < mean[("binary", 0.0)] and bin_wins >= 4
    assert all(relu <= mean[("fp", lam)] for lam in (0.0, 1.0, 2.0))
    assert elapsed < 600


@pytest.mark.acceptance("cmd_train determinism")
def test_train_determinism(detail, tmp_path):
    cfg = tmp_path / "t.ini"
    cfg.write_text("[arch]\nsizes = 10, 24, 24, 3\nactivation = htanh\nbatchnorm = true\n"
                   "[data]\nn_classes = 3\ndim = 10\nper_class = 60\n"
                   "[optim]\nepochs = 4\nbatch_size = 16\n"
                   "[experiment]\nseeds = 0, 17\ngeometry_every = 2\ngeometry_layers = all\n")
    compared = 0
    for arch in ("htanh", "binary"):
        for run in ("a", "b"):
            assert cli.main(["train", "--config", str(cfg), "--arch", arch, "--lambda", "1.5",
                             "--out", str(tmp_path / arch / run)]) == 0
        for f in sorted((tmp_path / arch / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / arch / "b" / f.name).read_bytes(), f.name
            compared += 1
    detail(f"{compared} output files byte-identical")


@pytest.mark.acceptance("IDX loader round-trip and errors")
def test_idx_roundtrip(detail, tmp_path):
    full = load_idx(MNIST / "images-idx3-ubyte.gz", MNIST / "labels-idx1-ubyte.gz")
    ds = full.subset(np.arange(0, 5000, 50))
    assert len(ds) == 100
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ds, img, lab, image_shape=(28, 28))
    back = load_idx(img, lab, n_classes=10)
    same = np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)

    raw_img, raw_lab = img.read_bytes(), lab.read_bytes()
    errors = []
    bad = tmp_path / "bad"
    bad.write_bytes(raw_img)
    with pytest.raises(BadMagicError):
        load_idx(img, bad)
    errors.append("bad magic")
    bad.write_bytes(raw_img[:-1])
    with pytest.raises(TruncatedError):
        load_idx(bad, lab)
    errors.append("truncated")
    # labels header claims 99 items and carries 99
    bad.write_bytes(raw_lab[:4] + (99).to_bytes(4, "big") + raw_lab[8:-1])
    with pytest.raises(CountMismatchError):
        load_idx(img, bad)
    errors.append("count mismatch")
    detail(f"round-trip exact={same}; raised: {', '.join(errors)}")
    assert same
