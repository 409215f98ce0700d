import numpy as np
import pytest
from scipy import stats

from bnit.init import InitConfig, WeightScheme, init_bias, init_weights, make_rng


def test_unit_norm_rows():
    w = init_weights((50, 7), InitConfig(weight_scheme="unit_norm_rows"), make_rng(3))
    norms = np.linalg.norm(w, axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-12)


def test_he_std_monte_carlo():
    w = init_weights((50_000, 2), InitConfig(weight_scheme=WeightScheme.HE), make_rng(0))
    assert abs(w.std() - 1.0) < 0.02
    assert abs(w.mean()) < 0.01


def test_glorot_bounds():
    m, n = 300, 200
    w = init_weights((m, n), InitConfig(weight_scheme="glorot"), make_rng(1))
    limit = np.sqrt(6 / (m + n))
    assert np.all(np.abs(w) <= limit)
    assert w.max() > 0.99 * limit and w.min() < -0.99 * limit


def test_weights_reproducible():
    cfg = InitConfig(seed=9)
    a = init_weights((20, 30), cfg, make_rng(cfg.seed))
    b = init_weights((20, 30), cfg, make_rng(cfg.seed))
    assert a.tobytes() == b.tobytes()


def test_zero_lambda_gives_exact_zeros():
    b = init_bias(100, 0.0, make_rng(0))
    assert b.shape == (100, 1)
    assert np.all(b == 0) and not np.any(np.signbit(b))


def test_lambda_uniform_moments():
    b = init_bias(100_000, 2.0, make_rng(7)).ravel()
    assert abs(b.mean()) < 0.02
    assert -2.0 <= b.min() <= -1.99
    assert 1.99 <= b.max() <= 2.0


def test_lambda_ks_statistic():
    b = init_bias(100_000, 2.5, make_rng(11)).ravel()
    assert np.all(np.abs(b) <= 2.5)
    ks = stats.kstest(b, stats.uniform(loc=-2.5, scale=5.0).cdf).statistic
    assert ks < 0.01


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        init_bias(3, -0.1, make_rng(0))
    with pytest.raises(ValueError):
        InitConfig(bias_lambda=-1)


def test_bias_draws_do_not_shift_later_weights():
    # lambda only rescales the bias draws; the stream position is unchanged
    outs = []
    for lam in (0.0, 2.5):
        rng = make_rng(5)
        init_weights((4, 3), InitConfig(), rng)
        init_bias(4, lam, rng)
        outs.append(init_weights((2, 4), InitConfig(), rng))
    assert outs[0].tobytes() == outs[1].tobytes()
