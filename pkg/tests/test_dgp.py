import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import owens_t

from pcqr.dgp import (NoiseSpec, ScenarioConfig, composed_error_cdf, error_quantile, frontier,
                      generate, split_sigma, true_quantile)

PAIRS = [(1.88, 1.66), (1.63, 1.24), (1.35, 0.83)]


def owen_cdf(z, sigma_v, sigma_u):
    # closed form of the normal minus half-normal CDF
    sigma = math.hypot(sigma_v, sigma_u)
    lam = sigma_u / sigma_v
    z = np.asarray(z, float) / sigma
    return stats.norm.cdf(z) + 2 * owens_t(z, lam)


def cfg(**kw):
    base = dict(n=50, d=2, noise=NoiseSpec(1.35, 0.83), tau_pair=(0.85, 0.9),
                replications=3, seed=42)
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.mark.parametrize("pair,expected", [((1.88, 1.66), (0.5006, 1.3794)),
                                           ((1.35, 0.83), (0.7988, 0.5512))])
def test_split_sigma_examples(pair, expected):
    sv, su = split_sigma(*pair)
    assert sv * sv == pytest.approx(expected[0], abs=1e-3)
    assert su * su == pytest.approx(expected[1], abs=1e-3)


@pytest.mark.parametrize("pair", PAIRS)
def test_split_sigma_identities(pair):
    sv, su = split_sigma(*pair)
    assert sv * sv + su * su == pytest.approx(pair[0], abs=1e-12)
    assert su == pytest.approx(pair[1] * sv, abs=1e-12)


def test_split_sigma_degenerate_and_invalid():
    assert split_sigma(1.0, 0.0) == (1.0, 0.0)
    for bad in [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.5)]:
        with pytest.raises(ValueError):
            split_sigma(*bad)


def test_noise_spec_fields():
    ns = NoiseSpec(1.88, 1.66)
    assert (ns.sigma_v, ns.sigma_u) == split_sigma(1.88, 1.66)


def test_scenario_validation():
    with pytest.raises(ValueError):
        cfg(tau_pair=(0.9, 0.85))
    with pytest.raises(ValueError):
        cfg(n=1)
    with pytest.raises(ValueError):
        cfg(estimators=("ols",))


def test_generate_deterministic_and_exact():
    a, b = generate(cfg(), 1), generate(cfg(), 1)
    for x, y in [(a.data.X, b.data.X), (a.data.y, b.data.y), (a.u, b.u), (a.v, b.v)]:
        assert x.tobytes() == y.tobytes()
    assert np.array_equal(a.data.y, a.frontier + a.v - a.u)
    assert np.all(a.u >= 0)
    assert a.data.X.min() >= 1 and a.data.X.max() <= 10
    assert not np.array_equal(generate(cfg(), 2).data.y, a.data.y)


def test_generate_stream_order():
    c = cfg(n=7, d=3)
    rng = np.random.default_rng(np.random.SeedSequence([c.seed, 4]))
    cols = [rng.uniform(1, 10, 7) for _ in range(3)]
    v = rng.normal(0, c.noise.sigma_v, 7)
    u = np.abs(rng.normal(0, c.noise.sigma_u, 7))
    s = generate(c, 4)
    np.testing.assert_array_equal(s.data.X, np.column_stack(cols))
    np.testing.assert_array_equal(s.v, v)
    np.testing.assert_array_equal(s.u, u)


def test_generate_without_inefficiency():
    s = generate(cfg(noise=NoiseSpec(1.0, 0.0)), 0)
    assert np.all(s.u == 0)


def test_frontier_product():
    assert frontier([[1.0, 1.0]])[0] == 1.0
    x = np.array([[4.0, 9.0, 2.0]])
    assert frontier(x)[0] == pytest.approx(4 ** 0.8 * 9 ** 0.4 * 2 ** (0.8 / 3))


def test_half_normal_mean_large_sample():
    s = generate(cfg(n=10 ** 6, d=1), 0)
    su = s.u.std() / math.sqrt(s.u.size)
    assert abs(s.u.mean() - cfg().noise.sigma_u * math.sqrt(2 / math.pi)) <= 3 * su


def test_cdf_gaussian_limit():
    for e in np.linspace(-4, 4, 17):
        assert composed_error_cdf(e, 1.3, 0.0) == pytest.approx(stats.norm.cdf(e, scale=1.3),
                                                               abs=1e-9)


def test_cdf_skews_negative():
    assert composed_error_cdf(0.0, 1.0, 1.0) > 0.5


def test_cdf_rejects_bad_sigma():
    with pytest.raises(ValueError):
        composed_error_cdf(0.0, 0.0, 1.0)


@pytest.mark.parametrize("pair", PAIRS)
def test_cdf_matches_owens_t(pair):
    sv, su = split_sigma(*pair)
    grid = np.linspace(-7, 4, 45)
    mine = np.array([composed_error_cdf(e, sv, su) for e in grid])
    np.testing.assert_allclose(mine, owen_cdf(grid, sv, su), atol=1e-9)


def test_cdf_monotone_and_onto():
    sv, su = split_sigma(1.88, 1.66)
    grid = np.linspace(-15, 8, 1000)
    vals = np.array([composed_error_cdf(e, sv, su) for e in grid])
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] < 1e-6 and vals[-1] > 1 - 1e-6


@pytest.mark.parametrize("pair", PAIRS)
def test_quantile_round_trip(pair):
    sv, su = split_sigma(*pair)
    for tau in np.arange(0.05, 0.951, 0.05):
        assert composed_error_cdf(error_quantile(float(tau), sv, su), sv, su) == pytest.approx(
            tau, abs=1e-7)


def test_true_quantile_gaussian_case():
    ns = NoiseSpec(2.0, 0.0)
    x = np.array([3.0, 5.0])
    for tau in (0.1, 0.5, 0.9):
        assert true_quantile(x, tau, ns) == pytest.approx(
            frontier(x[None])[0] + ns.sigma_v * stats.norm.ppf(tau), abs=1e-9)


def test_true_quantile_unit_inputs():
    ns = NoiseSpec(1.35, 0.83)
    assert true_quantile([1.0, 1.0], 0.9, ns) == pytest.approx(
        1.0 + error_quantile(0.9, ns.sigma_v, ns.sigma_u), abs=1e-12)


def test_true_quantile_monotone():
    ns = NoiseSpec(1.63, 1.24)
    x = np.array([2.0, 3.0])
    qs = [true_quantile(x, t, ns) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(b > a for a, b in zip(qs, qs[1:]))
    assert true_quantile([2.5, 3.0], 0.5, ns) >= true_quantile(x, 0.5, ns)
    batch = true_quantile(np.array([[2.0, 3.0], [2.5, 3.0]]), 0.5, ns)
    assert batch[0] == true_quantile(x, 0.5, ns)
