"""End-to-end acceptance checks, one test per criterion.

Each test records its verdict through the ``criterion`` fixture; the
conftest prints one PASS/FAIL line per criterion after the run.  Run this
file alone with ``pytest tests/test_acceptance.py -v`` (about 10 minutes on
one core, most of it the 50-replication simulation).
"""

import sys
import time

import numpy as np
import pytest
from scipy.stats import norm

from pcqr.dgp import NoiseSpec, ScenarioConfig, composed_error_cdf, error_quantile, generate
from pcqr.estimator import (Dataset, detect_crossing, fit_cqr, fit_pcqr, fit_scqr, predict,
                            search_gamma)
from pcqr.metrics import quantile_property_check
from pcqr.simulate import read_csv, resolve_workers, simulate
from pcqr.solver import ConicProgram, solve

from oracles import crossing_dataset, kkt_enumeration, random_program

PAIRS = [(1.88, 1.66), (1.63, 1.24), (1.35, 0.83)]
DESK = ScenarioConfig(n=99, d=2, noise=NoiseSpec(1.35, 0.83), tau_pair=(0.85, 0.9),
                      replications=50, seed=2024)


def _random_dataset(rng, n, d):
    X = rng.uniform(1, 10, (n, d))
    y = np.log(X).sum(axis=1) + rng.normal(0, 0.5, n)
    return Dataset(X, y)


def test_c01_solver_oracle(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, bad = 0.0, 0
    for k in range(500):
        pr = random_program(rng, qp=bool(k % 2))
        ref, _ = kkt_enumeration(**pr)
        sol = solve(ConicProgram(pr["q"].size, pr["q"], P=pr["P"], A_eq=pr["A"], b_eq=pr["b"],
                                 G=pr["G"], h=pr["h"]))
        err = abs(sol.objective - ref) if sol.optimal else np.inf
        worst = max(worst, err)
        bad += err > 1e-6
    secs = time.perf_counter() - t0
    ok = bad == 0 and secs < 60
    criterion(1, ok, f"500 programs, {bad} mismatches, max |diff| {worst:.1e}, {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_c02_quantile_property(criterion):
    rng = np.random.default_rng(202)
    taus = np.round(np.arange(0.1, 0.951, 0.05), 2)
    t0 = time.perf_counter()
    fits = violations = 0
    for _ in range(200):
        n, d = int(rng.integers(20, 101)), int(rng.integers(1, 4))
        tau = float(rng.choice(taus))
        model = fit_cqr(_random_dataset(rng, n, d), tau)
        fits += 1
        violations += not quantile_property_check(model)[2]
    secs = time.perf_counter() - t0
    ok = violations == 0 and secs < 600
    criterion(2, ok, f"{fits} fits, {violations} violations, {secs:.0f}s")
    assert ok


def test_c03_collapse(criterion):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        data = _random_dataset(rng, int(rng.integers(10, 40)), int(rng.integers(1, 3)))
        tau = float(rng.uniform(0.1, 0.9))
        a, b = fit_cqr(data, tau).objective, fit_pcqr(data, tau, 0.0).objective
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    ok = worst <= 1e-6
    criterion(3, ok, f"50 datasets, max relative diff {worst:.1e}")
    assert ok


def test_c04_flattening(criterion):
    rng = np.random.default_rng(404)
    worst = 0.0
    for k in range(30):
        raw = _random_dataset(rng, int(rng.integers(10, 40)), int(rng.integers(1, 4)))
        # rescale so max |y| is a random value in [1, 100]
        data = Dataset(raw.X, raw.y * (rng.uniform(1, 100) / np.abs(raw.y).max()))
        model = fit_pcqr(data, float(rng.uniform(0.1, 0.9)), 1e6)
        worst = max(worst, float(np.abs(model.beta).max()))
    ok = worst <= 1e-4
    criterion(4, ok, f"30 fits, max |beta| {worst:.1e}")
    assert ok


def test_c05_scqr_noncrossing(criterion):
    rng = np.random.default_rng(505)
    worst = np.inf
    fits = 0
    for J in (2, 3):
        for _ in range(15):
            data = _random_dataset(rng, int(rng.integers(10, 35)), int(rng.integers(1, 3)))
            taus = np.sort(rng.choice(np.arange(0.1, 0.95, 0.05), J, replace=False))
            mm = fit_scqr(data, [float(t) for t in taus])
            q = [predict(m, data.X) for m in mm.models]
            worst = min(worst, min(float(np.min(b - a)) for a, b in zip(q, q[1:])))
            fits += 1
    ok = worst >= -1e-6
    criterion(5, ok, f"{fits} fits with J in {{2, 3}}, min adjacent gap {worst:.1e}")
    assert ok


def test_c06_gamma_search(criterion):
    failures = []
    gammas = []
    for seed in range(50):
        data, _ = crossing_dataset(seed)
        res = search_gamma(data, 0.85, 0.9)
        gammas.append(res.gamma_star)
        ok_here = res.gamma_star > 0 and detect_crossing(res.model_low, res.model_high,
                                                         data.X) == 0
        prev = round(res.gamma_star - 0.01, 10)
        if ok_here:
            low, high = fit_pcqr(data, 0.85, prev), fit_pcqr(data, 0.9, prev)
            ok_here = detect_crossing(low, high, data.X) > 0
        if not ok_here:
            failures.append(seed)
    ok = not failures
    criterion(6, ok, f"50 crossing datasets, gamma* range [{min(gammas):g}, {max(gammas):g}], "
                     f"failures {failures}")
    assert ok


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    simulate([("desk", DESK)], out, resolve_workers(None))
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_gamma_distribution(desk_run, criterion):
    out, _ = desk_run
    rows = read_csv(out / "gamma_star.csv")
    positive = [float(r["gamma_star"]) for r in rows if r["gamma_star"] and
                float(r["gamma_star"]) > 0]
    inside = sum(0.01 - 1e-9 <= g <= 0.03 + 1e-9 for g in positive)
    share = inside / len(positive) if positive else 0.0
    ok = share >= 0.6
    criterion(7, ok, f"{inside}/{len(positive)} = {share:.0%} of gamma*>0 in [0.01, 0.03] "
                     f"(target >= 60%)")
    assert ok


def _table(out):
    return {r["estimator"]: r for r in read_csv(out / "table.csv")}


@pytest.mark.slow
def test_c08_mse_ordering(desk_run, criterion):
    out, secs = desk_run
    t = _table(out)
    p = [float(t["pcqr"][k]) for k in ("mse_tau1", "mse_tau2")]
    s = [float(t["scqr"][k]) for k in ("mse_tau1", "mse_tau2")]
    ok = p[0] < s[0] and p[1] < s[1] and secs < 1800
    criterion(8, ok, f"pCQR {p[0]:.3f}/{p[1]:.3f} vs sCQR {s[0]:.3f}/{s[1]:.3f} "
                     f"over {t['pcqr']['replications_used']} crossed replications, {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_c09_coverage_ordering(desk_run, criterion):
    out, _ = desk_run
    t = _table(out)
    p = np.mean([float(t["pcqr"][k]) for k in ("coverage_tau1", "coverage_tau2")])
    s = np.mean([float(t["scqr"][k]) for k in ("coverage_tau1", "coverage_tau2")])
    ok = p <= s
    criterion(9, ok, f"mean coverage error pCQR {p:.4f} vs sCQR {s:.4f}")
    assert ok


@pytest.mark.slow
def test_c10_dgp_oracles(criterion):
    sup = 0.0
    for k, pair in enumerate(PAIRS):
        cfg = ScenarioConfig(n=10 ** 7, d=1, noise=NoiseSpec(*pair), tau_pair=(0.1, 0.9),
                             replications=1, seed=1000 + k)
        s = generate(cfg, 0)
        eps = np.sort(s.v - s.u)
        del s
        sv, su = cfg.noise.sigma_v, cfg.noise.sigma_u
        grid = np.linspace(eps[1000], eps[-1000], 400)
        emp = np.searchsorted(eps, grid, side="right") / eps.size
        model = np.array([composed_error_cdf(e, sv, su) for e in grid])
        sup = max(sup, float(np.abs(emp - model).max()))
    trip = 0.0
    for pair in PAIRS:
        ns = NoiseSpec(*pair)
        for tau in np.arange(0.05, 0.951, 0.05):
            q = error_quantile(float(tau), ns.sigma_v, ns.sigma_u)
            trip = max(trip, abs(composed_error_cdf(q, ns.sigma_v, ns.sigma_u) - tau))
    gauss = max(abs(error_quantile(t, 1.3, 0.0) - 1.3 * norm.ppf(t)) for t in (0.05, 0.5, 0.95))
    ok = sup <= 1e-3 and trip <= 1e-7 and gauss <= 1e-9
    criterion(10, ok, f"empirical sup-norm {sup:.1e}, round trip {trip:.1e}, "
                      f"Gaussian limit {gauss:.1e}")
    assert ok


def test_c11_determinism(tmp_path, criterion):
    scen = [("a", ScenarioConfig(n=25, d=2, noise=NoiseSpec(1.88, 1.66), tau_pair=(0.85, 0.9),
                                 replications=8, seed=77)),
            ("b", ScenarioConfig(n=20, d=1, noise=NoiseSpec(1.35, 0.83), tau_pair=(0.1, 0.2),
                                 replications=4, seed=78))]
    a, b = tmp_path / "w1", tmp_path / "w8"
    simulate(scen, a, 1)
    simulate(scen, b, 8)
    names = sorted(p.name for p in a.iterdir() if p.name != "timing.json")
    differ = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    ok = not differ
    criterion(11, ok, f"{len(names)} output files compared, differing: {differ or 'none'}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
