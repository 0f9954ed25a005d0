"""Synthetic production data with a normal/half-normal composed error.

The frontier is ``f(x) = prod_k x_k ** (0.8 / k)`` with inputs drawn from
U[1, 10].  Output is ``y = f(x) + v - u`` where ``v ~ N(0, sigma_v^2)`` and
``u = |N(0, sigma_u^2)|``.  Noise is parameterized by the total variance
``sigma_sq = sigma_v^2 + sigma_u^2`` and the ratio ``lambda = sigma_u / sigma_v``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from .estimator import Dataset


def split_sigma(sigma_sq: float, lam: float) -> tuple[float, float]:
    """Return ``(sigma_v, sigma_u)`` for total variance ``sigma_sq`` and ratio ``lam``."""
    sigma_sq, lam = float(sigma_sq), float(lam)
    if not (math.isfinite(sigma_sq) and sigma_sq > 0):
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq!r}")
    if not (math.isfinite(lam) and lam >= 0):
        raise ValueError(f"lambda must be nonnegative, got {lam!r}")
    sigma_v = math.sqrt(sigma_sq / (1.0 + lam * lam))
    return sigma_v, lam * sigma_v


@dataclass(frozen=True)
class NoiseSpec:
    sigma_sq: float
    lam: float
    sigma_v: float = field(init=False)
    sigma_u: float = field(init=False)

    def __post_init__(self):
        sv, su = split_sigma(self.sigma_sq, self.lam)
        object.__setattr__(self, "sigma_sq", float(self.sigma_sq))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "sigma_v", sv)
        object.__setattr__(self, "sigma_u", su)


ESTIMATORS = ("pcqr", "scqr")


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo cell plus the knobs the harness needs to run it."""

    n: int
    d: int
    noise: NoiseSpec
    tau_pair: tuple[float, float]
    replications: int
    seed: int
    estimators: tuple[str, ...] = ESTIMATORS
    C: float = 0.0
    step: float = 0.01
    gamma_max: float = 10.0

    def __post_init__(self):
        errors = []
        if not (isinstance(self.n, int) and self.n >= 2):
            errors.append(f"n must be an integer >= 2, got {self.n!r}")
        if not (isinstance(self.d, int) and self.d >= 1):
            errors.append(f"d must be an integer >= 1, got {self.d!r}")
        t1, t2 = (float(t) for t in self.tau_pair)
        if not 0 < t1 < t2 < 1:
            errors.append(f"need 0 < tau1 < tau2 < 1, got {t1!r}, {t2!r}")
        if not (isinstance(self.replications, int) and self.replications >= 1):
            errors.append(f"replications must be an integer >= 1, got {self.replications!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            errors.append(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or not self.estimators:
            errors.append(f"estimators must be a non-empty subset of {ESTIMATORS}, got {self.estimators!r}")
        if not (math.isfinite(self.C) and self.C >= 0):
            errors.append(f"C must be finite and nonnegative, got {self.C!r}")
        if not (math.isfinite(self.step) and self.step > 0):
            errors.append(f"step must be positive, got {self.step!r}")
        if not (math.isfinite(self.gamma_max) and self.gamma_max >= 0):
            errors.append(f"gamma_max must be nonnegative, got {self.gamma_max!r}")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "tau_pair", (t1, t2))
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass(frozen=True, eq=False)
class GeneratedSample:
    data: Dataset
    frontier: np.ndarray
    v: np.ndarray
    u: np.ndarray


def frontier(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    powers = 0.8 / np.arange(1, X.shape[1] + 1)
    return np.prod(X ** powers, axis=1)


def generate(cfg: ScenarioConfig, replication_index: int) -> GeneratedSample:
    """Draw replication ``replication_index`` of ``cfg``.

    The generator is seeded with ``SeedSequence([seed, replication_index])``
    and consumed in a fixed order: x column by column, then v, then u.
    """
    if replication_index < 0:
        raise ValueError("replication_index must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, replication_index]))
    n, d = cfg.n, cfg.d
    X = rng.uniform(1.0, 10.0, size=(d, n)).T
    v = rng.normal(0.0, cfg.noise.sigma_v, size=n)
    u = np.abs(rng.normal(0.0, cfg.noise.sigma_u, size=n))
    f = frontier(X)
    y = f + v - u
    return GeneratedSample(data=Dataset(X, y), frontier=f, v=v, u=u)


def composed_error_density(eps, sigma_v: float, sigma_u: float):
    sigma = math.hypot(sigma_v, sigma_u)
    lam = sigma_u / sigma_v
    eps = np.asarray(eps, dtype=float)
    return 2.0 / sigma * stats.norm.pdf(eps / sigma) * stats.norm.cdf(-eps * lam / sigma)


def composed_error_cdf(eps: float, sigma_v: float, sigma_u: float) -> float:
    """CDF of ``v - u`` by adaptive quadrature of the convolution density.

    The tail on the short side of ``eps`` is integrated so the result keeps
    absolute accuracy near both 0 and 1.
    """
    if not sigma_v > 0:
        raise ValueError(f"sigma_v must be positive, got {sigma_v!r}")
    if sigma_u < 0:
        raise ValueError(f"sigma_u must be nonnegative, got {sigma_u!r}")
    eps = float(eps)
    if sigma_u == 0:
        return float(stats.norm.cdf(eps, scale=sigma_v))
    dens = functools.partial(composed_error_density, sigma_v=sigma_v, sigma_u=sigma_u)
    opts = dict(epsabs=1e-12, epsrel=1e-12, limit=200)
    if eps <= 0:
        val, _ = integrate.quad(dens, -np.inf, eps, **opts)
    else:
        tail, _ = integrate.quad(dens, eps, np.inf, **opts)
        val = 1.0 - tail
    return min(1.0, max(0.0, val))


@functools.lru_cache(maxsize=4096)
def error_quantile(tau: float, sigma_v: float, sigma_u: float) -> float:
    """Inverse of :func:`composed_error_cdf`, found by bracketing root search."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    if sigma_u == 0:
        return float(stats.norm.ppf(tau, scale=sigma_v))
    sigma = math.hypot(sigma_v, sigma_u)
    lo, hi = -sigma, sigma
    while composed_error_cdf(lo, sigma_v, sigma_u) > tau:
        lo *= 2
    while composed_error_cdf(hi, sigma_v, sigma_u) < tau:
        hi *= 2
    return optimize.brentq(lambda e: composed_error_cdf(e, sigma_v, sigma_u) - tau,
                           lo, hi, xtol=1e-12, rtol=1e-12)


def true_quantile(x, tau: float, noise: NoiseSpec):
    """Conditional tau-quantile ``f(x) + F_eps^{-1}(tau)``.

    ``x`` may be one input vector or a matrix of rows; the return type follows.
    """
    shift = error_quantile(float(tau), noise.sigma_v, noise.sigma_u)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return float(frontier(x.reshape(1, -1))[0] + shift)
    return frontier(x) + shift
