"""Scoring fitted quantile models and aggregating over replications."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .dgp import NoiseSpec, ScenarioConfig, true_quantile
from .estimator import Dataset, QuantileModel, predict

STRICT_TOL = 1e-6


def _pair(y, qhat, tau):
    y = np.asarray(y, dtype=float).ravel()
    qhat = np.asarray(qhat, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty input")
    if y.size != qhat.size:
        raise ValueError(f"length mismatch: {y.size} observations, {qhat.size} predictions")
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    return y, qhat


def ramp_loss(y, qhat, tau: float) -> float:
    """``|mean 1[y > qhat] - tau|``."""
    y, qhat = _pair(y, qhat, tau)
    return abs(float(np.mean(y > qhat)) - tau)


def coverage_error(y, qhat, tau: float) -> float:
    """``|mean 1[y <= qhat] - tau|``, the share of points covered from below."""
    y, qhat = _pair(y, qhat, tau)
    return abs(float(np.mean(y <= qhat)) - tau)


def mse(model: QuantileModel, data: Dataset, noise: NoiseSpec) -> float:
    """Mean squared distance to the true conditional quantile at the sample inputs."""
    err = predict(model, data.X) - true_quantile(data.X, model.tau, noise)
    return float(np.mean(err ** 2))


def quantile_property_check(model: QuantileModel, strict_tol: float = STRICT_TOL):
    """Count strictly positive and negative residuals and test the quantile bounds.

    Returns ``(n_pos, n_neg, ok)`` where ``ok`` means
    ``n_pos / n <= 1 - tau`` and ``n_neg / n <= tau`` (with 1e-9 slack).
    """
    n = model.eps_pos.size
    n_pos = int(np.count_nonzero(model.eps_pos > strict_tol))
    n_neg = int(np.count_nonzero(model.eps_neg > strict_tol))
    ok = n_pos / n <= 1 - model.tau + 1e-9 and n_neg / n <= model.tau + 1e-9
    return n_pos, n_neg, bool(ok)


@dataclass(frozen=True)
class MetricsRecord:
    tau: float
    ramp_loss: float
    coverage_error: float
    mse: float
    n_pos: int
    n_neg: int
    property_ok: bool
    gamma_star: float
    crossed_at_gamma0: bool

    def as_dict(self) -> dict:
        return asdict(self)


def score(model: QuantileModel, data: Dataset, noise: NoiseSpec, gamma_star: float) -> MetricsRecord:
    qhat = predict(model, data.X)
    n_pos, n_neg, ok = quantile_property_check(model)
    return MetricsRecord(
        tau=model.tau,
        ramp_loss=ramp_loss(data.y, qhat, model.tau),
        coverage_error=coverage_error(data.y, qhat, model.tau),
        mse=mse(model, data, noise),
        n_pos=n_pos, n_neg=n_neg, property_ok=ok,
        gamma_star=float(gamma_star),
        crossed_at_gamma0=bool(gamma_star > 0),
    )


@dataclass(frozen=True)
class AggregateCell:
    """Per-tau means over the replications that crossed at ``gamma = 0``.

    Means are ``None`` for a tau with no usable replication; ``note`` then
    reads ``"no crossing occurred"``.
    """

    scenario: ScenarioConfig
    tag: str
    taus: tuple
    mean_ramp_loss: dict
    mean_coverage_error: dict
    mean_mse: dict
    replications_used: int
    replications_excluded: int
    note: str = ""


def aggregate(records: Sequence[MetricsRecord], scenario: ScenarioConfig, tag: str,
              failed: int = 0) -> AggregateCell:
    """Average metrics per tau, skipping records with ``gamma_star == 0``.

    ``records`` holds one record per (replication, tau).  ``failed`` counts
    replications that produced no records (solver failures); they are
    reported as excluded.
    """
    taus = tuple(float(t) for t in scenario.tau_pair)
    by_tau = {t: [r for r in records if r.tau == t] for t in taus}
    stray = [r.tau for r in records if r.tau not in by_tau]
    if stray:
        raise ValueError(f"records for tau {sorted(set(stray))} do not belong to this scenario")
    used = {t: [r for r in rs if r.crossed_at_gamma0] for t, rs in by_tau.items()}
    n_total = max(len(rs) for rs in by_tau.values()) + failed
    n_used = max(len(rs) for rs in used.values())

    def mean(name):
        return {t: (math.fsum(getattr(r, name) for r in rs) / len(rs) if rs else None)
                for t, rs in used.items()}

    return AggregateCell(
        scenario=scenario, tag=tag, taus=taus,
        mean_ramp_loss=mean("ramp_loss"), mean_coverage_error=mean("coverage_error"),
        mean_mse=mean("mse"), replications_used=n_used,
        replications_excluded=n_total - n_used,
        note="" if n_used else "no crossing occurred",
    )
