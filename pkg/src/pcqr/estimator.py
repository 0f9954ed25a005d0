"""Convex quantile regression estimators: CQR, penalized CQR and simultaneous CQR.

Each estimator is a program builder returning a :class:`ConicProgram` and a
:class:`VariableMap`; :func:`fit` solves the program and unpacks the
solution into per-observation hyperplanes ``(alpha_i, beta_i)``.

Variable layout for quantile block ``j`` (one block for CQR/pCQR, ``J``
blocks for sCQR), offset ``j * n * (d + 3)``::

    alpha (n) | beta (n*d, row-major by observation) | eps_pos (n) | eps_neg (n)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .solver import ConicProgram, Solution, SolverSettings, Status, solve

CROSSING_TOL = 1e-6


class FitError(RuntimeError):
    """Raised when the solver does not return an optimal solution."""

    def __init__(self, solution: Solution):
        self.status = solution.status
        self.residuals = solution.residuals
        self.solution = solution
        super().__init__(
            f"solver status {solution.status.value} ({solution.message}); "
            f"residuals primal={solution.primal_residual:.3g} "
            f"dual={solution.dual_residual:.3g} gap={solution.gap:.3g}")


class GammaSearchError(RuntimeError):
    """Raised when no grid value up to ``gamma_max`` removes the crossing."""

    def __init__(self, gamma_max: float, crossing_counts: list[int]):
        self.gamma_max = gamma_max
        self.crossing_counts = crossing_counts
        super().__init__(
            f"no non-crossing gamma found up to gamma_max={gamma_max!r}; "
            f"crossing counts per grid point: {crossing_counts}")


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if y.size < 2:
            raise ValueError("need at least 2 observations")
        if X.shape[1] < 1:
            raise ValueError("need at least 1 input column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        X = X.copy()
        y = y.copy()
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class QuantileModel:
    tau: float
    alpha: np.ndarray
    beta: np.ndarray
    eps_pos: np.ndarray
    eps_neg: np.ndarray
    gamma: float = 0.0
    objective: float = 0.0
    X: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def fitted(self) -> np.ndarray:
        """Hyperplane values ``alpha_i + beta_i'x_i`` at the training inputs."""
        return self.alpha + np.einsum("ij,ij->i", self.beta, self.X)

    @property
    def loss(self) -> float:
        """Check-function part of the objective (penalty excluded)."""
        return float(self.tau * self.eps_pos.sum() + (1 - self.tau) * self.eps_neg.sum())

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


@dataclass(frozen=True, eq=False)
class MultiQuantileModel:
    taus: tuple
    models: tuple
    C: np.ndarray
    objective: float = 0.0


@dataclass(frozen=True, eq=False)
class GammaSearchResult:
    gamma_star: float
    model_low: QuantileModel
    model_high: QuantileModel
    iterations: int
    crossing_counts: list


@dataclass(frozen=True)
class VariableMap:
    n: int
    d: int
    taus: tuple
    gamma: float = 0.0
    C: Optional[np.ndarray] = field(default=None, compare=False)
    X: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def block(self) -> int:
        return self.n * (self.d + 3)

    @property
    def num_vars(self) -> int:
        return self.block * len(self.taus)

    def alpha(self, j: int = 0) -> slice:
        o = j * self.block
        return slice(o, o + self.n)

    def beta(self, j: int = 0) -> slice:
        o = j * self.block + self.n
        return slice(o, o + self.n * self.d)

    def eps_pos(self, j: int = 0) -> slice:
        o = j * self.block + self.n * (self.d + 1)
        return slice(o, o + self.n)

    def eps_neg(self, j: int = 0) -> slice:
        o = j * self.block + self.n * (self.d + 2)
        return slice(o, o + self.n)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    return tau


def _block_constraints(data: Dataset, offset: int):
    """Regression equalities and Afriat concavity rows for one quantile block."""
    X, y = data.X, data.y
    n, d = X.shape
    a0, b0 = offset, offset + n
    ep0, en0 = offset + n * (d + 1), offset + n * (d + 2)
    obs = np.arange(n)

    # alpha_i + beta_i'x_i + eps+_i - eps-_i = y_i
    eq_rows = np.concatenate([obs, np.repeat(obs, d), obs, obs])
    eq_cols = np.concatenate([a0 + obs, b0 + (obs[:, None] * d + np.arange(d)).ravel(),
                              ep0 + obs, en0 + obs])
    eq_vals = np.concatenate([np.ones(n), X.ravel(), np.ones(n), -np.ones(n)])

    # alpha_i + beta_i'x_i - alpha_h - beta_h'x_i <= 0 for all i != h
    ii, hh = np.nonzero(~np.eye(n, dtype=bool))
    m = ii.size
    row = np.arange(m)
    xi = X[ii]
    dd = np.arange(d)
    in_rows = np.concatenate([row, row, np.repeat(row, d), np.repeat(row, d)])
    in_cols = np.concatenate([a0 + ii, a0 + hh,
                              (b0 + ii[:, None] * d + dd).ravel(),
                              (b0 + hh[:, None] * d + dd).ravel()])
    in_vals = np.concatenate([np.ones(m), -np.ones(m), xi.ravel(), -xi.ravel()])
    return (eq_rows, eq_cols, eq_vals, y.copy()), (in_rows, in_cols, in_vals, m)


def _assemble(data: Dataset, taus: Sequence[float], C: Optional[np.ndarray] = None,
              gamma: float = 0.0) -> tuple[ConicProgram, VariableMap]:
    n, d = data.n, data.d
    J = len(taus)
    vmap = VariableMap(n=n, d=d, taus=tuple(float(t) for t in taus), gamma=float(gamma),
                       C=C, X=data.X)
    N = vmap.num_vars

    q = np.zeros(N)
    lb = np.full(N, -np.inf)
    eq_parts, in_parts, b_parts = [], [], []
    eq_off = in_off = 0
    for j, tau in enumerate(vmap.taus):
        q[vmap.eps_pos(j)] = tau
        q[vmap.eps_neg(j)] = 1.0 - tau
        lb[vmap.beta(j)] = 0.0
        lb[vmap.eps_pos(j)] = 0.0
        lb[vmap.eps_neg(j)] = 0.0
        (er, ec, ev, b), (ir, ic, iv, m) = _block_constraints(data, j * vmap.block)
        eq_parts.append((er + eq_off, ec, ev))
        b_parts.append(b)
        in_parts.append((ir + in_off, ic, iv))
        eq_off += n
        in_off += m
    h = [np.zeros(in_off)]

    if C is not None:
        # alpha_ij + beta_ij'x_i + C_ij - alpha_i,j+1 - beta_i,j+1'x_i <= 0
        obs = np.arange(n)
        dd = np.arange(d)
        for j in range(J - 1):
            rows = in_off + obs
            lo, hi = vmap.beta(j).start, vmap.beta(j + 1).start
            ir = np.concatenate([rows, rows, np.repeat(rows, d), np.repeat(rows, d)])
            ic = np.concatenate([vmap.alpha(j).start + obs, vmap.alpha(j + 1).start + obs,
                                 (lo + obs[:, None] * d + dd).ravel(),
                                 (hi + obs[:, None] * d + dd).ravel()])
            iv = np.concatenate([np.ones(n), -np.ones(n), data.X.ravel(), -data.X.ravel()])
            in_parts.append((ir, ic, iv))
            h.append(-C[:, j])
            in_off += n

    def stack(parts, rows):
        r = np.concatenate([p[0] for p in parts])
        c = np.concatenate([p[1] for p in parts])
        v = np.concatenate([p[2] for p in parts])
        return sp.csr_matrix((v, (r, c)), shape=(rows, N))

    P = None
    if gamma > 0:
        diag = np.zeros(N)
        for j in range(J):
            diag[vmap.beta(j)] = 2.0 * gamma
        P = sp.diags(diag, format="csr")

    prog = ConicProgram(
        num_vars=N, q=q, P=P,
        A_eq=stack(eq_parts, eq_off), b_eq=np.concatenate(b_parts),
        G=stack(in_parts, in_off), h=np.concatenate(h), lb=lb,
    )
    return prog, vmap


def build_cqr(data: Dataset, tau: float) -> tuple[ConicProgram, VariableMap]:
    """Convex quantile regression LP at quantile ``tau``."""
    return _assemble(data, [_check_tau(tau)])


def build_pcqr(data: Dataset, tau: float, gamma: float) -> tuple[ConicProgram, VariableMap]:
    """CQR plus the ridge penalty ``gamma * sum_i ||beta_i||^2``.

    With ``gamma == 0`` this is exactly :func:`build_cqr` (no quadratic term).
    """
    gamma = float(gamma)
    if not gamma >= 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma!r}")
    return _assemble(data, [_check_tau(tau)], gamma=gamma)


def build_scqr(data: Dataset, taus: Sequence[float],
               C: Union[None, float, np.ndarray] = None) -> tuple[ConicProgram, VariableMap]:
    """Simultaneous CQR over increasing ``taus`` with non-crossing rows.

    ``C`` is the ``n x (J-1)`` matrix of non-crossing margins; a scalar is
    broadcast and ``None`` means zero margins (touching allowed).
    """
    taus = [_check_tau(t) for t in taus]
    if len(taus) < 2:
        raise ValueError("simultaneous estimation needs at least two quantiles")
    if np.any(np.diff(taus) <= 0):
        raise ValueError(f"taus must be strictly increasing, got {taus}")
    n, J = data.n, len(taus)
    if C is None:
        C = 0.0
    C = np.broadcast_to(np.asarray(C, dtype=float), (n, J - 1)).copy()
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("non-crossing margins C must be finite and nonnegative")
    return _assemble(data, taus, C=C)


def _unpack(sol: Solution, vmap: VariableMap, j: int) -> QuantileModel:
    z = sol.z
    model = QuantileModel(
        tau=vmap.taus[j],
        alpha=z[vmap.alpha(j)].copy(),
        beta=z[vmap.beta(j)].reshape(vmap.n, vmap.d).copy(),
        eps_pos=z[vmap.eps_pos(j)].copy(),
        eps_neg=z[vmap.eps_neg(j)].copy(),
        gamma=vmap.gamma,
        objective=sol.objective if len(vmap.taus) == 1 else float(
            vmap.taus[j] * z[vmap.eps_pos(j)].sum()
            + (1 - vmap.taus[j]) * z[vmap.eps_neg(j)].sum()),
        X=vmap.X,
    )
    return model


def fit(program: ConicProgram, vmap: VariableMap,
        settings: Optional[SolverSettings] = None) -> Union[QuantileModel, MultiQuantileModel]:
    """Solve a built program and unpack it into a fitted model.

    Raises :class:`FitError` unless the solver reports ``Optimal``.
    """
    sol = solve(program, settings)
    if sol.status is not Status.OPTIMAL:
        raise FitError(sol)
    if len(vmap.taus) == 1:
        return _unpack(sol, vmap, 0)
    models = tuple(_unpack(sol, vmap, j) for j in range(len(vmap.taus)))
    return MultiQuantileModel(taus=vmap.taus, models=models, C=vmap.C, objective=sol.objective)


def fit_cqr(data: Dataset, tau: float, settings=None) -> QuantileModel:
    return fit(*build_cqr(data, tau), settings)


def fit_pcqr(data: Dataset, tau: float, gamma: float, settings=None) -> QuantileModel:
    return fit(*build_pcqr(data, tau, gamma), settings)


def fit_scqr(data: Dataset, taus: Sequence[float], C=None, settings=None) -> MultiQuantileModel:
    return fit(*build_scqr(data, taus, C), settings)


def predict(model: QuantileModel, X) -> np.ndarray:
    """Lower-envelope value ``min_h(alpha_h + beta_h'x)`` for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return (model.alpha[None, :] + X @ model.beta.T).min(axis=1)


def evaluate(model: QuantileModel, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return float(np.min(model.alpha + model.beta @ x))


def detect_crossing(model_low: QuantileModel, model_high: QuantileModel, points,
                    tol: float = CROSSING_TOL) -> int:
    """Number of points where the lower quantile exceeds the upper one by more than ``tol``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if model_low.beta.shape[1] != model_high.beta.shape[1]:
        raise ValueError("models have different input dimensions")
    return int(np.count_nonzero(predict(model_low, points) > predict(model_high, points) + tol))


def search_gamma(data: Dataset, tau1: float, tau2: float, step: float = 0.01,
                 gamma_max: float = 10.0, settings=None) -> GammaSearchResult:
    """Smallest grid penalty at which independent pCQR fits stop crossing.

    Scans ``gamma = k * step`` for ``k = 0, 1, ...`` and fits the two
    quantiles separately at each grid point; crossing is checked at the
    sample inputs only.
    """
    tau1, tau2 = _check_tau(tau1), _check_tau(tau2)
    if not tau1 < tau2:
        raise ValueError(f"need tau1 < tau2, got {tau1!r} and {tau2!r}")
    if not step > 0:
        raise ValueError("step must be positive")
    counts = []
    k = 0
    while True:
        gamma = k * step
        if gamma > gamma_max * (1 + 1e-12):
            raise GammaSearchError(gamma_max, counts)
        low = fit_pcqr(data, tau1, gamma, settings)
        high = fit_pcqr(data, tau2, gamma, settings)
        crossings = detect_crossing(low, high, data.X)
        counts.append(crossings)
        if crossings == 0:
            return GammaSearchResult(gamma_star=gamma, model_low=low, model_high=high,
                                     iterations=k + 1, crossing_counts=counts)
        k += 1
