"""Primal-dual interior-point solver for sparse convex quadratic programs.

Programs have the form::

    minimize    (1/2) z'Pz + q'z
    subject to  A_eq z = b_eq
                G z <= h
                lb <= z <= ub

Linear programs are the ``P = 0`` special case and run through the same
Mehrotra predictor-corrector iteration.  Constraint matrices are stored
sparse; the reduced Newton system ``P + G'WG`` is formed explicitly and
factored densely, which suits the shape-constrained estimators in this
package where the Afriat rows make that block dense anyway.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_STATIC_REG = 1e-9
_STEP_FRACTION = 0.99


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


def _as_csr(M, rows: int, cols: int) -> sp.csr_matrix:
    if M is None:
        return sp.csr_matrix((rows, cols))
    return sp.csr_matrix(M, dtype=float)


def _as_vec(v, size: int, fill: float = 0.0) -> np.ndarray:
    if v is None:
        return np.full(size, fill, dtype=float)
    return np.atleast_1d(np.asarray(v, dtype=float)).copy()


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """Sparse standard-form convex QP.

    Missing pieces default to empty: no equalities, no inequalities, free
    variables and a zero quadratic term.  The constructor only normalises
    types; structural checking is left to :func:`validate` so that malformed
    programs can still be inspected.
    """

    num_vars: int
    q: np.ndarray
    P: Optional[sp.spmatrix] = None
    A_eq: Optional[sp.spmatrix] = None
    b_eq: Optional[np.ndarray] = None
    G: Optional[sp.spmatrix] = None
    h: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.num_vars)
        q = _as_vec(self.q, n)
        b_eq = _as_vec(self.b_eq, 0)
        h = _as_vec(self.h, 0)
        setattr_ = object.__setattr__
        setattr_(self, "num_vars", n)
        setattr_(self, "q", q)
        setattr_(self, "P", sp.csr_matrix(self.P, dtype=float) if self.P is not None else None)
        setattr_(self, "A_eq", _as_csr(self.A_eq, b_eq.size, n))
        setattr_(self, "b_eq", b_eq)
        setattr_(self, "G", _as_csr(self.G, h.size, n))
        setattr_(self, "h", h)
        setattr_(self, "lb", _as_vec(self.lb, n, -np.inf))
        setattr_(self, "ub", _as_vec(self.ub, n, np.inf))
        for arr in (q, b_eq, h, self.lb, self.ub):
            arr.setflags(write=False)

    @property
    def is_lp(self) -> bool:
        return self.P is None or self.P.count_nonzero() == 0

    def objective(self, z: np.ndarray) -> float:
        val = float(self.q @ z)
        if not self.is_lp:
            val += 0.5 * float(z @ (self.P @ z))
        return val


@dataclass(frozen=True)
class SolverSettings:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iters: int = 200
    equilibrate: bool = True

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class Solution:
    status: Status
    z: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    message: str = ""
    bound_duals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def residuals(self) -> dict:
        return {
            "primal": self.primal_residual,
            "dual": self.dual_residual,
            "gap": self.gap,
        }


def validate(p: ConicProgram) -> list[str]:
    """Return a list of structural defects; empty when ``p`` is solvable."""
    defects = []
    n = p.num_vars
    if n < 1:
        defects.append("num_vars must be positive")
    if p.q.shape != (n,):
        defects.append(f"dimension mismatch: q has length {p.q.size}, expected {n}")
    if p.P is not None and p.P.shape != (n, n):
        defects.append(f"dimension mismatch: P has shape {p.P.shape}, expected {(n, n)}")
    if p.A_eq.shape[1] != n:
        defects.append(f"dimension mismatch: A_eq has {p.A_eq.shape[1]} columns, expected {n}")
    if p.A_eq.shape[0] != p.b_eq.size:
        defects.append(
            f"dimension mismatch: A_eq has {p.A_eq.shape[0]} rows but b_eq has {p.b_eq.size}")
    if p.G.shape[1] != n:
        defects.append(f"dimension mismatch: G has {p.G.shape[1]} columns, expected {n}")
    if p.G.shape[0] != p.h.size:
        defects.append(f"dimension mismatch: G has {p.G.shape[0]} rows but h has {p.h.size}")
    for name in ("lb", "ub"):
        if getattr(p, name).shape != (n,):
            defects.append(f"dimension mismatch: {name} has length {getattr(p, name).size}, expected {n}")

    for name in ("q", "b_eq", "h"):
        if not np.all(np.isfinite(getattr(p, name))):
            defects.append(f"non-finite entry in {name}")
    for name in ("P", "A_eq", "G"):
        M = getattr(p, name)
        if M is not None and not np.all(np.isfinite(M.data)):
            defects.append(f"non-finite entry in {name}")
    if np.any(np.isnan(p.lb)) or np.any(np.isnan(p.ub)) or np.any(p.lb == np.inf) or np.any(p.ub == -np.inf):
        defects.append("non-finite entry in bounds")
    if p.lb.shape == p.ub.shape and np.any(p.lb > p.ub):
        defects.append("lower bound exceeds upper bound")

    if p.P is not None and p.P.shape == (n, n) and np.all(np.isfinite(p.P.data)):
        asym = abs(p.P - p.P.T)
        if asym.nnz and asym.max() > 1e-12:
            defects.append("P is not symmetric")
        elif _min_eigenvalue(p.P) < -1e-9 * max(1.0, abs(p.P).max() if p.P.nnz else 0.0):
            defects.append("P is not positive semidefinite")
    return defects


def _min_eigenvalue(P: sp.spmatrix) -> float:
    if P.nnz == 0:
        return 0.0
    diag = P.diagonal()
    off = P - sp.diags(diag)
    if off.nnz == 0 or abs(off).max() == 0.0:
        return float(diag.min())
    if P.shape[0] <= 2000:
        return float(np.linalg.eigvalsh(P.toarray()).min())
    # Gershgorin bound; conservative for large non-diagonal P
    radius = np.asarray(abs(off).sum(axis=1)).ravel()
    return float((diag - radius).min())


@dataclass
class _Reduced:
    """Internal form after presolve.

    Equality rows with a column-singleton pivot are eliminated through the
    affine map ``z = T u + t0``; bounds are folded into the inequality rows
    and every row is equilibrated.  What remains is::

        minimize (1/2) u'Pu + q'u   s.t.  A u = b,  G u <= h
    """

    P: Optional[sp.csr_matrix]
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    T: sp.csr_matrix
    t0: np.ndarray
    G_full: sp.csr_matrix
    row_scale_eq: np.ndarray
    row_scale_in: np.ndarray
    cost_scale: float
    col_scale: np.ndarray
    keep_in: np.ndarray
    rest_rows: np.ndarray
    pivot_rows: np.ndarray
    pivot_cols: np.ndarray
    pivot_vals: np.ndarray
    n_user_ineq: int
    lb_idx: np.ndarray
    ub_idx: np.ndarray

    def lift(self, u: np.ndarray) -> np.ndarray:
        return self.T @ u + self.t0


def _find_pivots(p: ConicProgram):
    """Pick one column-singleton variable per equality row, if any."""
    A = p.A_eq.tocsc()
    A.eliminate_zeros()
    counts = np.diff(A.indptr)
    has_quad = np.zeros(p.num_vars, dtype=bool)
    if not p.is_lp:
        Pc = p.P.tocsc()
        Pc.eliminate_zeros()
        has_quad = np.diff(Pc.indptr) > 0
    best: dict[int, tuple[float, int]] = {}
    for c in np.flatnonzero((counts == 1) & ~has_quad):
        r = int(A.indices[A.indptr[c]])
        v = abs(A.data[A.indptr[c]])
        if r not in best or v > best[r][0]:
            best[r] = (v, int(c))
    rows = np.array(sorted(best), dtype=np.int64)
    cols = np.array([best[r][1] for r in rows], dtype=np.int64)
    return rows, cols


def _reduce(p: ConicProgram, equilibrate: bool) -> tuple[_Reduced, bool]:
    n = p.num_vars
    lb_idx = np.flatnonzero(np.isfinite(p.lb))
    ub_idx = np.flatnonzero(np.isfinite(p.ub))
    eye = sp.identity(n, format="csr")
    G_full = sp.vstack([p.G, -eye[lb_idx], eye[ub_idx]], format="csr")
    h_full = np.concatenate([p.h, -p.lb[lb_idx], p.ub[ub_idx]])
    A = p.A_eq.tocsr()

    pivot_rows, pivot_cols = _find_pivots(p)
    pivot_vals = np.asarray(A[pivot_rows, pivot_cols]).ravel() if pivot_rows.size else np.zeros(0)
    is_pivot = np.zeros(n, dtype=bool)
    is_pivot[pivot_cols] = True
    kept = np.flatnonzero(~is_pivot)
    u_of = np.full(n, -1)
    u_of[kept] = np.arange(kept.size)

    # z_pivot = (b_r - sum_{c != pivot} a_rc z_c) / a_r,pivot
    t0 = np.zeros(n)
    t0[pivot_cols] = p.b_eq[pivot_rows] / pivot_vals if pivot_rows.size else 0.0
    Ap = A[pivot_rows].tocoo()
    off = ~is_pivot[Ap.col]
    rows_T = np.concatenate([kept, pivot_cols[Ap.row[off]]])
    cols_T = np.concatenate([np.arange(kept.size), u_of[Ap.col[off]]])
    vals_T = np.concatenate([np.ones(kept.size), -Ap.data[off] / pivot_vals[Ap.row[off]]])
    T = sp.csr_matrix((vals_T, (rows_T, cols_T)), shape=(n, kept.size))

    rest_rows = np.setdiff1d(np.arange(p.b_eq.size), pivot_rows)
    A_r = A[rest_rows]
    A_u = (A_r @ T).tocsr()
    b_u = p.b_eq[rest_rows] - A_r @ t0
    G_u = (G_full @ T).tocsr()
    h_u = h_full - G_full @ t0
    q_u = T.T @ p.q
    P_u = None
    if not p.is_lp:
        q_u = q_u + T.T @ (p.P @ t0)
        P_u = (T.T @ p.P @ T).tocsr()

    infeasible = False
    # all-zero rows carry no information, or certify infeasibility
    g_norm = _row_absmax(G_u)
    a_norm = _row_absmax(A_u)
    keep_in = g_norm > 0
    keep_eq = a_norm > 0
    if np.any(h_u[~keep_in] < -1e-12 * max(1.0, np.abs(h_full).max(initial=0.0))):
        infeasible = True
    if np.any(np.abs(b_u[~keep_eq]) > 1e-12 * max(1.0, np.abs(p.b_eq).max(initial=0.0))):
        infeasible = True
    G_u, h_u, g_norm = G_u[keep_in], h_u[keep_in], g_norm[keep_in]
    rest_rows = rest_rows[keep_eq]
    A_u, b_u, a_norm = A_u[keep_eq], b_u[keep_eq], a_norm[keep_eq]

    col_scale = np.ones(T.shape[1])
    if equilibrate:
        col_scale = _ruiz_columns(P_u, G_u, A_u)
        Dc = sp.diags(col_scale)
        T = (T @ Dc).tocsr()
        G_u, A_u, q_u = (G_u @ Dc).tocsr(), (A_u @ Dc).tocsr(), q_u * col_scale
        if P_u is not None:
            P_u = (Dc @ P_u @ Dc).tocsr()
        g_norm, a_norm = _row_absmax(G_u), _row_absmax(A_u)
        rs_in, rs_eq = 1.0 / g_norm, 1.0 / a_norm
        G_u = sp.diags(rs_in) @ G_u
        A_u = sp.diags(rs_eq) @ A_u
        h_u = h_u * rs_in
        b_u = b_u * rs_eq
        scale = max(1.0, np.abs(q_u).max(initial=0.0))
        if P_u is not None and P_u.nnz:
            scale = max(scale, abs(P_u).max())
        cost_scale = 1.0 / scale
    else:
        rs_in, rs_eq = np.ones(h_u.size), np.ones(b_u.size)
        cost_scale = 1.0

    red = _Reduced(
        P=None if P_u is None else (P_u * cost_scale).tocsr(),
        q=q_u * cost_scale, A=A_u.tocsr(), b=b_u, G=G_u.tocsr(), h=h_u,
        T=T, t0=t0, G_full=G_full,
        row_scale_eq=rs_eq, row_scale_in=rs_in, cost_scale=cost_scale, col_scale=col_scale,
        keep_in=keep_in, rest_rows=rest_rows, pivot_rows=pivot_rows,
        pivot_cols=pivot_cols, pivot_vals=pivot_vals, n_user_ineq=p.G.shape[0],
        lb_idx=lb_idx, ub_idx=ub_idx,
    )
    return red, infeasible


def _ruiz_columns(P, G, A, passes: int = 15) -> np.ndarray:
    """Column scaling that balances ``[[P, G', A'], [G, 0, 0], [A, 0, 0]]``.

    Rows are scaled along the way but only the column factors are kept;
    the caller equilibrates rows afterwards.
    """
    nu = G.shape[1]
    d = np.ones(nu)
    e_in, e_eq = np.ones(G.shape[0]), np.ones(A.shape[0])
    absP = abs(P).tocsc() if P is not None else None
    absG, absA = abs(G).tocsc(), abs(A).tocsc()
    for _ in range(passes):
        Gs = sp.diags(e_in) @ absG @ sp.diags(d)
        As = sp.diags(e_eq) @ absA @ sp.diags(d)
        cn = np.maximum(_col_absmax(Gs), _col_absmax(As))
        if absP is not None:
            cn = np.maximum(cn, _col_absmax(sp.diags(d) @ absP @ sp.diags(d)))
        rn_in, rn_eq = _row_absmax(Gs.tocsr()), _row_absmax(As.tocsr())
        cn[cn == 0] = 1.0
        rn_in[rn_in == 0] = 1.0
        rn_eq[rn_eq == 0] = 1.0
        if max(np.abs(np.log(cn)).max(initial=0.0), np.abs(np.log(rn_in)).max(initial=0.0),
               np.abs(np.log(rn_eq)).max(initial=0.0)) < 0.1:
            break
        d /= np.sqrt(cn)
        e_in /= np.sqrt(rn_in)
        e_eq /= np.sqrt(rn_eq)
    return d


def _col_absmax(M) -> np.ndarray:
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_absmax(M: sp.csr_matrix) -> np.ndarray:
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


class _KKT:
    """Factored reduced Newton matrix.

    Without equality rows the matrix ``P + G'WG`` is positive definite and
    is factored by Cholesky after symmetric diagonal scaling; otherwise the
    indefinite ``[[P + G'WG, A'], [A, 0]]`` goes through pivoted LU.

    Late in a degenerate solve W spans twenty or more orders of magnitude
    and the normal matrix loses every digit in some directions.  The split
    form keeps the rows with ``w >= 1`` as extra unknowns,
    ``[[P + G_N'W_N G_N, A', G_B'], [A, 0, 0], [G_B, 0, -W_B^-1]]``,
    whose entries stay bounded; it always goes through LU.
    """

    def __init__(self, red: _Reduced, w: np.ndarray, split: bool = False):
        nu = red.q.size
        # with ``split``, rows with w >= 1 stay explicit with -1/w on the
        # diagonal, so no block of the matrix carries the huge weights
        self.active = w >= 1.0 if split else np.zeros(w.size, dtype=bool)
        act = self.active
        Gn = red.G[~act]
        H = (Gn.T @ sp.diags(w[~act]) @ Gn).toarray()
        if red.P is not None:
            H += red.P.toarray()
        side = [red.A.toarray()]
        if split:
            side.append(red.G[act].toarray())
        side = np.vstack(side)
        meq = side.shape[0]
        if meq:
            lower = np.zeros((meq, meq))
            k = red.b.size
            lower[np.arange(k, meq), np.arange(k, meq)] = -1.0 / w[act]
            K = np.block([[H, side.T], [side, lower]])
        else:
            K = H
        self.K = K
        scale = np.abs(K).max(axis=1)
        scale[scale == 0] = 1.0
        self.D = D = 1.0 / np.sqrt(scale)
        Ks = K * D[:, None] * D[None, :]
        self.Ks = Ks
        idx = np.arange(nu + meq)
        self.chol = None
        if not meq:
            # regularize only when the plain factorization breaks down
            for reg in (0.0, 1e-13, 1e-11, _STATIC_REG, 1e-7, 1e-5):
                try:
                    M = Ks.copy()
                    M[idx, idx] += reg
                    self.chol = la.cho_factor(M, lower=True, check_finite=False)
                    break
                except la.LinAlgError:
                    continue
        if self.chol is None:
            for reg in (0.0, _STATIC_REG):
                M = Ks.copy()
                M[idx[:nu], idx[:nu]] += reg
                M[idx[nu:], idx[nu:]] -= reg
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    self.lu = la.lu_factor(M, check_finite=False)
                piv = np.abs(np.diag(self.lu[0]))
                if piv.min() > 1e-13 * piv.max():
                    break

    def _raw(self, r):
        if self.chol is not None:
            return la.cho_solve(self.chol, r, check_finite=False)
        return la.lu_solve(self.lu, r, check_finite=False)

    def solve(self, rhs: np.ndarray, refine: int = 2) -> np.ndarray:
        r = self.D * rhs
        u = self._raw(r)
        err = _residual_norm(r - self.Ks @ u)
        for _ in range(refine):
            if not err > 0:
                break
            cand = u + self._raw(r - self.Ks @ u)
            cand_err = _residual_norm(r - self.Ks @ cand)
            if not cand_err < err:
                break
            u, err = cand, cand_err
        return self.D * u


def _residual_norm(r: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        v = np.abs(r).max(initial=0.0)
    return float(v) if np.isfinite(v) else np.inf


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    with np.errstate(over="ignore"):
        return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve(p: ConicProgram, s: Optional[SolverSettings] = None) -> Solution:
    """Solve ``p`` with a Mehrotra predictor-corrector interior-point method.

    ``Optimal`` is reported only when the primal residual, dual residual and
    complementarity gap all satisfy ``abs_tol + rel_tol * scale``.  Running
    out of iterations (or stalling) returns ``IterLimit`` with the last
    iterate; callers decide whether to accept it.
    """
    s = s or SolverSettings()
    defects = validate(p)
    if defects:
        raise ValueError("invalid program: " + "; ".join(defects))

    red, infeasible = _reduce(p, s.equilibrate)
    nu, m, meq = red.q.size, red.h.size, red.b.size
    if infeasible:
        return _finish(p, red, Status.INFEASIBLE, np.zeros(nu), np.zeros(meq), np.zeros(m),
                       0, "presolve found an infeasible constraint row")
    if nu == 0:
        return _finish(p, red, Status.OPTIMAL, np.zeros(0), np.zeros(0), np.zeros(m),
                       0, "all variables fixed by equality rows")

    G, A, h, b, q, P = red.G, red.A, red.h, red.b, red.q, red.P
    GT, AT = G.T.tocsr(), A.T.tocsr()

    def Pz(v):
        return P @ v if P is not None else np.zeros_like(v)

    # initial point: least-squares fit of the constraints with unit weights
    kkt = _KKT(red, np.ones(m))
    sol0 = kkt.solve(np.concatenate([-q + GT @ h, b]))
    u, y = sol0[:nu], sol0[nu:]
    slack = np.maximum(h - G @ u, 1.0)
    lam = np.ones(m)

    b_scale0 = max(1.0, np.abs(p.b_eq).max(initial=0.0), np.abs(p.h).max(initial=0.0))
    q_scale0 = max(1.0, np.abs(p.q).max(initial=0.0))
    inv_rs_eq = 1.0 / red.row_scale_eq
    inv_rs_in = 1.0 / red.row_scale_in
    inv_cs = 1.0 / red.col_scale
    c = red.cost_scale

    status = Status.ITER_LIMIT
    message = "iteration limit reached"
    split = False
    stall = 0
    best_merit = np.inf
    it = 0
    for it in range(1, s.max_iters + 1):
        Aty, Gtl, Pu = AT @ y, GT @ lam, Pz(u)
        Au, Gu = A @ u, G @ u
        r_d = Pu + q + Aty + Gtl
        r_eq = Au - b
        r_in = Gu + slack - h
        mu = float(slack @ lam) / m if m else 0.0

        # residuals and their scales in the caller's units
        pres = max(np.abs(r_eq * inv_rs_eq).max(initial=0.0),
                   np.abs(r_in * inv_rs_in).max(initial=0.0))
        p_scale = max(b_scale0, np.abs(Au * inv_rs_eq).max(initial=0.0),
                      np.abs(Gu * inv_rs_in).max(initial=0.0))
        dres = np.abs(r_d * inv_cs).max(initial=0.0) / c
        d_scale = max(q_scale0, *(np.abs(v * inv_cs).max(initial=0.0) / c for v in (Aty, Gtl, Pu)))
        gap = abs(float(slack @ lam)) / c
        obj_scale = max(1.0, abs(p.objective(red.lift(u))))
        if (pres <= s.abs_tol + s.rel_tol * p_scale
                and dres <= s.abs_tol + s.rel_tol * d_scale
                and gap <= s.abs_tol + s.rel_tol * obj_scale):
            status, message = Status.OPTIMAL, "converged"
            break
        logger.debug("it %3d pres %.2e dres %.2e gap %.2e mu %.2e", it, pres, dres, gap, mu)

        merit = max(pres / p_scale, dres / d_scale, gap / obj_scale)
        if merit < 0.999 * best_merit:
            best_merit = merit
            stall = 0
        else:
            stall += 1
            if stall >= 15:
                message = "stalled: no progress in residuals"
                break

        cert = _certificate(red, u, y, lam)
        if cert is not None:
            status, message = cert, f"{cert.value.lower()} certificate found"
            break

        res_size = max(_residual_norm(r_d), _residual_norm(r_eq), _residual_norm(r_in), mu)
        w = lam / slack
        try:
            kkt = _KKT(red, w, split)
        except (la.LinAlgError, ValueError) as exc:
            message = f"factorization failed: {exc}"
            break

        def reduced(rd, req, rin, rc):
            tmp = (-rc + lam * rin) / slack
            act = kkt.active
            rhs = [-rd - GT @ np.where(act, 0.0, tmp), -req]
            if split:
                rhs.append(rc[act] / lam[act] - rin[act])
            sol = kkt.solve(np.concatenate(rhs))
            du, dy = sol[:nu], sol[nu:nu + meq]
            dlam = tmp + w * (G @ du)
            dlam[act] = sol[nu + meq:]
            ds = -rin - G @ du
            return du, dy, dlam, ds

        def newton(rc):
            # refine against the unreduced system; W = lam/s amplifies
            # round-off in the reduced solve near the boundary
            nonlocal kkt, split

            def errors(du, dy, dlam, ds):
                return (-r_d - (Pz(du) + AT @ dy + GT @ dlam),
                        -r_eq - A @ du,
                        -r_in - (G @ du + ds),
                        -rc - (lam * ds + slack * dlam))

            def refined():
                d = reduced(r_d, r_eq, r_in, rc)
                e = errors(*d)
                err = max(_residual_norm(v) for v in e)
                for _ in range(2):
                    if not err > 0:
                        break
                    corr = reduced(*(-v for v in e))
                    cand = tuple(x + dx for x, dx in zip(d, corr))
                    ce = errors(*cand)
                    cerr = max(_residual_norm(v) for v in ce)
                    if not cerr < err:
                        break
                    d, e, err = cand, ce, cerr
                return d, e, err

            d, e, err = refined()
            if not split and err > 1e-2 * res_size:
                # the normal equations have lost too many digits; keep the
                # active rows explicit from here on
                try:
                    kkt, split = _KKT(red, w, True), True
                    d, e, err = refined()
                except (la.LinAlgError, ValueError):
                    pass
            return project(d, e)

        proj = []

        def project(d, e):
            # push what is left of the stationarity error into dlam, weighted
            # by the multipliers so the relative change in each one stays small
            if meq or not _residual_norm(e[0]) > 0:
                return d
            if not proj:
                wc = np.clip((lam / lam.max()) ** 2, 1e-10, 1.0)
                Hc = (GT @ sp.diags(wc) @ G).toarray()
                try:
                    proj.append((wc, la.cho_factor(Hc, lower=True, check_finite=False)))
                except la.LinAlgError:
                    proj.append(None)
            if proj[0] is None:
                return d
            wc, fac = proj[0]
            delta = wc * (G @ la.cho_solve(fac, e[0], check_finite=False))
            du, dy, dlam, ds = d
            # a correction that blocks the step costs more than it fixes
            if _max_step(lam, dlam + delta) < 0.5 * _max_step(lam, dlam):
                return d
            return du, dy, dlam + delta, ds

        # predictor
        du, dy, dlam, ds = newton(slack * lam)
        a_p = _max_step(slack, ds)
        a_d = _max_step(lam, dlam)
        mu_aff = float((slack + a_p * ds) @ (lam + a_d * dlam)) / m if m else 0.0
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # corrector
        du, dy, dlam, ds = newton(slack * lam + ds * dlam - sigma * mu)
        a_p = min(1.0, _STEP_FRACTION * _max_step(slack, ds))
        a_d = min(1.0, _STEP_FRACTION * _max_step(lam, dlam))
        # a common step keeps the QP dual residual consistent
        if P is not None:
            a_p = a_d = min(a_p, a_d)
        if not all(np.all(np.isfinite(v)) for v in (du, dy, dlam, ds)):
            message = "non-finite search direction"
            break
        u = u + a_p * du
        slack = np.maximum(slack + a_p * ds, 1e-300)
        y = y + a_d * dy
        lam = np.maximum(lam + a_d * dlam, 1e-300)

    return _finish(p, red, status, u, y, lam, it, message)


def _certificate(red: _Reduced, u, y, lam) -> Optional[Status]:
    """Detect divergence towards an infeasibility or unboundedness ray."""
    nrm = max(np.abs(y).max(initial=0.0), np.abs(lam).max(initial=0.0))
    if nrm > 1e6:
        yh, lh = y / nrm, lam / nrm
        res = np.abs(red.A.T @ yh + red.G.T @ lh).max(initial=0.0)
        t = -(float(red.b @ yh) + float(red.h @ lh))
        if t > 1e-6 and res <= 1e-7 * t:
            return Status.INFEASIBLE
    un = np.abs(u).max(initial=0.0)
    if un > 1e6:
        uh = u / un
        qd = float(red.q @ uh)
        if qd < -1e-8:
            viol = max(np.abs(red.A @ uh).max(initial=0.0), (red.G @ uh).max(initial=0.0),
                       np.abs(red.P @ uh).max(initial=0.0) if red.P is not None else 0.0)
            if viol <= 1e-6 * -qd:
                return Status.UNBOUNDED
    return None


def _finish(p: ConicProgram, red: _Reduced, status, u, y, lam, iterations, message) -> Solution:
    z = red.lift(u)
    c = red.cost_scale
    lam_full = np.zeros(red.keep_in.size)
    lam_full[red.keep_in] = lam * red.row_scale_in / c
    y_eq = np.zeros(p.b_eq.size)
    y_eq[red.rest_rows] = y * red.row_scale_eq / c
    grad = p.q.copy()
    if not p.is_lp:
        grad += p.P @ z
    if red.pivot_rows.size:
        # stationarity in the eliminated columns fixes their row multipliers
        gl = red.G_full.T @ lam_full
        y_eq[red.pivot_rows] = -(grad[red.pivot_cols] + gl[red.pivot_cols]) / red.pivot_vals

    k = red.n_user_ineq
    n_lb = red.lb_idx.size
    y_ineq = lam_full[:k]
    bound_duals = {
        "lower": dict(zip(red.lb_idx.tolist(), lam_full[k:k + n_lb].tolist())),
        "upper": dict(zip(red.ub_idx.tolist(), lam_full[k + n_lb:].tolist())),
    }
    viol = max(
        np.abs(p.A_eq @ z - p.b_eq).max(initial=0.0),
        np.maximum(p.G @ z - p.h, 0).max(initial=0.0),
        np.maximum(p.lb - z, 0).max(initial=0.0),
        np.maximum(z - p.ub, 0).max(initial=0.0),
    )
    r_d = grad + p.A_eq.T @ y_eq + red.G_full.T @ lam_full
    slack_full = np.concatenate([p.h - p.G @ z, z[red.lb_idx] - p.lb[red.lb_idx],
                                 p.ub[red.ub_idx] - z[red.ub_idx]])
    gap = abs(float(slack_full @ lam_full))
    z.setflags(write=False)
    sol = Solution(
        status=status, z=z, y_eq=y_eq, y_ineq=y_ineq, objective=p.objective(z),
        primal_residual=float(viol), dual_residual=float(np.abs(r_d).max(initial=0.0)),
        gap=gap, iterations=iterations, message=message, bound_duals=bound_duals,
    )
    logger.debug("solve: %s after %d iterations (%s)", status.value, iterations, message)
    return sol


def dump_triplets(p: ConicProgram, path) -> None:
    """Write ``p`` as plain-text sparse triplets ``TAG row col value``.

    Matrices use tags P, A, G; vectors use q, b, h, lb, ub with column 0.
    Infinite bounds are omitted.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# num_vars {p.num_vars} eq_rows {p.b_eq.size} ineq_rows {p.h.size}\n")
        for tag, M in (("P", p.P), ("A", p.A_eq), ("G", p.G)):
            if M is None:
                continue
            C = M.tocoo()
            for r, c, v in zip(C.row, C.col, C.data):
                fh.write(f"{tag} {r} {c} {float(v)!r}\n")
        for tag, v in (("q", p.q), ("b", p.b_eq), ("h", p.h), ("lb", p.lb), ("ub", p.ub)):
            for i in np.flatnonzero(np.isfinite(v) & (v != 0) if tag not in ("lb", "ub")
                                    else np.isfinite(v)):
                fh.write(f"{tag} {i} 0 {float(v[i])!r}\n")


def load_triplets(path) -> ConicProgram:
    """Inverse of :func:`dump_triplets`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        n, meq, min_ = int(header[2]), int(header[4]), int(header[6])
        entries: dict[str, list] = {}
        for line in fh:
            tag, r, c, v = line.split()
            entries.setdefault(tag, []).append((int(r), int(c), float(v)))

    def mat(tag, shape):
        rows = entries.get(tag, [])
        if not rows:
            return sp.csr_matrix(shape)
        r, c, v = zip(*rows)
        return sp.csr_matrix((v, (r, c)), shape=shape)

    def vec(tag, size, fill=0.0):
        out = np.full(size, fill)
        for r, _, v in entries.get(tag, []):
            out[r] = v
        return out

    P = mat("P", (n, n)) if "P" in entries else None
    return ConicProgram(
        num_vars=n, q=vec("q", n), P=P, A_eq=mat("A", (meq, n)), b_eq=vec("b", meq),
        G=mat("G", (min_, n)), h=vec("h", min_),
        lb=vec("lb", n, -np.inf), ub=vec("ub", n, np.inf),
    )
