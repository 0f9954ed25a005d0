"""Independent reference computations used by the tests.

Nothing here touches the package's solver: small programs are solved by
enumerating active sets of the KKT conditions with dense numpy algebra.
"""

from __future__ import annotations

import itertools

import numpy as np


def kkt_enumeration(q, G, h, P=None, A=None, b=None, tol=1e-9):
    """Optimal objective of ``min 1/2 z'Pz + q'z  s.t.  Az = b, Gz <= h``.

    Every subset S of inequality rows is treated as active; the KKT system
    ``[[P, A', G_S'], [A, 0, 0], [G_S, 0, 0]]`` is solved in one batch per
    subset size and candidates that are primal feasible and have
    nonnegative multipliers are kept.  For an LP (``P`` zero) only square
    active sets matter, which makes this plain vertex enumeration.  Returns
    ``(objective, z)``; ``(inf, None)`` when no KKT point exists.
    """
    q = np.asarray(q, float)
    n = q.size
    G = np.asarray(G, float).reshape(-1, n)
    h = np.asarray(h, float)
    P = np.zeros((n, n)) if P is None else np.asarray(P, float)
    A = np.zeros((0, n)) if A is None else np.asarray(A, float).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    m, me = G.shape[0], A.shape[0]
    lp = not np.any(P)
    sizes = [n - me] if lp else range(0, min(m, n - me) + 1)
    best, best_z = np.inf, None
    for k in sizes:
        if k < 0 or k > m:
            continue
        combos = list(itertools.combinations(range(m), k))
        subsets = np.array(combos, dtype=int).reshape(len(combos), k)
        N = n + me + k
        K = np.zeros((len(subsets), N, N))
        rhs = np.zeros((len(subsets), N))
        K[:, :n, :n] = P
        K[:, :n, n:n + me] = A.T
        K[:, n:n + me, :n] = A
        rhs[:, :n] = -q
        rhs[:, n:n + me] = b
        if k:
            GS = G[subsets]                      # (S, k, n)
            K[:, :n, n + me:] = np.transpose(GS, (0, 2, 1))
            K[:, n + me:, :n] = GS
            rhs[:, n + me:] = h[subsets]
        cond = np.linalg.cond(K)
        ok = np.isfinite(cond) & (cond < 1e12)
        if not np.any(ok):
            continue
        sol = np.linalg.solve(K[ok], rhs[ok][..., None])[..., 0]
        z = sol[:, :n]
        lam = sol[:, n + me:]
        scale = 1.0 + np.abs(h).max(initial=0.0)
        feas = np.all(z @ G.T <= h + tol * scale, axis=1)
        if me:
            feas &= np.all(np.abs(z @ A.T - b) <= tol * (1 + np.abs(b).max()), axis=1)
        if not lp:
            feas &= np.all(lam >= -tol * (1 + np.abs(lam).max(initial=0.0)), axis=1)
        for zz in z[feas]:
            val = 0.5 * zz @ P @ zz + q @ zz
            if val < best:
                best, best_z = val, zz
    return best, best_z


def random_program(rng, qp: bool, max_vars=10, max_rows=12, with_eq=True):
    """A bounded, feasible random LP or strictly convex QP.

    Feasibility: ``h = G z0 + slack``.  Boundedness of the LP: ``q`` is a
    nonnegative combination of ``-G`` rows (plus an equality term), so the
    dual is feasible.
    """
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(n, max(n, max_rows) + 1))
    me = int(rng.integers(0, min(2, n - 1) + 1)) if with_eq and n > 1 else 0
    G = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    h = G @ z0 + rng.uniform(0.0, 1.0, size=m)
    A = rng.normal(size=(me, n))
    b = A @ z0
    w = rng.uniform(0.0, 1.0, size=m)
    q = -G.T @ w + A.T @ rng.normal(size=me)
    P = None
    if qp:
        L = rng.normal(size=(n, n))
        P = L @ L.T + 0.1 * np.eye(n)
    return dict(q=q, G=G, h=h, P=P, A=A, b=b)


def crossing_dataset(seed: int, n: int = 30, tau1: float = 0.85, tau2: float = 0.90):
    """Draw 1-d production data until independent CQR fits at (tau1, tau2) cross.

    Returns ``(data, attempts)``.
    """
    from pcqr.dgp import NoiseSpec, ScenarioConfig, generate
    from pcqr.estimator import detect_crossing, fit_cqr

    cfg = ScenarioConfig(n=n, d=1, noise=NoiseSpec(1.88, 1.66), tau_pair=(tau1, tau2),
                         replications=1, seed=seed)
    for rep in range(200):
        data = generate(cfg, rep).data
        if detect_crossing(fit_cqr(data, tau1), fit_cqr(data, tau2), data.X) > 0:
            return data, rep + 1
    raise RuntimeError("no crossing dataset found")
