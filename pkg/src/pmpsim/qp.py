"""Dense convex QP solver for the small per-household problems.

Solves::

    maximize    lin @ x - 0.5 * x @ H @ x
    subject to  G @ x <= h
                E @ x == e

with ``H`` symmetric positive definite, using the dual active-set method of
Goldfarb and Idnani.  The method starts from the unconstrained maximizer and
adds violated constraints one at a time, so no feasible starting point is
needed and infeasibility is detected directly.  Problems here have at most a
few dozen variables, so each step solves the full KKT system densely rather
than updating factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import kernel

OPTIMAL = 0
INFEASIBLE = 1
ITERATION_LIMIT = 2
SINGULAR = 3
UNBOUNDED = 4

# An "optimal" point whose scaled KKT residual exceeds this is reported as a
# numerical failure instead.
ACCURACY_LIMIT = 1e-7

STATUS_NAMES = {
    OPTIMAL: "optimal",
    INFEASIBLE: "infeasible",
    ITERATION_LIMIT: "iteration_limit",
    SINGULAR: "singular",
    UNBOUNDED: "unbounded",
}


class QPError(RuntimeError):
    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(message or STATUS_NAMES.get(status, "qp failure"))


@kernel
def dual_active_set(H, g, C, b, meq, max_iter, tol):
    """Minimize 0.5 x'Hx + g'x s.t. C[:meq] x = b[:meq], C[meq:] x >= b[meq:].

    Returns ``(x, lam, status, iterations)`` where ``lam`` holds one
    multiplier per row of ``C`` (zero for inactive rows) with the sign
    convention ``H x + g = C' lam``.
    """
    n = H.shape[0]
    m = C.shape[0]
    x = np.linalg.solve(H, -g)
    lam = np.zeros(m)
    active = np.zeros(m, dtype=np.int64)
    u = np.zeros(m)
    sgn = np.ones(m)
    in_set = np.zeros(m, dtype=np.bool_)
    nact = 0
    it = 0

    while True:
        p = -1
        for i in range(meq):
            if not in_set[i]:
                p = i
                break
        if p < 0:
            worst = -tol
            for i in range(meq, m):
                if not in_set[i]:
                    s = np.dot(C[i], x) - b[i]
                    if s < worst:
                        worst = s
                        p = i
        if p < 0:
            break

        if p < meq:
            if np.dot(C[p], x) - b[p] > 0.0:
                sgn[p] = -1.0
            else:
                sgn[p] = 1.0
        npv = sgn[p] * C[p]
        bp = sgn[p] * b[p]
        up = 0.0

        added = False
        while not added:
            it += 1
            if it > max_iter:
                return x, lam, 2, it
            if nact >= n:
                # a full active set leaves no primal direction: z = 0 exactly
                N = np.zeros((n, nact))
                for j in range(nact):
                    a = active[j]
                    for col in range(n):
                        N[col, j] = sgn[a] * C[a, col]
                z = np.zeros(n)
                r = np.linalg.lstsq(N, npv)[0]
            else:
                dim = n + nact
                K = np.zeros((dim, dim))
                K[:n, :n] = H
                for j in range(nact):
                    a = active[j]
                    for col in range(n):
                        K[col, n + j] = sgn[a] * C[a, col]
                        K[n + j, col] = sgn[a] * C[a, col]
                rhs = np.zeros(dim)
                rhs[:n] = npv
                sol = np.linalg.solve(K, rhs)
                z = sol[:n]
                r = sol[n:]

            t1 = np.inf
            kk = -1
            for j in range(nact):
                if active[j] >= meq and r[j] > 1e-13:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        kk = j

            zn = np.dot(z, npv)
            sp = np.dot(npv, x) - bp
            if zn <= 1e-12 * np.dot(npv, npv):
                t2 = np.inf
            else:
                t2 = -sp / zn

            if t1 == np.inf and t2 == np.inf:
                return x, lam, 1, it

            if t2 == np.inf:
                for j in range(nact):
                    u[j] -= t1 * r[j]
                up += t1
            else:
                t = min(t1, t2)
                x = x + t * z
                for j in range(nact):
                    u[j] -= t * r[j]
                up += t
                if t2 <= t1:
                    active[nact] = p
                    u[nact] = up
                    in_set[p] = True
                    nact += 1
                    added = True
                    continue

            # drop blocking constraint kk from the active set
            in_set[active[kk]] = False
            for j in range(kk, nact - 1):
                active[j] = active[j + 1]
                u[j] = u[j + 1]
            nact -= 1

    for j in range(nact):
        a = active[j]
        lam[a] = u[j] * sgn[a]
    return x, lam, 0, it


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    ineq_duals: np.ndarray
    eq_duals: np.ndarray
    objective: float
    status: int
    iterations: int
    kkt: KKTReport

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _row_scale(A: np.ndarray) -> np.ndarray:
    if A.shape[0] == 0:
        return np.ones(0)
    s = np.abs(A).max(axis=1) if A.shape[1] else np.zeros(A.shape[0])
    return np.where(s > 0.0, s, 1.0)


def kkt_residuals(H, lin, G, h, E, e, x, lam, mu) -> KKTReport:
    """Residuals of the maximization KKT system, in the units given."""
    grad = H @ x - lin
    if G.shape[0]:
        grad = grad + G.T @ lam
    if E.shape[0]:
        grad = grad + E.T @ mu
    stat = float(np.abs(grad).max()) if grad.size else 0.0
    primal = 0.0
    comp = 0.0
    if G.shape[0]:
        slack = h - G @ x
        primal = max(primal, float(np.maximum(-slack, 0.0).max()))
        primal = max(primal, float(np.maximum(-lam, 0.0).max()))
        comp = float(np.abs(lam * slack).max())
    if E.shape[0]:
        primal = max(primal, float(np.abs(E @ x - e).max()))
    return KKTReport(stat, primal, comp)


def solve_dense_qp(H, lin, G=None, h=None, E=None, e=None, *, max_iter=None, tol=1e-11):
    """Maximize ``lin @ x - 0.5 x'Hx`` under linear constraints.

    The problem is scaled internally (objective by its largest linear
    coefficient, each constraint row by its largest coefficient); the
    returned KKT report is measured on that scaled problem and the duals are
    returned in original units.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    lin = np.ascontiguousarray(lin, dtype=np.float64)
    n = lin.shape[0]
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=np.float64).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=np.float64).ravel()
    E = np.zeros((0, n)) if E is None else np.asarray(E, dtype=np.float64).reshape(-1, n)
    e = np.zeros(0) if e is None else np.asarray(e, dtype=np.float64).ravel()
    mi, me = G.shape[0], E.shape[0]

    if n == 0:
        infeasible = (mi and np.any(h < 0.0)) or (me and np.any(np.abs(e) > 0.0))
        status = INFEASIBLE if infeasible else OPTIMAL
        return QPResult(np.zeros(0), np.zeros(mi), np.zeros(me), 0.0, status, 0, KKTReport(0.0, 0.0, 0.0))

    scale = max(1.0, float(np.abs(lin).max()), float(np.abs(H).max()))
    Hs = H / scale
    ls = lin / scale
    gs_ = _row_scale(G)
    es_ = _row_scale(E)
    Gs, hs = G / gs_[:, None], h / gs_
    Es, ens = E / es_[:, None], e / es_

    ridge = 0.0
    try:
        np.linalg.cholesky(Hs)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(1.0, float(np.abs(np.diag(Hs)).max()))
        Hs = Hs + ridge * np.eye(n)

    C = np.ascontiguousarray(np.vstack([Es, -Gs]))
    b = np.ascontiguousarray(np.concatenate([ens, -hs]))
    if max_iter is None:
        max_iter = 50 * (n + mi + me) + 100
    try:
        x, lam, status, it = dual_active_set(Hs, -ls, C, b, me, max_iter, tol)
    except np.linalg.LinAlgError:
        return QPResult(np.full(n, np.nan), np.zeros(mi), np.zeros(me), np.nan, SINGULAR, 0,
                        KKTReport(np.inf, np.inf, np.inf))
    x = np.asarray(x)
    lam = np.asarray(lam)
    if ridge and status == OPTIMAL and np.abs(x).max() > 1e8:
        status = UNBOUNDED

    mu_s = -lam[:me]
    lam_s = lam[me:]
    kkt = kkt_residuals(Hs, ls, Gs, hs, Es, ens, x, lam_s, mu_s)
    if status == OPTIMAL and kkt.max() > ACCURACY_LIMIT:
        status = SINGULAR
    objective = float(lin @ x - 0.5 * x @ H @ x)
    return QPResult(
        x=x,
        ineq_duals=lam_s * scale / gs_,
        eq_duals=mu_s * scale / es_,
        objective=objective,
        status=int(status),
        iterations=int(it),
        kkt=kkt,
    )
