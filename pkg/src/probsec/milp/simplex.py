"""Bounded-variable primal simplex (two phase, explicit basis inverse).

Rows ``lo <= A x <= hi`` are turned into equalities with one logical
variable per row (``A x - r = 0``, ``lo <= r <= hi``), so every variable is
simply bounded. Phase 1 minimises the sum of artificials. Pricing is
Dantzig's rule; after a run of degenerate pivots the method falls back to
Bland's rule, which rules out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INF = np.inf

_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 64
_DEGENERATE_RUN = 30


@dataclass
class LpResult:
    status: str  # optimal / infeasible / unbounded / iteration_limit / numerical_error
    x: np.ndarray
    objective: float
    iterations: int
    duals: np.ndarray | None = None


class _Bounded:
    """Simplex state over columns of ``M`` with bounds ``l <= z <= u``."""

    def __init__(self, M, b, l, u, z, basis, feas_tol, opt_tol, max_iter):
        self.M, self.b, self.l, self.u = M, b, l, u
        self.z = z
        self.basis = list(basis)
        self.m, self.n = M.shape
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True
        self.feas_tol, self.opt_tol = feas_tol, opt_tol
        self.max_iter = max_iter
        self.iterations = 0
        self.refactor()

    def refactor(self):
        B = self.M[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nb = ~self.is_basic
        rhs = self.b - self.M[:, nb] @ self.z[nb]
        self.z[self.basis] = self.Binv @ rhs

    def run(self, c: np.ndarray) -> str:
        bland = False
        degenerate = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit"
            cb = c[self.basis]
            y = cb @ self.Binv
            d = c - y @ self.M
            d[self.is_basic] = 0.0
            at_lo = np.isclose(self.z, self.l, atol=self.feas_tol, rtol=0) & np.isfinite(self.l)
            at_hi = np.isclose(self.z, self.u, atol=self.feas_tol, rtol=0) & np.isfinite(self.u)
            fixed = (self.u - self.l) <= self.feas_tol
            free = ~at_lo & ~at_hi
            can_up = ~self.is_basic & ~fixed & (at_lo | free) & (d < -self.opt_tol)
            can_dn = ~self.is_basic & ~fixed & (at_hi | free) & (d > self.opt_tol)
            cand = np.flatnonzero(can_up | can_dn)
            if cand.size == 0:
                self.duals = y
                return "optimal"
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if can_up[j] else -1.0

            alpha = self.Binv @ self.M[:, j]
            # basic z_B changes by -t * direction * alpha
            step = direction * alpha
            # distance the entering variable can travel before its own bound
            t_best = (self.u[j] - self.z[j]) if direction > 0 else (self.z[j] - self.l[j])
            leave = -1
            leave_to_upper = False
            zb = self.z[self.basis]
            lb = self.l[self.basis]
            ub = self.u[self.basis]
            piv_tol = max(_PIVOT_TOL, 1e-11 * float(np.abs(step).max(initial=0.0)))
            pos = step > piv_tol
            neg = step < -piv_tol
            ratios = np.full(self.m, INF)
            relaxed = np.full(self.m, INF)
            tol = self.feas_tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios[pos] = np.where(np.isfinite(lb[pos]), (zb[pos] - lb[pos]) / step[pos], INF)
                ratios[neg] = np.where(np.isfinite(ub[neg]), (ub[neg] - zb[neg]) / -step[neg], INF)
                relaxed[pos] = np.where(np.isfinite(lb[pos]), (zb[pos] - lb[pos] + tol) / step[pos], INF)
                relaxed[neg] = np.where(np.isfinite(ub[neg]), (ub[neg] - zb[neg] + tol) / -step[neg], INF)
            ratios = np.maximum(ratios, 0.0)
            r_min = ratios.min() if self.m else INF
            if r_min < t_best:
                if bland:
                    ties = np.flatnonzero(ratios <= r_min + 1e-12)
                    r = int(min(ties, key=lambda i: self.basis[i]))
                else:
                    # Harris: any row blocking within the relaxed step may leave; take the largest pivot
                    ties = np.flatnonzero(ratios <= max(relaxed.min(), r_min))
                    r = int(ties[np.argmax(np.abs(step[ties]))])
                if ratios[r] < t_best:
                    t_best = ratios[r]
                    leave = r
                    leave_to_upper = bool(neg[r])
            if not np.isfinite(t_best):
                return "unbounded"

            self.z[self.basis] = zb - t_best * step
            self.z[j] += direction * t_best
            self.iterations += 1

            if t_best <= self.feas_tol:
                degenerate += 1
                if degenerate >= _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False

            if leave < 0:
                # bound flip: snap to the opposite bound
                self.z[j] = self.u[j] if direction > 0 else self.l[j]
                continue

            out = self.basis[leave]
            self.z[out] = self.u[out] if leave_to_upper else self.l[out]
            piv = alpha[leave]
            if abs(piv) < _PIVOT_TOL:
                return "numerical_error"
            row = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[leave] = row
            self.basis[leave] = j
            self.is_basic[out] = False
            self.is_basic[j] = True
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                try:
                    self.refactor()
                except np.linalg.LinAlgError:
                    return "numerical_error"
                since_refactor = 0


def simplex(c, A, row_lo, row_hi, lb, ub, *, feas_tol=1e-7, opt_tol=1e-9, max_iter=200_000) -> LpResult:
    """Minimise ``c @ x`` subject to ``row_lo <= A x <= row_hi`` and ``lb <= x <= ub``."""
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)
    m, n = A.shape
    c = np.asarray(c, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub + feas_tol) or np.any(row_lo > row_hi + feas_tol):
        return LpResult("infeasible", np.zeros(n), INF, 0)

    # structural values start at a finite bound (0 if free)
    x0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
    act = A @ x0 if m else np.zeros(0)
    r0 = np.clip(act, row_lo, row_hi)
    r0 = np.where(np.isfinite(r0), r0, 0.0)
    resid = act - r0  # A x0 - r0 - resid = 0  => artificials absorb it
    sign = np.where(resid >= 0, 1.0, -1.0)
    inside = np.abs(resid) <= feas_tol

    # columns: [x | r | art], system: A x - r - sign*art = 0 ... we want M z = 0
    # with art = |resid| >= 0:  A x - r - sign * art = 0
    M = np.hstack([A, -np.eye(m), -np.diag(sign)]) if m else np.zeros((0, n))
    l = np.concatenate([lb, row_lo, np.zeros(m)])
    u = np.concatenate([ub, row_hi, np.full(m, INF)])
    z = np.concatenate([x0, r0, np.abs(resid)])
    # rows already satisfied start with their logical basic; the rest with an artificial
    basis = [n + i if inside[i] else n + m + i for i in range(m)]
    z[n + m:][inside] = 0.0
    b = np.zeros(m)

    if m == 0:
        # bound-constrained only
        x = np.where(c > 0, lb, np.where(c < 0, ub, x0))
        if np.any(~np.isfinite(x)):
            return LpResult("unbounded", np.zeros(n), -INF, 0)
        return LpResult("optimal", x, float(c @ x), 0, np.zeros(0))

    st = _Bounded(M, b, l, u, z, basis, feas_tol, opt_tol, max_iter)
    c1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    status = st.run(c1)
    if status != "optimal":
        return LpResult(status, st.z[:n].copy(), INF, st.iterations)
    # judged per row and unscaled: rows with tiny coefficients (probabilities) must not
    # hide behind the big-M entries elsewhere in the matrix
    if float(st.z[n + m:].max()) > feas_tol:
        return LpResult("infeasible", st.z[:n].copy(), INF, st.iterations)

    # phase 2: artificials pinned at zero
    st.u[n + m:] = 0.0
    st.z[n + m:] = np.minimum(st.z[n + m:], 0.0)
    try:
        st.refactor()
    except np.linalg.LinAlgError:
        return LpResult("numerical_error", st.z[:n].copy(), INF, st.iterations)
    c2 = np.concatenate([c, np.zeros(2 * m)])
    status = st.run(c2)
    x = st.z[:n].copy()
    if status != "optimal":
        return LpResult(status, x, -INF if status == "unbounded" else INF, st.iterations)
    # clean tiny bound violations introduced by round-off
    x = np.clip(x, lb, ub)
    act = A @ x
    scale = np.maximum(1.0, np.abs(np.where(np.isfinite(row_lo), row_lo, np.where(np.isfinite(row_hi), row_hi, 0.0))))
    if np.any(act > row_hi + 10 * feas_tol * scale) or np.any(act < row_lo - 10 * feas_tol * scale):
        return LpResult("numerical_error", x, INF, st.iterations)
    return LpResult("optimal", x, float(c @ x), st.iterations, getattr(st, "duals", None)[:m])
