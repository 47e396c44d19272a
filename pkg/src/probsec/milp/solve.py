"""LP and MILP entry points: own simplex + branch-and-bound, or HiGHS via scipy."""

from __future__ import annotations

import heapq
import itertools
import logging

import numpy as np
from scipy import optimize

from .model import INF, MilpModel, MilpSolution, SolverOptions, Status
from .simplex import simplex

log = logging.getLogger(__name__)


class _Lp:
    """Matrices of a model, reused across branch-and-bound nodes."""

    def __init__(self, model: MilpModel):
        self.c, self.c0, self.A, self.lo, self.hi, self.lb, self.ub = model.matrices()
        self.n = model.num_vars
        self._dense = None
        self._split = None

    def solve(self, lb, ub, opts: SolverOptions):
        """Return ``(status, x, objective, iterations)`` for the relaxation."""
        if opts.lp_engine == "simplex":
            if self._dense is None:
                self._dense = self.A.toarray()
            res = simplex(self.c, self._dense, self.lo, self.hi, lb, ub,
                          feas_tol=opts.feasibility_tol, max_iter=opts.max_lp_iterations)
            obj = res.objective + self.c0 if res.status == "optimal" else res.objective
            return res.status, res.x, obj, res.iterations
        return self._highs(lb, ub, opts)

    def _highs(self, lb, ub, opts):
        if self._split is None:
            eq = np.isfinite(self.lo) & np.isfinite(self.hi) & (self.lo == self.hi)
            up = np.isfinite(self.hi) & ~eq
            dn = np.isfinite(self.lo) & ~eq
            from scipy import sparse

            A_ub = sparse.vstack([self.A[up], -self.A[dn]]).tocsr()
            b_ub = np.concatenate([self.hi[up], -self.lo[dn]])
            self._split = (A_ub, b_ub, self.A[eq].tocsr(), self.lo[eq])
        A_ub, b_ub, A_eq, b_eq = self._split
        res = self._linprog(self.c, A_ub, b_ub, A_eq, b_eq, lb, ub, opts)
        if res.status == 2 and np.any(self.c):
            # HiGHS presolve sometimes reports unbounded problems as infeasible
            chk = self._linprog(np.zeros_like(self.c), A_ub, b_ub, A_eq, b_eq, lb, ub, opts)
            if chk.status == 0:
                return "unbounded", np.asarray(chk.x), -INF, int(getattr(res, "nit", 0) or 0)
        its = int(getattr(res, "nit", 0) or 0)
        if res.status == 0:
            return "optimal", np.asarray(res.x), float(res.fun) + self.c0, its
        if res.status == 2:
            return "infeasible", np.zeros(self.n), INF, its
        if res.status == 3:
            return "unbounded", np.zeros(self.n), -INF, its
        if res.status == 1:
            return "iteration_limit", np.zeros(self.n), INF, its
        return "numerical_error", np.zeros(self.n), INF, its

    @staticmethod
    def _linprog(c, A_ub, b_ub, A_eq, b_eq, lb, ub, opts):
        bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(lb, ub)]
        return optimize.linprog(
            c,
            A_ub=A_ub if A_ub.shape[0] else None,
            b_ub=b_ub if A_ub.shape[0] else None,
            A_eq=A_eq if A_eq.shape[0] else None,
            b_eq=b_eq if A_eq.shape[0] else None,
            bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": opts.feasibility_tol,
                     "dual_feasibility_tolerance": 1e-9},
        )


def solve_lp(model: MilpModel, opts: SolverOptions | None = None) -> MilpSolution:
    """Solve the LP relaxation of ``model`` (binary marks are ignored)."""
    opts = opts or SolverOptions()
    lp = _Lp(model)
    status, x, obj, its = lp.solve(lp.lb, lp.ub, opts)
    return MilpSolution(Status(status), x, obj, bound=obj if status == "optimal" else -INF,
                        lp_iterations=its, var_names=model.var_names)


def solve_milp(model: MilpModel, opts: SolverOptions | None = None) -> MilpSolution:
    """Solve ``model`` to within ``opts.relative_gap``.

    The built-in search branches on the most fractional binary (lowest index
    on ties) and always expands the open node with the smallest bound (FIFO
    on ties), so the result depends only on the model and options.
    """
    opts = opts or SolverOptions()
    if opts.backend == "highs":
        return _solve_highs(model, opts)
    return _BranchAndBound(model, opts).run()


class _BranchAndBound:
    def __init__(self, model: MilpModel, opts: SolverOptions):
        self.model = model
        self.opts = opts
        self.lp = _Lp(model)
        self.bins = np.array(model.binaries, dtype=int)
        self.incumbent: np.ndarray | None = None
        self.inc_obj = INF
        self.lp_iterations = 0
        self.nodes = 0

    def _relax(self, lb, ub):
        st, x, obj, its = self.lp.solve(lb, ub, self.opts)
        self.lp_iterations += its
        return st, x, obj

    def _fractional(self, x):
        if self.bins.size == 0:
            return -1
        v = x[self.bins]
        frac = np.minimum(v - np.floor(v), np.ceil(v) - v)
        frac[frac <= self.opts.integrality_tol] = 0.0
        if not frac.any():
            return -1
        # argmax returns the first (lowest-index) maximiser
        return int(self.bins[int(np.argmax(frac))])

    def _least_fractional(self, x):
        v = x[self.bins]
        frac = np.minimum(v - np.floor(v), np.ceil(v) - v)
        frac[frac <= self.opts.integrality_tol] = np.inf
        k = int(np.argmin(frac))
        return -1 if not np.isfinite(frac[k]) else int(self.bins[k])

    def _pruned(self, bound):
        if self.incumbent is None:
            return False
        gap = self.opts.relative_gap * max(1.0, abs(self.inc_obj))
        return bound >= self.inc_obj - gap

    def _accept(self, x, obj):
        if obj < self.inc_obj:
            x = x.copy()
            x[self.bins] = np.round(x[self.bins])
            self.incumbent, self.inc_obj = x, obj

    def _dive(self, lb, ub, x, budget: int | None = None):
        """Depth-first rounding dive with backtracking, capped at ``budget`` LP solves.

        Purely a primal heuristic: the main search order stays best-bound.
        """
        budget = budget if budget is not None else 4 * self.bins.size + 20
        stack = [(lb.copy(), ub.copy(), x)]
        spent = 0
        while stack and spent < budget:
            lb, ub, x = stack.pop()
            j = self._least_fractional(x) if self.bins.size else -1
            if j < 0:
                return x
            kids = []
            for val in (0.0, 1.0):
                clb, cub = lb.copy(), ub.copy()
                clb[j] = cub[j] = val
                st, cx, obj = self._relax(clb, cub)
                spent += 1
                if st == "optimal" and not self._pruned(obj):
                    kids.append((obj, val, clb, cub, cx))
            # the child with the better bound is explored next (ties: rounding direction)
            near = float(np.round(x[j]))
            kids.sort(key=lambda k: (k[0], k[1] != near), reverse=True)
            stack.extend((clb, cub, cx) for _, _, clb, cub, cx in kids)
        return None

    def run(self) -> MilpSolution:
        lb0, ub0 = self.lp.lb.copy(), self.lp.ub.copy()
        st, x, obj = self._relax(lb0, ub0)
        self.nodes = 1
        names = self.model.var_names
        if st in ("infeasible", "unbounded", "numerical_error", "iteration_limit"):
            return MilpSolution(Status(st), x, obj, nodes=1, lp_iterations=self.lp_iterations, var_names=names)

        if self._fractional(x) < 0:
            self._accept(x, obj)
        else:
            xd = self._dive(lb0, ub0, x)
            if xd is not None:
                self._accept(xd, float(self.lp.c @ xd) + self.lp.c0)

        counter = itertools.count()
        heap: list = []
        if self._fractional(x) >= 0:
            heapq.heappush(heap, (obj, next(counter), lb0, ub0, x))
        status = Status.OPTIMAL
        while heap:
            bound, _, lb, ub, x = heapq.heappop(heap)
            if self._pruned(bound):
                continue
            if self.nodes >= self.opts.node_limit:
                status = Status.ITERATION_LIMIT
                heapq.heappush(heap, (bound, next(counter), lb, ub, x))
                break
            j = self._fractional(x)
            for val in (0.0, 1.0):
                clb, cub = lb.copy(), ub.copy()
                clb[j] = cub[j] = val
                st, cx, cobj = self._relax(clb, cub)
                self.nodes += 1
                if st in ("numerical_error", "iteration_limit"):
                    # the subtree was not proven empty, so optimality cannot be claimed
                    status = Status(st)
                    continue
                if st != "optimal" or self._pruned(cobj):
                    continue
                if self._fractional(cx) < 0:
                    self._accept(cx, cobj)
                else:
                    heapq.heappush(heap, (cobj, next(counter), clb, cub, cx))
        # open nodes bound the optimum from below; a finished search is closed by the incumbent
        best_bound = min([h[0] for h in heap] + [self.inc_obj])

        if self.incumbent is None:
            st = Status.INFEASIBLE if status == Status.OPTIMAL else status
            return MilpSolution(st, np.zeros(self.model.num_vars), INF, bound=best_bound, nodes=self.nodes,
                                lp_iterations=self.lp_iterations, var_names=names)
        return MilpSolution(status, self.incumbent, self.inc_obj, bound=best_bound, nodes=self.nodes,
                            lp_iterations=self.lp_iterations, var_names=names)


def _solve_highs(model: MilpModel, opts: SolverOptions) -> MilpSolution:
    c, c0, A, lo, hi, lb, ub = model.matrices()
    integrality = np.array(model.binary, dtype=int)
    cons = optimize.LinearConstraint(A, lo, hi) if A.shape[0] else None
    res = optimize.milp(
        c,
        integrality=integrality,
        bounds=optimize.Bounds(lb, ub),
        constraints=cons,
        options={
            "mip_rel_gap": opts.relative_gap,
            "node_limit": opts.node_limit,
            "disp": False,
        },
    )
    names = model.var_names
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    bound = float(getattr(res, "mip_dual_bound", -INF) or -INF)
    if res.x is not None and res.status in (0, 1):
        x = np.asarray(res.x, dtype=float).copy()
        x[integrality == 1] = np.round(x[integrality == 1])
        x = np.clip(x, lb, ub)
        st = Status.OPTIMAL if res.status == 0 else Status.ITERATION_LIMIT
        return MilpSolution(st, x, float(c @ x) + c0, bound=bound + c0, nodes=nodes, var_names=names)
    if res.status == 2:
        st = Status.INFEASIBLE
    elif res.status == 3:
        st = Status.UNBOUNDED
    elif res.status == 1:
        st = Status.ITERATION_LIMIT
    else:
        st = Status.NUMERICAL_ERROR
    return MilpSolution(st, np.zeros(model.num_vars), INF, bound=bound, nodes=nodes, var_names=names)
