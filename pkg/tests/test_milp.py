"""MILP kernel: LP engine, branch-and-bound, linearizations, LP files.

Oracles here are independent of the kernel: exhaustive enumeration over the
binaries with scipy's HiGHS ``linprog`` for the continuous part.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from probsec.milp import (
    MilpModel,
    ModelError,
    SolverOptions,
    Status,
    linearize_bin_times_free,
    linearize_bin_times_nonneg,
    parse_lp,
    quicksum,
    read_solution,
    solve_lp,
    solve_milp,
    write_lp,
)

OWN = SolverOptions(backend="bnb", lp_engine="simplex", relative_gap=1e-12)
OWN_HIGHS_LP = SolverOptions(backend="bnb", lp_engine="highs", relative_gap=1e-12)
HIGHS = SolverOptions(backend="highs", relative_gap=1e-12)


def random_milp(seed: int, nb: int, nc: int, m: int) -> MilpModel:
    rng = np.random.default_rng(seed)
    model = MilpModel(f"rand{seed}")
    xb = [model.add_var(f"b{i}", binary=True) for i in range(nb)]
    xc = [model.add_var(f"x{i}", -5.0, 5.0) for i in range(nc)]
    allv = xb + xc
    # a known point keeps the instance feasible
    x0 = np.concatenate([rng.integers(0, 2, nb), rng.uniform(-4, 4, nc)])
    for r in range(m):
        a = np.round(rng.normal(size=nb + nc), 2)
        slack = rng.uniform(0, 2)
        model.add_constr(quicksum(float(a[i]) * allv[i] for i in range(nb + nc)), "<=", float(a @ x0 + slack), f"r{r}")
    cost = np.round(rng.normal(size=nb + nc), 2)
    model.set_objective(quicksum(float(cost[i]) * allv[i] for i in range(nb + nc)))
    return model


def enumerate_optimum(model: MilpModel) -> float:
    c, c0, A, lo, hi, lb, ub = model.matrices()
    A = A.toarray()
    bins = model.binaries
    cont = [i for i in range(model.num_vars) if i not in bins]
    best = math.inf
    for assign in itertools.product((0.0, 1.0), repeat=len(bins)):
        fixed = np.zeros(model.num_vars)
        fixed[bins] = assign
        rhs = hi - A @ fixed
        if not cont:
            if np.all(rhs >= -1e-9):
                best = min(best, float(c @ fixed))
            continue
        res = linprog(c[cont], A_ub=A[:, cont], b_ub=rhs, bounds=list(zip(lb[cont], ub[cont])), method="highs")
        if res.status == 0:
            best = min(best, float(c @ fixed) + res.fun)
    return best + c0


CASES = [(s, 3 + s % 6, 2 + s % 3, 4 + s % 4) for s in range(24)]


@pytest.mark.parametrize("seed,nb,nc,m", CASES)
def test_bnb_matches_enumeration(seed, nb, nc, m):
    model = random_milp(seed, nb, nc, m)
    ref = enumerate_optimum(model)
    sol = solve_milp(model, OWN)
    assert sol.status == Status.OPTIMAL
    assert abs(sol.objective - ref) <= 1e-7 * max(1.0, abs(ref))
    assert not model.violations(sol.values, tol=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_pure_binary_twelve(seed):
    rng = np.random.default_rng(100 + seed)
    model = MilpModel("knap")
    w = rng.integers(1, 20, 12)
    v = rng.integers(1, 30, 12)
    y = [model.add_var(f"y{i}", binary=True) for i in range(12)]
    model.add_constr(quicksum(float(w[i]) * y[i] for i in range(12)), "<=", float(w.sum() // 2))
    model.set_objective(quicksum(-float(v[i]) * y[i] for i in range(12)))
    best = min(
        -int(v @ np.array(a)) for a in itertools.product((0, 1), repeat=12) if w @ np.array(a) <= w.sum() // 2
    )
    for opts in (OWN, OWN_HIGHS_LP, HIGHS):
        sol = solve_milp(model, opts)
        assert sol.ok and abs(sol.objective - best) <= 1e-7


def test_backends_agree():
    for seed in range(8):
        model = random_milp(500 + seed, 6, 3, 6)
        a, b = solve_milp(model, OWN_HIGHS_LP), solve_milp(model, HIGHS)
        assert a.ok and b.ok
        assert abs(a.objective - b.objective) <= 1e-7 * max(1, abs(b.objective))


def test_infeasible_milp():
    m = MilpModel()
    y = m.add_var("y", binary=True)
    x = m.add_var("x", 0, 1)
    m.add_constr(x + y, ">=", 3)
    assert solve_milp(m, OWN).status == Status.INFEASIBLE
    assert solve_milp(m, HIGHS).status == Status.INFEASIBLE


def test_node_limit_reports_iteration_limit():
    model = random_milp(7, 10, 2, 8)
    sol = solve_milp(model, SolverOptions(backend="bnb", lp_engine="highs", node_limit=1, relative_gap=1e-12))
    assert sol.status in (Status.ITERATION_LIMIT, Status.OPTIMAL)


# -- LP ---------------------------------------------------------------------

def test_lp_trivial():
    m = MilpModel()
    x = m.add_var("x", 0)
    m.add_constr(x, ">=", 1)
    m.set_objective(x)
    sol = solve_lp(m)
    assert sol.ok and sol[x] == pytest.approx(1.0)


def test_lp_equality_and_free_vars():
    m = MilpModel()
    x = m.add_var("x", -math.inf, math.inf)
    y = m.add_var("y", -math.inf, math.inf)
    m.add_constr(x + y, "==", 4)
    m.add_constr(x - y, "==", 2)
    m.set_objective(x)
    sol = solve_lp(m)
    assert sol.ok and (sol[x], sol[y]) == pytest.approx((3.0, 1.0))


def test_lp_infeasible_and_unbounded():
    m = MilpModel()
    x = m.add_var("x", 0, 1)
    m.add_constr(x, ">=", 2)
    assert solve_lp(m).status == Status.INFEASIBLE
    m = MilpModel()
    x = m.add_var("x", 0)
    m.set_objective(-x)
    assert solve_lp(m).status == Status.UNBOUNDED


@pytest.mark.parametrize("seed", range(20))
def test_simplex_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    n, k = 5, 6
    m = MilpModel()
    xs = [m.add_var(f"x{i}", float(rng.uniform(-3, 0)), float(rng.uniform(0, 3))) for i in range(n)]
    A = rng.normal(size=(k, n))
    b = rng.uniform(0.5, 3, k)
    for r in range(k):
        m.add_constr(quicksum(float(A[r, i]) * xs[i] for i in range(n)), "<=", float(b[r]))
    c = rng.normal(size=n)
    m.set_objective(quicksum(float(c[i]) * xs[i] for i in range(n)))
    ref = linprog(c, A_ub=A, b_ub=b, bounds=[(m.lb[i], m.ub[i]) for i in range(n)], method="highs")
    sol = solve_lp(m, SolverOptions(lp_engine="simplex"))
    assert sol.ok and ref.status == 0
    assert sol.objective == pytest.approx(ref.fun, abs=1e-7)


def test_bad_models_rejected():
    m = MilpModel()
    m.add_var("x")
    with pytest.raises(ModelError):
        m.add_var("x")
    with pytest.raises(ModelError):
        m.add_var("z", 2, 1)
    with pytest.raises(ModelError):
        m.add_constr(m.var("x"), "<", 1)
    with pytest.raises(ModelError):
        m.add_constr(m.var("x") * math.nan, "<=", 1)
    with pytest.raises(ModelError):
        m.register_big_m("flow", 0)


# -- linearizations -------------------------------------------------------------

def _range_of(model, t):
    lo_m, hi_m = model.copy(), model.copy()
    lo_m.set_objective(t)
    hi_m.set_objective(-1.0 * t)
    a, b = solve_lp(lo_m, SolverOptions(feasibility_tol=1e-9)), solve_lp(hi_m, SolverOptions(feasibility_tol=1e-9))
    return a, b


@pytest.mark.parametrize("lam", [0, 1])
@pytest.mark.parametrize("theta", np.linspace(-10, 10, 9))
def test_free_product_grid(lam, theta):
    m = MilpModel()
    L = m.add_var("lam", binary=True)
    th = m.add_var("theta", -10, 10)
    t = linearize_bin_times_free(m, L, th, 10.0, "t")
    m.fix(L, lam)
    m.fix(th, theta)
    a, b = _range_of(m, t)
    assert a.ok and b.ok
    assert a[t] == pytest.approx(lam * theta, abs=1e-9)
    assert b[t] == pytest.approx(lam * theta, abs=1e-9)


@pytest.mark.parametrize("y", [0, 1])
@pytest.mark.parametrize("p", np.linspace(0, 50, 6))
def test_nonneg_product_grid(y, p):
    m = MilpModel()
    Y = m.add_var("y", binary=True)
    P = m.add_var("P", 0, 50)
    t = linearize_bin_times_nonneg(m, Y, P, 50.0, "t")
    m.fix(Y, y)
    m.fix(P, p)
    a, b = _range_of(m, t)
    assert a[t] == pytest.approx(y * p, abs=1e-9)
    assert b[t] == pytest.approx(y * p, abs=1e-9)


def test_linearization_rejects_bad_m():
    m = MilpModel()
    L, th = m.add_var("l", binary=True), m.add_var("th", -1, 1)
    with pytest.raises(ModelError):
        linearize_bin_times_free(m, L, th, 0.0, "t")


# -- LP files -------------------------------------------------------------------

def test_lp_roundtrip():
    model = random_milp(3, 4, 2, 5)
    back = parse_lp(write_lp(model))
    c1, _, A1, lo1, hi1, lb1, ub1 = model.matrices()
    c2, _, A2, lo2, hi2, lb2, ub2 = back.matrices()
    assert back.var_names == [v for v in model.var_names]
    assert np.allclose(c1, c2) and np.allclose(A1.toarray(), A2.toarray())
    assert np.array_equal(lo1, lo2) and np.array_equal(hi1, hi2)
    assert np.array_equal(lb1, lb2) and np.array_equal(ub1, ub2)
    assert back.binaries == model.binaries
    assert solve_milp(back, HIGHS).objective == pytest.approx(solve_milp(model, HIGHS).objective, abs=1e-9)


def test_read_solution():
    m = MilpModel()
    x, y = m.add_var("x[1]", 0, 5), m.add_var("y", 0, 5)
    m.set_objective(2 * x + y)
    sol = read_solution("# comment\nx(1) 1.5\ny 2\n", m)
    assert sol.ok and sol.objective == pytest.approx(5.0)
    assert read_solution("infeasible\n", m).status == Status.INFEASIBLE


def test_failed_node_lp_is_not_reported_optimal(monkeypatch):
    from probsec.milp import solve as solve_mod

    model = random_milp(2, 6, 2, 6)
    assert solve_milp(model, OWN_HIGHS_LP).nodes > 1
    real = solve_mod._Lp.solve
    calls = iter(range(10**6))

    def flaky(self, lb, ub, opts):
        res = real(self, lb, ub, opts)
        # only the root relaxation survives
        return res if next(calls) == 0 else ("numerical_error", res[1], res[2], res[3])

    monkeypatch.setattr(solve_mod._Lp, "solve", flaky)
    sol = solve_milp(model, OWN_HIGHS_LP)
    assert sol.status == Status.NUMERICAL_ERROR


def test_tiny_row_not_hidden_by_big_m():
    # a probability-weighted row must be judged on its own scale, not the matrix's largest entry
    m = MilpModel()
    y = m.add_var("y", 1, 1)
    x = m.add_var("x", 0, 1)
    m.add_constr(1.8e-5 * y, "<=", 0, "chance")
    m.add_constr(34250.0 * x - y, "<=", 0, "bigm")
    assert solve_lp(m, SolverOptions(lp_engine="simplex")).status == Status.INFEASIBLE
    assert solve_lp(m, SolverOptions(lp_engine="highs")).status == Status.INFEASIBLE
