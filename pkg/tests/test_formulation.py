import math

import pytest

from probsec.formulation import (
    Fees,
    FormulationError,
    RtpOptions,
    Strategy,
    big_m,
    build_case_a,
    build_rtp,
    case_a_options,
    objective_incremental,
    solve_model,
    solve_rtp,
)
from probsec.milp import SolverOptions, parse_lp, solve_milp, write_lp
from probsec.scenarios import behavior_set, build_contingencies

CASE_A_CORR = {
    2: (55, 10, 35), 3: (45, 10, 45), 4: (45, 10, 45),
    5: (None, 50, 50), 6: (82.5, None, 17.5), 7: (65, 35, None),
}


def census(case, conts, relax_working=False, relax_failing=True, chance=True):
    """Closed-form variable, binary and row counts of the model build."""
    nN, nL, nG, nD = len(case.nodes), len(case.lines), len(case.generators), len(case.demands)
    out = conts.outages
    nv = nG + nN + nL + len(out) * nG
    nb = 0
    nr = nN + 3 * nL + 2 * nG + 4 * nG * len(out) + (1 if chance else 0)
    for c in out:
        avail = nG - (c.kind == "gen")
        for failing in (False, True):
            relax = relax_failing if failing else relax_working
            free = (nL - (c.kind == "line")) if relax else 0
            removable = not (failing and c.kind == "gen")
            nv += 2 * nN + 3 * nL + 2 * nG + nD + 1 + chance + failing * nN
            nv += free * (1 + 2 * removable) + avail
            nb += nL + nG + chance + free
            nr += (2 if failing else 1) * nN + 3 * nL + 4 * free
            nr += nN + 3 * nL + 8 * removable * free + nD + 3 * nG + 3 * avail + 1 + chance
    return nv, nb, nr


@pytest.mark.parametrize("relax_working", [False, True])
def test_census_3bus(case3, conts3, beh, relax_working):
    m, _ = build_rtp(case3, conts3, beh, RtpOptions(s_max=14000, allow_relax_working=relax_working))
    assert (m.num_vars, len(m.binaries), m.num_constrs) == census(case3, conts3, relax_working)


def test_census_case_a_and_6bus(case3, conts3, case6, beh):
    m, _ = build_case_a(case3, conts3, beh)
    assert (m.num_vars, len(m.binaries), m.num_constrs) == census(case3, conts3, chance=False)
    assert (m.num_vars, len(m.binaries), m.num_constrs) == (378, 87, 726)
    c6 = build_contingencies(case6)
    m, _ = build_rtp(case6, c6, beh, RtpOptions(s_max=12125))
    assert (m.num_vars, len(m.binaries), m.num_constrs) == census(case6, c6)


def test_build_is_deterministic(case3, conts3, beh):
    a, _ = build_rtp(case3, conts3, beh, RtpOptions(s_max=14000))
    b, _ = build_rtp(case3, conts3, beh, RtpOptions(s_max=14000))
    assert write_lp(a) == write_lp(b)


def test_big_m_registry(case3, conts3, beh):
    m, _ = build_rtp(case3, conts3, beh)
    M = big_m(case3)
    assert m.big_m == M
    # no flow can exceed total generation plus load, no severity the maximum
    assert M["flow"] >= sum(g.p_max for g in case3.generators)
    assert M["severity"] == case3.max_severity()


def test_case_a(case3, conts3, beh):
    r = solve_rtp(case3, conts3, beh, case_a=True)
    assert r.ok
    assert [r.strategy.preventive[g] for g in ("g1", "g2", "g3")] == pytest.approx([77.5, 10, 12.5])
    for cid, row in CASE_A_CORR.items():
        for g, v in zip(("g1", "g2", "g3"), row):
            if v is None:
                assert g not in r.strategy.corrective[cid]
            else:
                assert r.strategy.corrective[cid][g] == pytest.approx(v, abs=1e-6)
    assert r.preventive_cost == pytest.approx(2325.0, abs=1e-6)
    assert r.expected_corrective == pytest.approx(0.54825, abs=1e-6)
    fail = [r.severities[(c, "failing")] for c in range(2, 8)]
    assert fail == pytest.approx([27250, 34250, 34250, 23250, 3000, 3750], abs=1e-6)
    assert all(r.severities[(c, "working")] == pytest.approx(0, abs=1e-6) for c in range(2, 8))
    assert r.post_flows[(3, "failing")] == pytest.approx([77.5, 0, 87.5], abs=1e-6)


def test_case_b(case3, conts3, beh):
    r = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000, epsilon=0))
    assert r.ok
    assert [r.strategy.preventive[g] for g in ("g1", "g2", "g3")] == pytest.approx([45, 10, 45])
    fail = [r.severities[(c, "failing")] for c in range(2, 8)]
    assert fail == pytest.approx([0, 0, 0, 13500, 3000, 13500], abs=1e-6)
    assert max(r.severities.values()) <= 14000 + 1e-6
    assert r.post_flows[(2, "failing")] == pytest.approx([0, 45, 10], abs=1e-6)
    assert r.removed[(2, "failing")] == []


def test_relax_working_same_answer(case3, conts3, beh):
    off = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000, epsilon=0))
    on = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000, epsilon=0, allow_relax_working=True))
    assert on.strategy.preventive == pytest.approx(off.strategy.preventive)
    assert on.objective == pytest.approx(off.objective, rel=1e-6)


def test_vacuous_chance_equals_case_a_with_severity(case3, conts3, beh):
    rtp = solve_rtp(case3, conts3, beh, RtpOptions(s_max=0.0, epsilon=1.0))
    opts = case_a_options()
    opts.include_severity = True
    a = solve_rtp(case3, conts3, beh, opts)
    assert rtp.objective == pytest.approx(a.objective, rel=1e-9)


def test_infeasible_threshold(case3, conts3, beh):
    # unit 1 failing with control lost always sheds something: no strategy meets s_max = 0 surely
    r = solve_rtp(case3, conts3, beh, RtpOptions(s_max=0.0, epsilon=0.0))
    assert not r.ok and r.strategy is None


def test_delta_only_for_generator_outages(case3, conts3, beh):
    r = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000))
    for c in conts3.outages:
        vals = [r.solution[r.vmap[("delta", c.id, "f", n)]] for n in case3.nodes]
        if c.kind == "line":
            assert vals == pytest.approx([0, 0, 0], abs=1e-9)
        else:
            # the survivors pick up exactly what the lost unit produced
            assert sum(vals) == pytest.approx(r.strategy.p0(case3)[c.index], abs=1e-6)


def test_working_balance_exact(case3, conts3, beh):
    r = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000))
    for c in conts3.outages:
        assert sum(r.strategy.pc(case3, c)) == pytest.approx(case3.total_load(), abs=1e-9)


def test_lp_dump_roundtrip_solves_same(case3, conts3, beh):
    m, _ = build_rtp(case3, conts3, beh, RtpOptions(s_max=14000))
    back = parse_lp(write_lp(m))
    opts = SolverOptions(backend="highs", relative_gap=1e-9)
    assert solve_milp(back, opts).objective == pytest.approx(solve_milp(m, opts).objective, rel=1e-9)


def test_options_checked():
    with pytest.raises(FormulationError):
        RtpOptions(epsilon=2.0)
    with pytest.raises(FormulationError):
        RtpOptions(s_max=-1)
    with pytest.raises(FormulationError):
        RtpOptions(objective="cheapest")


# -- incremental settlement -------------------------------------------------------

def _market_case(case3, pm):
    gens = tuple(g.__class__(**{**g.__dict__, "p_market": v}) for g, v in zip(case3.generators, pm))
    return case3.with_(generators=gens)


def _fixed_parts(case, conts, beh, pre, fees):
    # only outages where keeping P^c = P^0 stays feasible
    conts = conts.subset(lambda c: c.id == 2)
    m, v = build_rtp(case, conts, beh, RtpOptions(s_max=math.inf, include_severity=False, chance=False))
    objective_incremental(m, v, case, conts, "preventive", fees)
    objective_incremental(m, v, case, conts, "corrective", fees)
    for g, val in pre.items():
        m.fix(v[("P0", g)], val)
    for c in conts.outages:
        for i, g in enumerate(case.generators):
            if c.a_gen(i):
                m.fix(v[("Pc", c.id, g.id)], pre[g.id])
    sol = solve_milp(m, SolverOptions(backend="highs"))
    return sol, v


def test_incremental_zero_when_on_schedule(case3, conts3, beh):
    pm = (45.0, 10.0, 45.0)
    case = _market_case(case3, pm)
    sol, v = _fixed_parts(case, conts3, beh, dict(zip(("g1", "g2", "g3"), pm)), None)
    assert sol.ok
    assert sol.value(v.parts["preventive"]) == pytest.approx(0, abs=1e-9)
    assert sol.value(v.parts["corrective"]) == pytest.approx(0, abs=1e-9)


def test_incremental_fees(case3, conts3, beh):
    case = _market_case(case3, (35.0, 10.0, 55.0))
    fees = Fees(up={"g1": 2.0}, down={"g1": 3.0, "g3": 0.0})
    # g1 10 MW above its schedule at fee 2; g3 10 MW below at fee 0
    sol, v = _fixed_parts(case, conts3, beh, {"g1": 45.0, "g2": 10.0, "g3": 45.0}, fees)
    assert sol.ok
    assert sol.value(v.parts["preventive"]) == pytest.approx(20.0, abs=1e-9)


def test_incremental_needs_market(case3, conts3, beh):
    with pytest.raises(FormulationError):
        build_rtp(case3, conts3, beh, RtpOptions(objective="incremental"))


def test_strategy_helpers(case3, conts3):
    st = Strategy({"g1": 50.0, "g2": 20.0, "g3": 30.0}, {5: {"g2": 60.0}})
    gen1 = conts3.by_id(5)
    assert list(st.pc(case3, gen1)) == [0.0, 60.0, 30.0]
    assert list(st.pc(case3, conts3.by_id(2))) == [50.0, 20.0, 30.0]
    assert st.rounded(0).preventive["g1"] == 50.0


def test_behaviour_probabilities_enter_objective(case3, conts3):
    lo = solve_rtp(case3, conts3, behavior_set(0.0), RtpOptions(s_max=14000))
    hi = solve_rtp(case3, conts3, behavior_set(0.2), RtpOptions(s_max=14000))
    assert lo.ok and hi.ok
    assert lo.expected_severity == pytest.approx(0.0, abs=1e-9)
    assert lo.objective <= hi.objective + 1e-9


@pytest.mark.parametrize("ids", [(2,), (3, 7)])
def test_builtin_simplex_on_sub_models(case3, conts3, beh, ids):
    sub = conts3.subset(lambda c: c.id in ids)
    m, _ = build_rtp(case3, sub, beh, RtpOptions(s_max=14000, epsilon=0))
    ref = solve_milp(m, SolverOptions(backend="highs", relative_gap=1e-9))
    own = solve_milp(m, SolverOptions(backend="bnb", lp_engine="simplex", relative_gap=1e-9))
    assert own.ok and own.objective == pytest.approx(ref.objective, rel=1e-9)
    assert not m.violations(own.values, tol=1e-6)


@pytest.mark.parametrize("engine", ["highs", pytest.param("simplex", marks=pytest.mark.slow)])
def test_builtin_bnb_solves_case_b(case3, conts3, beh, engine):
    ref = solve_rtp(case3, conts3, beh, RtpOptions(s_max=14000, epsilon=0))
    opts = RtpOptions(s_max=14000, epsilon=0,
                      solver=SolverOptions(backend="bnb", lp_engine=engine, relative_gap=1e-9))
    own = solve_rtp(case3, conts3, beh, opts)
    assert own.ok
    assert own.objective == pytest.approx(ref.objective, rel=1e-7)
    assert own.strategy.preventive == pytest.approx(ref.strategy.preventive, abs=1e-6)
