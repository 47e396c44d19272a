import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from probsec.evaluator import (
    StrategyError,
    area_split,
    corrective_cost,
    dc_flows,
    evaluate_strategy,
    post_contingency,
    severity,
    terminal_state,
    validate_strategy,
)
from probsec.formulation import RtpOptions, Strategy, build_rtp, fix_strategy
from probsec.milp import SolverOptions, quicksum, solve_milp

CASE_A = Strategy(
    {"g1": 77.5, "g2": 10.0, "g3": 12.5},
    {2: {"g1": 55.0, "g2": 10.0, "g3": 35.0}, 3: {"g1": 45.0, "g2": 10.0, "g3": 45.0},
     4: {"g1": 45.0, "g2": 10.0, "g3": 45.0}, 5: {"g2": 50.0, "g3": 50.0},
     6: {"g1": 82.5, "g3": 17.5}, 7: {"g1": 65.0, "g2": 35.0}},
)
CASE_B = Strategy({"g1": 45.0, "g2": 10.0, "g3": 45.0}, CASE_A.corrective)


def test_dc_flows_triangle(case3):
    # 100 MW from node 1 to node 3 over a unit-reactance triangle: 2/3 direct, 1/3 around
    inj = np.array([100.0, 0.0, -100.0])
    f = dc_flows(case3, inj, [True, True, True])
    assert f == pytest.approx([100 / 3, 200 / 3, 100 / 3])
    f = dc_flows(case3, inj, [False, True, True])
    assert f == pytest.approx([0, 100, 0])


def test_dc_flows_islanded(case3):
    # node 1 cut off: the remaining island 2-3 carries only its own transfer
    f = dc_flows(case3, np.array([50.0, 20.0, -20.0]), [False, False, True])
    assert f == pytest.approx([0, 0, 20])


def test_case_a_table(case3, conts3, beh):
    ev = evaluate_strategy(case3, conts3, beh, CASE_A)
    fail = [ev.severity_table[(c, "failing")] for c in range(2, 8)]
    assert fail == [27250, 34250, 34250, 23250, 3000, 3750]
    assert all(ev.severity_table[(c, "working")] == 0 for c in range(1, 8))
    assert ev.preventive_cost == pytest.approx(2325.0)
    assert ev.expected_corrective == pytest.approx(0.54825)
    assert ev.expected_severity == pytest.approx(14.6985)
    assert not ev.chance_ok(14000, 0.0)
    # violations: three line outages (1.8e-5 each) and unit 1 (3.8e-4), all with failing control
    assert ev.violation_probability(14000) == pytest.approx(4.34e-4)
    assert ev.chance_ok(14000, 1e-3) and not ev.chance_ok(14000, 1e-4)


def test_line_two_failing_narrative(case3, conts3):
    # both surviving branches overload, every node islands; units 1 and 2 cannot stay above p_min
    st_ = terminal_state(case3, conts3.by_id(3), "failing", CASE_A)
    assert set(st_.removed_lines) == {"l1", "l3"}
    assert set(st_.disconnected) == {"g1", "g2"}
    assert st_.served["d1"] == pytest.approx(12.5)
    assert st_.severity == severity(st_, case3) == 34250


def test_case_b_table(case3, conts3, beh):
    ev = evaluate_strategy(case3, conts3, beh, CASE_B)
    fail = [ev.severity_table[(c, "failing")] for c in range(2, 8)]
    assert fail == [0, 0, 0, 13500, 3000, 13500]
    assert ev.chance_ok(14000, 0.0)
    _, live, flows = post_contingency(case3, conts3.by_id(2), "failing", CASE_B)
    assert flows == pytest.approx([0, 45, 10])
    assert live == [False, True, True]


def test_preventive_only_strategy_has_no_corrective_cost(case3, conts3, beh):
    lines_only = conts3.subset(lambda c: c.kind == "line")
    st_ = Strategy(dict(CASE_B.preventive), {})
    ev = evaluate_strategy(case3, lines_only, beh, st_)
    assert ev.expected_corrective == 0.0


def test_outaged_unit_counts_as_moved_to_zero(case3, conts3):
    # unit 1 lost at 77.5 MW; 2 and 3 pick up 40 and 37.5 at 8 and 7 EUR/MWh
    c = conts3.by_id(5)
    assert corrective_cost(case3, c, CASE_A) == pytest.approx(-5 * 77.5 + 8 * 40 + 7 * 37.5)


@pytest.mark.parametrize("edit,name", [
    (lambda s: s.preventive.update(g1=120.0), "pre_uppgen[g1]"),
    (lambda s: s.preventive.update(g2=5.0, g1=82.5), "pre_lowgen[g2]"),
    (lambda s: s.preventive.update(g1=70.0), "pre_pbal"),
    (lambda s: s.corrective[5].update(g1=10.0), "post_uppgen[5,g1]"),
    (lambda s: s.corrective[2].update(g2=5.0, g3=40.0), "post_lowgen[2,g2]"),
    (lambda s: s.corrective[2].update(g1=60.0), "post_pbal_one[2]"),
    (lambda s: s.corrective.update({9: {}}), "corrective[9]"),
])
def test_invalid_strategy_names_constraint(case3, conts3, edit, name):
    st_ = Strategy(dict(CASE_A.preventive), {k: dict(v) for k, v in CASE_A.corrective.items()})
    edit(st_)
    with pytest.raises(StrategyError) as e:
        validate_strategy(case3, conts3, st_)
    assert e.value.constraint == name


def test_preflow_violation_named(case3, conts3):
    # 90 MW at node 1 to node 3 puts 60 MW on the direct line
    st_ = Strategy({"g1": 80.0, "g2": 10.0, "g3": 10.0}, {})
    with pytest.raises(StrategyError) as e:
        validate_strategy(case3, conts3.subset(lambda c: False), st_)
    assert e.value.constraint.startswith("pre_posflow")


def test_ramp_limits_named(case6):
    from probsec.scenarios import build_contingencies

    conts = build_contingencies(case6)
    pre = {"g1": 100.0, "g2": 10.0, "g3": 35.0, "g4": 10.0, "g5": 5.0}
    # g2 may only ramp up by 40 MW
    with pytest.raises(StrategyError) as e:
        validate_strategy(case6, conts, Strategy(pre, {10: {"g2": 60.0, "g3": 50.0, "g4": 45.0, "g5": 5.0}}))
    assert e.value.constraint == "post_uppcoup[10,g2]"


def test_cascade_mode_never_cheaper_to_keep_lines(case3, conts3):
    a = terminal_state(case3, conts3.by_id(3), "failing", CASE_A, "first_round")
    b = terminal_state(case3, conts3.by_id(3), "failing", CASE_A, "cascade")
    assert set(a.removed_lines) <= set(b.removed_lines)
    with pytest.raises(ValueError):
        terminal_state(case3, conts3.by_id(3), "failing", CASE_A, "sometimes")


def test_area_split_sums(case6):
    from probsec.scenarios import behavior_set, build_contingencies

    conts = build_contingencies(case6)
    pre = {"g1": 100.0, "g2": 10.0, "g3": 35.0, "g4": 10.0, "g5": 5.0}
    ev = evaluate_strategy(case6, conts, behavior_set(0.2), Strategy(pre, {}), validate=False)
    na = {1: "A", 2: "A", 3: "A", 4: "B", 5: "B", 6: "B"}
    for st_ in ev.states.values():
        split = area_split(case6, st_, na)
        assert sum(split.values()) == pytest.approx(st_.severity, abs=1e-6)


# -- model vs oracle on random strategies ----------------------------------------

def _balanced_strategy(case, conts, g2, g3):
    p0 = {"g1": 100.0 - g2 - g3, "g2": g2, "g3": g3}
    corr = {}
    for c in conts.outages:
        row = {g.id: p0[g.id] for i, g in enumerate(case.generators) if c.a_gen(i)}
        if c.kind == "gen":
            lost = p0[case.generators[c.index].id]
            for gid in sorted(row):
                g = case.generators[case.gen(gid)]
                take = min(lost, g.p_max - row[gid], g.ramp_up)
                row[gid] += take
                lost -= take
            assume(lost < 1e-9)
        corr[c.id] = row
    return Strategy(p0, corr)


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(g2=st.integers(10, 80).map(float), g3=st.integers(10, 50).map(float))
def test_model_never_below_oracle(case3, conts3, beh, g2, g3):
    assume(100.0 - g2 - g3 >= 10.0)
    strat = _balanced_strategy(case3, conts3, g2, g3)
    try:
        validate_strategy(case3, conts3, strat)
    except StrategyError:
        assume(False)
    ev = evaluate_strategy(case3, conts3, beh, strat)
    m, v = build_rtp(case3, conts3, beh, RtpOptions(allow_relax_working=True, chance=False))
    fix_strategy(m, v, strat, conts3)
    m.set_objective(quicksum(v[("s", c, b[0])] for c, b in v.blocks))
    sol = solve_milp(m, SolverOptions(backend="highs", relative_gap=1e-12))
    assert sol.ok
    for c, b in v.blocks:
        model_s = sol[v[("s", c, b[0])]]
        assert ev.severity_table[(c, b)] <= model_s + 1e-4
        assert ev.severity_table[(c, b)] == pytest.approx(model_s, abs=1e-4)
