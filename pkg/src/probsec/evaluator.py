"""Terminal-state oracle and strategy evaluation.

Given fixed preventive and corrective decisions, each (contingency, behaviour)
pair is played out directly: injections are frozen, overloaded branches are
tripped, and the least-severity emergency response (load shedding, limited
ramp-down or disconnection of units) is found by enumerating disconnection
patterns and solving one small LP per pattern. Nothing here touches the RTP
model, so it can be used to audit it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .case import Case, islands
from .formulation import Strategy, overload_margin
from .milp import MilpModel, SolverOptions, quicksum, solve_lp
from .scenarios import FAILING, WORKING, BehaviorSet, Contingency, ContingencySet

_LP = SolverOptions(lp_engine="simplex", feasibility_tol=1e-9)


class StrategyError(ValueError):
    """Strategy violates a named constraint of the case."""

    def __init__(self, constraint: str, detail: str):
        super().__init__(f"{constraint}: {detail}")
        self.constraint = constraint


@dataclass
class TerminalState:
    contingency: int
    behavior: str
    served: dict[str, float]
    gen_output: dict[str, float]
    disconnected: tuple[str, ...]
    removed_lines: tuple[str, ...]
    flows: dict[str, float]
    post_flows: dict[str, float]
    severity: float


@dataclass
class StrategyEvaluation:
    preventive_cost: float
    expected_corrective: float
    expected_severity: float
    severity_table: dict[tuple[int, str], float]
    weights: dict[tuple[int, str], float]
    states: dict[tuple[int, str], TerminalState] = field(repr=False, default_factory=dict)

    @property
    def operating_cost(self) -> float:
        return self.preventive_cost + self.expected_corrective

    @property
    def total_cost(self) -> float:
        return self.operating_cost + self.expected_severity

    def prob_leq(self, s: float) -> float:
        """P(severity <= s) over all (contingency, behaviour) outcomes."""
        return math.fsum(w for k, w in self.weights.items() if self.severity_table[k] <= s)

    def violation_probability(self, s_max: float, tol: float = 1e-6) -> float:
        return math.fsum(w for k, w in self.weights.items() if self.severity_table[k] > s_max + tol)

    def chance_ok(self, s_max: float, epsilon: float) -> bool:
        return self.violation_probability(s_max) <= epsilon + 1e-12


# -- DC flows ------------------------------------------------------------------

def dc_flows(case: Case, injection: np.ndarray, in_service) -> np.ndarray:
    """Line flows for nodal net injections; each island's lowest node absorbs its imbalance."""
    nidx = case.node_index()
    nl = len(case.lines)
    flows = np.zeros(nl)
    live = [k for k in range(nl) if in_service[k]]
    if not live:
        return flows
    B = np.zeros((len(case.nodes), len(case.nodes)))
    for k in live:
        ln = case.lines[k]
        i, j = nidx[ln.from_node], nidx[ln.to_node]
        b = 1.0 / ln.x
        B[i, i] += b
        B[j, j] += b
        B[i, j] -= b
        B[j, i] -= b
    theta = np.zeros(len(case.nodes))
    for isl in islands(case, in_service):
        if len(isl) == 1:
            continue
        rest = isl[1:]
        theta[rest] = np.linalg.solve(B[np.ix_(rest, rest)], injection[rest])
    for k in live:
        ln = case.lines[k]
        flows[k] = (theta[nidx[ln.from_node]] - theta[nidx[ln.to_node]]) / ln.x
    return flows


def _injection(case: Case, gen: np.ndarray) -> np.ndarray:
    nidx = case.node_index()
    inj = np.zeros(len(case.nodes))
    for i, g in enumerate(case.generators):
        inj[nidx[g.node]] += gen[i]
    for d in case.demands:
        inj[nidx[d.node]] -= d.p0
    return inj


def fixed_point(case: Case, c: Contingency, behavior: str, strategy: Strategy) -> np.ndarray:
    """Unit outputs right after the contingency: corrective schedule if it works, preventive otherwise."""
    if behavior == WORKING and not c.is_pseudo:
        return strategy.pc(case, c)
    p0 = strategy.p0(case)
    return np.array([p0[i] * c.a_gen(i) for i in range(len(p0))])


def post_contingency(case: Case, c: Contingency, behavior: str, strategy: Strategy,
                     mode: str = "first_round") -> tuple[np.ndarray, list[bool], np.ndarray]:
    """Return ``(unit outputs, in-service mask, flows before removal)`` after the overload trip rule."""
    gen = fixed_point(case, c, behavior, strategy)
    live = [bool(c.a_line(k)) for k in range(len(case.lines))]
    flows = dc_flows(case, _injection(case, gen), live)
    if behavior == FAILING and c.tau == 1:
        # the network is left intact when control fails after a unit trip
        return gen, live, flows
    cur = flows
    while True:
        over = [k for k in range(len(case.lines))
                if live[k] and abs(cur[k]) > case.lines[k].f_max + overload_margin(case.lines[k].f_max)]
        if not over:
            break
        for k in over:
            live[k] = False
        if mode != "cascade":
            break
        cur = dc_flows(case, _injection(case, gen), live)
    return gen, live, flows


# -- emergency control -------------------------------------------------------------

def _emergency_lp(case: Case, gen: np.ndarray, live, off: set[int]):
    """Maximise served value for a fixed disconnection set; ``None`` if infeasible."""
    m = MilpModel("emergency")
    nidx = case.node_index()
    h = case.horizon_hours
    pg = []
    for i, g in enumerate(case.generators):
        if i in off:
            pg.append(None)
            continue
        lo = max(g.p_min, gen[i] - g.emergency_ramp)
        hi = gen[i]
        if lo > hi + 1e-9:
            return None
        pg.append(m.add_var(f"pg{i}", lo, hi))
    pd = [m.add_var(f"pd{j}", 0.0, d.p0) for j, d in enumerate(case.demands)]
    th = {}
    for isl in islands(case, live):
        for pos, n in enumerate(isl):
            th[n] = m.add_var(f"th{n}", 0.0, 0.0) if pos == 0 else m.add_var(f"th{n}", -math.inf, math.inf)
    fl = {}
    for k, ln in enumerate(case.lines):
        if not live[k]:
            continue
        fl[k] = m.add_var(f"f{k}", -ln.f_max, ln.f_max)
        m.add_constr(fl[k] - (1.0 / ln.x) * (th[nidx[ln.from_node]] - th[nidx[ln.to_node]]), "==", 0.0, f"pf{k}")
    for n in case.nodes:
        i = nidx[n]
        e = quicksum(pg[g] for g in case.gens_at(n) if pg[g] is not None)
        e -= quicksum(pd[j] for j in case.demands_at(n))
        for k, ln in enumerate(case.lines):
            if k in fl:
                if nidx[ln.from_node] == i:
                    e -= fl[k]
                elif nidx[ln.to_node] == i:
                    e += fl[k]
        m.add_constr(e, "==", 0.0, f"bal{n}")
    m.set_objective(quicksum(-h * d.voll * pd[j] for j, d in enumerate(case.demands)))
    sol = solve_lp(m, _LP)
    if not sol.ok:
        return None
    shed = sum(h * d.voll * d.p0 for d in case.demands) + sol.objective
    out = np.array([sol[v] if v is not None else 0.0 for v in pg])
    served = np.array([sol[v] for v in pd])
    flows = np.array([sol[fl[k]] if k in fl else 0.0 for k in range(len(case.lines))])
    return max(shed, 0.0), out, served, flows


def terminal_state(case: Case, contingency: Contingency, behavior: str, strategy: Strategy,
                   mode: str = "first_round") -> TerminalState:
    if mode not in ("first_round", "cascade"):
        raise ValueError(f"unknown removal mode {mode!r}")
    gen, live, post = post_contingency(case, contingency, behavior, strategy, mode)
    avail = [i for i in range(len(case.generators)) if contingency.a_gen(i)]
    always_off = {i for i in range(len(case.generators)) if i not in avail}
    best = None
    # cheapest disconnection sets first; stop once the fee alone cannot beat the incumbent
    patterns = []
    for r in range(len(avail) + 1):
        for combo in itertools.combinations(avail, r):
            patterns.append((sum(case.generators[i].w for i in combo), combo))
    patterns.sort(key=lambda p: (p[0], len(p[1]), p[1]))
    for fee, combo in patterns:
        if best is not None and fee >= best[0] - 1e-9:
            continue
        res = _emergency_lp(case, gen, live, always_off | set(combo))
        if res is None:
            continue
        shed, out, served, flows = res
        total = shed + fee
        if best is None or total < best[0] - 1e-9:
            best = (total, combo, out, served, flows)
    if best is None:
        raise RuntimeError("emergency problem infeasible: disconnecting every unit must always be feasible")
    total, combo, out, served, flows = best
    return TerminalState(
        contingency=contingency.id,
        behavior=behavior,
        served={d.id: float(served[j]) for j, d in enumerate(case.demands)},
        gen_output={g.id: float(out[i]) for i, g in enumerate(case.generators)},
        disconnected=tuple(case.generators[i].id for i in combo),
        removed_lines=tuple(ln.id for k, ln in enumerate(case.lines) if contingency.a_line(k) and not live[k]),
        flows={ln.id: float(flows[k]) for k, ln in enumerate(case.lines)},
        post_flows={ln.id: float(post[k]) for k, ln in enumerate(case.lines)},
        severity=round(float(total), 9) + 0.0,
    )


def severity(terminal: TerminalState, case: Case) -> float:
    """Unserved energy at VOLL plus the fixed fee of every disconnected unit."""
    shed = sum(d.voll * (d.p0 - terminal.served.get(d.id, 0.0)) for d in case.demands) * case.horizon_hours
    return shed + sum(g.w for g in case.generators if g.id in terminal.disconnected)


# -- strategy checks and aggregation --------------------------------------------------

def validate_strategy(case: Case, conts: ContingencySet, strategy: Strategy, tol: float = 1e-6) -> None:
    """Raise :class:`StrategyError` naming the first violated constraint."""
    G = case.generators
    for g in G:
        if g.id not in strategy.preventive:
            raise StrategyError(f"pre_uppgen[{g.id}]", "no preventive set-point given")
    p0 = strategy.p0(case)
    for i, g in enumerate(G):
        if p0[i] > g.p_max + tol:
            raise StrategyError(f"pre_uppgen[{g.id}]", f"{p0[i]} MW above p_max {g.p_max}")
        if p0[i] < g.p_min - tol:
            raise StrategyError(f"pre_lowgen[{g.id}]", f"{p0[i]} MW below p_min {g.p_min}")
    if abs(p0.sum() - case.total_load()) > tol * max(1.0, case.total_load()):
        raise StrategyError("pre_pbal", f"generation {p0.sum()} MW vs load {case.total_load()} MW")
    f0 = dc_flows(case, _injection(case, p0), [True] * len(case.lines))
    for k, ln in enumerate(case.lines):
        if abs(f0[k]) > ln.f_max + tol:
            raise StrategyError(f"pre_posflow[{ln.id}]", f"pre-contingency flow {f0[k]:.4f} MW beyond {ln.f_max}")
    known = {c.id for c in conts.outages}
    for cid, row in strategy.corrective.items():
        if cid not in known:
            raise StrategyError(f"corrective[{cid}]", "no such outage contingency")
    for c in conts.outages:
        row = strategy.corrective.get(c.id, {})
        pc = strategy.pc(case, c)
        for i, g in enumerate(G):
            tag = f"{c.id},{g.id}"
            if not c.a_gen(i):
                if abs(row.get(g.id, 0.0)) > tol:
                    raise StrategyError(f"post_uppgen[{tag}]", "outaged unit given a corrective set-point")
                continue
            if pc[i] > g.p_max + tol:
                raise StrategyError(f"post_uppgen[{tag}]", f"{pc[i]} MW above p_max")
            if pc[i] < g.p_min - tol:
                raise StrategyError(f"post_lowgen[{tag}]", f"{pc[i]} MW below p_min")
            if pc[i] - p0[i] > g.ramp_up + tol:
                raise StrategyError(f"post_uppcoup[{tag}]", f"ramp up {pc[i] - p0[i]} MW beyond {g.ramp_up}")
            if p0[i] - pc[i] > g.ramp_down + tol:
                raise StrategyError(f"post_dwncoup[{tag}]", f"ramp down {p0[i] - pc[i]} MW beyond {g.ramp_down}")
        if abs(pc.sum() - case.total_load()) > tol * max(1.0, case.total_load()):
            raise StrategyError(f"post_pbal_one[{c.id}]", f"corrective generation {pc.sum()} MW vs load")


def corrective_cost(case: Case, c: Contingency, strategy: Strategy) -> float:
    """Signed re-dispatch cost; an outaged unit counts as moved to zero."""
    p0, pc = strategy.p0(case), strategy.pc(case, c)
    return case.horizon_hours * sum(g.cost_r * (pc[i] - p0[i]) for i, g in enumerate(case.generators))


def evaluate_strategy(case: Case, conts: ContingencySet, behaviors: BehaviorSet, strategy: Strategy,
                      mode: str = "first_round", validate: bool = True) -> StrategyEvaluation:
    if validate:
        validate_strategy(case, conts, strategy)
    p0 = strategy.p0(case)
    prev = case.horizon_hours * float(sum(g.cost * p0[i] for i, g in enumerate(case.generators)))
    corr = math.fsum(c.pi * corrective_cost(case, c, strategy) for c in conts.outages)
    table, weights, states = {}, {}, {}
    for c in conts:
        for b, pb in behaviors.items():
            st = terminal_state(case, c, b, strategy, mode)
            states[(c.id, b)] = st
            table[(c.id, b)] = st.severity
            weights[(c.id, b)] = c.pi * pb
    exp = math.fsum(weights[k] * table[k] for k in table)
    return StrategyEvaluation(prev, corr, exp, table, weights, states)


def area_split(case: Case, state: TerminalState, node_area: dict[int, str]) -> dict[str, float]:
    """Severity of a terminal state attributed to the area of each shed demand or lost unit."""
    out = {a: 0.0 for a in sorted(set(node_area.values()))}
    h = case.horizon_hours
    for d in case.demands:
        out[node_area[d.node]] += h * d.voll * (d.p0 - state.served[d.id])
    for g in case.generators:
        if g.id in state.disconnected:
            out[node_area[g.node]] += g.w
    return {a: round(v, 9) + 0.0 for a, v in out.items()}
