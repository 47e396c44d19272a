"""Real-time security management MILP: preventive dispatch, corrective
re-dispatch per contingency, terminal states per (contingency, behaviour) and
a chance constraint on severity.

Blocks are built for outage contingencies only; the no-outage event leaves the
pre-contingency state in place, whose limits are hard, so its severity is zero.
Line flows use the DC approximation. Products of binaries with continuous
variables go through the kernel linearizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .case import Case
from .milp import (
    INF,
    LinExpr,
    MilpModel,
    MilpSolution,
    SolverOptions,
    Status,
    linearize_bin_times_free,
    linearize_bin_times_nonneg,
    quicksum,
    solve_milp,
)
from .scenarios import FAILING, WORKING, BehaviorSet, Contingency, ContingencySet

BEHAVIORS = (WORKING, FAILING)
_B = {WORKING: "w", FAILING: "f"}


class FormulationError(ValueError):
    pass


@dataclass
class Fees:
    """Settlement fees per generator id: (up, down) preventive and corrective."""

    up: dict[str, float] = field(default_factory=dict)
    down: dict[str, float] = field(default_factory=dict)
    up_r: dict[str, float] = field(default_factory=dict)
    down_r: dict[str, float] = field(default_factory=dict)


@dataclass
class RtpOptions:
    s_max: float = INF
    epsilon: float = 0.0
    allow_relax_working: bool = False
    allow_relax_failing: bool = True
    # "net_cost" or "incremental"
    objective: str = "net_cost"
    fees: Fees | None = None
    include_severity: bool = True
    chance: bool = True
    # re-solve with the dispatch fixed, minimising severities block by block
    severity_pass: bool = True
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(backend="highs", relative_gap=1e-9))

    def __post_init__(self):
        if not self.s_max >= 0:
            raise FormulationError("s_max must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise FormulationError("epsilon must be in [0, 1]")
        if self.objective not in ("net_cost", "incremental"):
            raise FormulationError(f"unknown objective variant {self.objective!r}")


@dataclass
class _Scope:
    """Restrictions used by area subproblems; the default is the whole system."""

    fixed_gens: dict[int, float] = field(default_factory=dict)
    cost_gens: frozenset[int] | None = None
    sev_demands: frozenset[int] | None = None
    sev_gens: frozenset[int] | None = None
    frozen_lines: frozenset[int] = frozenset()
    # outside the operator's jurisdiction: limits may be relaxed in every behaviour
    unmonitored_lines: frozenset[int] = frozenset()


@dataclass
class Strategy:
    """Preventive MW per generator id and corrective MW per contingency id (outaged unit absent)."""

    preventive: dict[str, float]
    corrective: dict[int, dict[str, float]]

    def p0(self, case: Case) -> np.ndarray:
        return np.array([self.preventive[g.id] for g in case.generators])

    def pc(self, case: Case, c: Contingency) -> np.ndarray:
        row = self.corrective.get(c.id)
        out = np.zeros(len(case.generators))
        for i, g in enumerate(case.generators):
            if c.a_gen(i):
                out[i] = row[g.id] if row is not None and g.id in row else self.preventive[g.id]
        return out

    def rounded(self, nd: int = 6) -> "Strategy":
        r = lambda v: round(v, nd) + 0.0
        return Strategy({k: r(v) for k, v in self.preventive.items()},
                        {c: {k: r(v) for k, v in row.items()} for c, row in self.corrective.items()})


class VariableMap(dict):
    """``(symbol, *indices) -> Var`` for every model variable, plus objective parts."""

    def __init__(self):
        super().__init__()
        self.parts: dict[str, LinExpr] = {}
        self.blocks: list[tuple[int, str]] = []


@dataclass
class RtpResult:
    model: MilpModel
    vmap: VariableMap
    solution: MilpSolution
    strategy: Strategy | None
    severities: dict[tuple[int, str], float]
    preventive_cost: float
    expected_corrective: float
    expected_severity: float
    post_flows: dict[tuple[int, str], list[float]]
    removed: dict[tuple[int, str], list[str]]

    @property
    def ok(self) -> bool:
        return self.solution.ok

    @property
    def objective(self) -> float:
        return self.solution.objective


def big_m(case: Case) -> dict[str, float]:
    """Big-M constants per constraint class, derived from case data."""
    supply = sum(g.p_max for g in case.generators) + case.total_load()
    x_sum = sum(ln.x for ln in case.lines) or 1.0
    f_min = min((ln.f_max for ln in case.lines), default=1.0)
    return {
        # DC flows are acyclic, so no line carries more than the total supply
        "flow": supply,
        "angle": supply * x_sum,
        "lambda": 1.0 + supply / f_min,
        "gen": max(g.p_max for g in case.generators),
        "severity": case.max_severity(),
    }


def overload_margin(f_max: float) -> float:
    """Flows above ``f_max + margin`` count as overloads (shared with the evaluator)."""
    return 1e-3 * f_max


# -- model construction -------------------------------------------------------

def _build(case: Case, conts: ContingencySet, behaviors: BehaviorSet, opts: RtpOptions,
           scope: _Scope | None = None) -> tuple[MilpModel, VariableMap]:
    scope = scope or _Scope()
    if len(dict(behaviors.items())) != 2:
        raise FormulationError("behaviour set must have exactly two elements")
    for c in conts:
        if c.pi is None or math.isnan(c.pi):
            raise FormulationError(f"contingency {c.id} has no probability")
    m = MilpModel(f"rtp-{case.name}")
    V = VariableMap()
    M = big_m(case)
    for k, v in M.items():
        m.register_big_m(k, v)
    h = case.horizon_hours
    N, L, G, D = case.nodes, case.lines, case.generators, case.demands
    nidx = case.node_index()
    beta = case.incidence()
    slack = nidx[case.slack]
    Ma = M["angle"]

    def add(key, lb=0.0, ub=INF, binary=False):
        sym, *ix = key
        name = f"{sym}[{','.join(str(i) for i in ix)}]"
        v = m.add_var(name, lb, ub, binary)
        V[key] = v
        return v

    # -- pre-contingency state
    P0 = [add(("P0", g.id)) for g in G]
    th0 = [add(("theta0", n), *((0.0, 0.0) if i == slack else (-Ma, Ma))) for i, n in enumerate(N)]
    f0 = [add(("f0", ln.id), -INF, INF) for ln in L]
    for g, val in scope.fixed_gens.items():
        m.fix(P0[g], val)
    for i, n in enumerate(N):
        e = quicksum(P0[g] for g in case.gens_at(n)) - quicksum(beta[i, k] * f0[k] for k in range(len(L)) if beta[i, k])
        m.add_constr(e, "==", sum(D[d].p0 for d in case.demands_at(n)), f"pre_pbal[{n}]")
    for k, ln in enumerate(L):
        e = f0[k] - (1.0 / ln.x) * (th0[nidx[ln.from_node]] - th0[nidx[ln.to_node]])
        m.add_constr(e, "==", 0.0, f"pre_pf[{ln.id}]")
        m.add_constr(f0[k], "<=", ln.f_max, f"pre_posflow[{ln.id}]")
        m.add_constr(-f0[k], "<=", ln.f_max, f"pre_negflow[{ln.id}]")
    for i, g in enumerate(G):
        m.add_constr(P0[i], "<=", g.p_max, f"pre_uppgen[{g.id}]")
        m.add_constr(-P0[i], "<=", -g.p_min, f"pre_lowgen[{g.id}]")

    cost_gens = scope.cost_gens if scope.cost_gens is not None else frozenset(range(len(G)))
    sev_d = scope.sev_demands if scope.sev_demands is not None else frozenset(range(len(D)))
    sev_g = scope.sev_gens if scope.sev_gens is not None else frozenset(range(len(G)))

    V.parts["preventive"] = quicksum(h * G[i].cost * P0[i] for i in sorted(cost_gens))
    corr = LinExpr()
    sev_term = LinExpr()
    chance = LinExpr()

    for c in conts.outages:
        a_l = [c.a_line(k) for k in range(len(L))]
        a_g = [c.a_gen(i) for i in range(len(G))]
        # -- corrective re-dispatch
        Pc = []
        for i, g in enumerate(G):
            v = add(("Pc", c.id, g.id))
            Pc.append(v)
            if not a_g[i]:
                m.fix(v, 0.0)
            elif i in scope.fixed_gens:
                m.fix(v, scope.fixed_gens[i])
            tag = f"{c.id},{g.id}"
            m.add_constr(v, "<=", a_g[i] * g.p_max, f"post_uppgen[{tag}]")
            m.add_constr(-v, "<=", -a_g[i] * g.p_min, f"post_lowgen[{tag}]")
            m.add_constr(v - a_g[i] * P0[i], "<=", a_g[i] * g.ramp_up, f"post_uppcoup[{tag}]")
            m.add_constr(a_g[i] * P0[i] - v, "<=", a_g[i] * g.ramp_down, f"post_dwncoup[{tag}]")
        corr += c.pi * quicksum(h * G[i].cost_r * (Pc[i] - P0[i]) for i in sorted(cost_gens))

        for b in BEHAVIORS:
            pb = behaviors[b]
            tb = f"{c.id},{_B[b]}"
            V.blocks.append((c.id, b))
            relax = opts.allow_relax_working if b == WORKING else opts.allow_relax_failing
            # -- post-contingency state
            th = [add(("theta", c.id, _B[b], n), *((0.0, 0.0) if i == slack else (-Ma, Ma))) for i, n in enumerate(N)]
            f = [add(("f", c.id, _B[b], ln.id), -INF, INF) for ln in L]
            lam = []
            for k, ln in enumerate(L):
                free = (relax or k in scope.unmonitored_lines) and a_l[k] and k not in scope.frozen_lines
                lam.append(add(("lam", c.id, _B[b], ln.id), 0.0, 1.0 if free else 0.0, binary=True))
            if b == FAILING:
                delta = [add(("delta", c.id, _B[b], n), -INF, INF) for n in N]
            for i, n in enumerate(N):
                flows = quicksum(beta[i, k] * f[k] for k in range(len(L)) if beta[i, k])
                load = sum(D[d].p0 for d in case.demands_at(n))
                gens = case.gens_at(n)
                if b == WORKING:
                    m.add_constr(quicksum(Pc[g] for g in gens) - flows, "==", load, f"post_pbal_one[{tb},{n}]")
                else:
                    e = quicksum(a_g[g] * P0[g] for g in gens) - flows + delta[i]
                    m.add_constr(e, "==", load, f"post_pbal_two[{tb},{n}]")
                    # outaged units drop out of the mismatch, otherwise the slack could never balance
                    d_e = delta[i] - c.tau * quicksum(Pc[g] - a_g[g] * P0[g] for g in gens)
                    m.add_constr(d_e, "==", 0.0, f"delta[{tb},{n}]")
            for k, ln in enumerate(L):
                t = f"{tb},{ln.id}"
                diff = th[nidx[ln.from_node]] - th[nidx[ln.to_node]]
                m.add_constr(f[k] - (a_l[k] / ln.x) * diff, "==", 0.0, f"relax_pf[{t}]")
                Mf = M["flow"]
                m.add_constr(f[k] - a_l[k] * Mf * lam[k], "<=", a_l[k] * ln.f_max, f"relax_posflow[{t}]")
                m.add_constr(-f[k] - a_l[k] * Mf * lam[k], "<=", a_l[k] * ln.f_max, f"relax_negflow[{t}]")
                if m.ub[lam[k].index] > 0:
                    p = add(("p", c.id, _B[b], ln.id), binary=True)
                    eps = overload_margin(ln.f_max)
                    ml = M["lambda"]
                    m.add_constr(f[k] - Mf * p, "<=", 0.0, f"flow_sign_one[{t}]")
                    m.add_constr(-f[k] + Mf * p, "<=", Mf, f"flow_sign_two[{t}]")
                    m.add_constr(lam[k] - f[k] / (ln.f_max + eps) + ml * p, "<=", ml, f"up_lam_one[{t}]")
                    m.add_constr(lam[k] + f[k] / (ln.f_max + eps) - ml * p, "<=", 0.0, f"up_lam_two[{t}]")

            # -- terminal state after emergency control
            thh = [add(("thetahat", c.id, _B[b], n), -Ma, Ma) for n in N]
            fh = [add(("fhat", c.id, _B[b], ln.id), -INF, INF) for ln in L]
            Pg = [add(("Phat_g", c.id, _B[b], g.id)) for g in G]
            Pd = [add(("Phat_d", c.id, _B[b], d.id)) for d in D]
            y = []
            for i, g in enumerate(G):
                y.append(add(("y", c.id, _B[b], g.id), 0.0, 1.0 if a_g[i] else 0.0, binary=True))
            for i, n in enumerate(N):
                e = (quicksum(Pg[g] for g in case.gens_at(n))
                     - quicksum(beta[i, k] * fh[k] for k in range(len(L)) if beta[i, k])
                     - quicksum(Pd[d] for d in case.demands_at(n)))
                m.add_constr(e, "==", 0.0, f"low_pbal[{tb},{n}]")
            # failing control after a unit trip keeps every branch in service
            removable = not (b == FAILING and c.tau == 1)
            kind = "" if b == WORKING else "2"
            for k, ln in enumerate(L):
                t = f"{tb},{ln.id}"
                i_fr, i_to = nidx[ln.from_node], nidx[ln.to_node]
                diff = thh[i_fr] - thh[i_to]
                if removable and m.ub[lam[k].index] > 0:
                    tf = linearize_bin_times_free(m, lam[k], thh[i_fr], Ma, f"thetatilde[{t},{ln.from_node}]")
                    tt = linearize_bin_times_free(m, lam[k], thh[i_to], Ma, f"thetatilde[{t},{ln.to_node}]")
                    V[("thetatilde", c.id, _B[b], ln.id, ln.from_node)] = tf
                    V[("thetatilde", c.id, _B[b], ln.id, ln.to_node)] = tt
                    m.add_constr(fh[k] - (a_l[k] / ln.x) * (diff - tf + tt), "==", 0.0, f"low_pf{kind}[{t}]")
                    cap = a_l[k] * ln.f_max
                    m.add_constr(fh[k] + cap * lam[k], "<=", cap, f"low_posflow{kind}[{t}]")
                    m.add_constr(-fh[k] + cap * lam[k], "<=", cap, f"low_negflow{kind}[{t}]")
                else:
                    m.add_constr(fh[k] - (a_l[k] / ln.x) * diff, "==", 0.0, f"low_pf{kind}[{t}]")
                    m.add_constr(fh[k], "<=", a_l[k] * ln.f_max, f"low_posflow{kind}[{t}]")
                    m.add_constr(-fh[k], "<=", a_l[k] * ln.f_max, f"low_negflow{kind}[{t}]")
            for j, d in enumerate(D):
                m.add_constr(Pd[j], "<=", d.p0, f"low_dem[{tb},{d.id}]")
            for i, g in enumerate(G):
                t = f"{tb},{g.id}"
                ref = Pc[i] if b == WORKING else P0[i]
                if a_g[i]:
                    yp = linearize_bin_times_nonneg(m, y[i], ref, M["gen"], f"Ptilde[{t}]")
                    V[("Ptilde", c.id, _B[b], g.id)] = yp
                    # P_hat <= (1-y) ref ;  P_hat >= (1-y)(ref - dPe) ;  P_hat >= (1-y) p_min
                    m.add_constr(Pg[i] - ref + yp, "<=", 0.0, f"low_uppcoup{kind}[{t}]")
                    m.add_constr(-Pg[i] + ref - yp + g.emergency_ramp * y[i], "<=", g.emergency_ramp,
                                 f"low_dwncoup{kind}[{t}]")
                    m.add_constr(-Pg[i] - g.p_min * y[i], "<=", -g.p_min, f"low_mingen[{t}]")
                else:
                    m.add_constr(Pg[i], "<=", 0.0, f"low_uppcoup{kind}[{t}]")
                    m.add_constr(-Pg[i], "<=", 0.0, f"low_dwncoup{kind}[{t}]")
                    m.add_constr(-Pg[i], "<=", 0.0, f"low_mingen[{t}]")
            # -- severity and chance constraint
            s = add(("s", c.id, _B[b]), 0.0, M["severity"])
            shed = quicksum(h * D[j].voll * (D[j].p0 - Pd[j]) for j in sorted(sev_d))
            disc = quicksum(G[i].w * y[i] for i in sorted(sev_g))
            m.add_constr(-s + shed + disc, "<=", 0.0, f"sev[{tb}]")
            sev_term += c.pi * pb * s
            if opts.chance:
                gam = add(("gamma", c.id, _B[b]), binary=True)
                m.add_constr(s - M["severity"] * gam, "<=", opts.s_max if math.isfinite(opts.s_max) else M["severity"],
                             f"chance_one[{tb}]")
                chance += c.pi * pb * gam

    if opts.chance and chance.terms:
        m.add_constr(chance, "<=", opts.epsilon, "chance_two")
    V.parts["corrective"] = corr
    V.parts["severity"] = sev_term
    if opts.objective == "incremental":
        objective_incremental(m, V, case, conts, "preventive", opts.fees, scope)
        objective_incremental(m, V, case, conts, "corrective", opts.fees, scope)
    _set_objective(m, V, opts.include_severity)
    return m, V


def _set_objective(m: MilpModel, V: VariableMap, include_severity: bool = True) -> None:
    obj = V.parts["preventive"] + V.parts["corrective"]
    if include_severity:
        obj = obj + V.parts["severity"]
    m.set_objective(obj)
    V.include_severity = include_severity


def objective_incremental(model: MilpModel, vmap: VariableMap, case: Case, conts: ContingencySet,
                          kind: str, fees: Fees | None = None, scope: _Scope | None = None) -> MilpModel:
    """Replace the preventive or corrective cost term by deviation-fee settlement.

    Preventive: fees on ``max(P0 - PM, 0)`` and ``max(PM - P0, 0)`` against the
    settled market schedule ``p_market``. Corrective: fees on upward and
    downward moves of available units away from ``P0``. Missing fees default
    to the unit's energy price (preventive) or corrective price.
    """
    fees = fees or Fees()
    scope = scope or _Scope()
    G = case.generators
    h = case.horizon_hours
    gens = sorted(scope.cost_gens) if scope.cost_gens is not None else range(len(G))
    if kind == "preventive":
        term = LinExpr()
        for i in gens:
            g = G[i]
            if g.p_market is None:
                raise FormulationError(f"generator {g.id} has no market schedule p_market")
            up = model.add_var(f"Pup0[{g.id}]")
            dn = model.add_var(f"Pdn0[{g.id}]")
            vmap[("Pup0", g.id)], vmap[("Pdn0", g.id)] = up, dn
            p0 = vmap[("P0", g.id)]
            model.add_constr(up - p0, ">=", -g.p_market, f"appb_up[{g.id}]")
            model.add_constr(dn + p0, ">=", g.p_market, f"appb_dn[{g.id}]")
            term += h * (fees.up.get(g.id, g.cost) * up + fees.down.get(g.id, g.cost) * dn)
        vmap.parts["preventive"] = term
    elif kind == "corrective":
        term = LinExpr()
        for c in conts.outages:
            for i in gens:
                g = G[i]
                if not c.a_gen(i):
                    continue
                up = model.add_var(f"Pupc[{c.id},{g.id}]")
                dn = model.add_var(f"Pdnc[{c.id},{g.id}]")
                vmap[("Pupc", c.id, g.id)], vmap[("Pdnc", c.id, g.id)] = up, dn
                d = vmap[("Pc", c.id, g.id)] - vmap[("P0", g.id)]
                model.add_constr(up - d, ">=", 0.0, f"appb_upc[{c.id},{g.id}]")
                model.add_constr(dn + d, ">=", 0.0, f"appb_dnc[{c.id},{g.id}]")
                term += c.pi * h * (fees.up_r.get(g.id, g.cost_r) * up + fees.down_r.get(g.id, g.cost_r) * dn)
        vmap.parts["corrective"] = term
    else:
        raise FormulationError(f"unknown cost kind {kind!r}")
    _set_objective(model, vmap, getattr(vmap, "include_severity", True))
    return model


def build_rtp(case: Case, conts: ContingencySet, behaviors: BehaviorSet,
              opts: RtpOptions | None = None) -> tuple[MilpModel, VariableMap]:
    return _build(case, conts, behaviors, opts or RtpOptions())


def case_a_options(base: RtpOptions | None = None) -> RtpOptions:
    """N-1 benchmark: no severity term, no chance pair, working limits hard, failing limits relaxable."""
    base = base or RtpOptions()
    return RtpOptions(s_max=INF, epsilon=1.0, allow_relax_working=False, allow_relax_failing=True,
                      objective=base.objective, fees=base.fees, include_severity=False, chance=False,
                      severity_pass=base.severity_pass, solver=base.solver)


def build_case_a(case: Case, conts: ContingencySet, behaviors: BehaviorSet,
                 opts: RtpOptions | None = None) -> tuple[MilpModel, VariableMap]:
    return _build(case, conts, behaviors, case_a_options(opts))


# -- solution mapping ---------------------------------------------------------

def extract_strategy(sol: MilpSolution, vmap: VariableMap, case: Case, conts: ContingencySet,
                     nd: int = 9) -> Strategy:
    if not sol.ok:
        raise FormulationError(f"cannot extract a strategy from a {sol.status.value} solution")
    r = lambda v: round(float(v), nd) + 0.0
    pre = {g.id: r(sol[vmap[("P0", g.id)]]) for g in case.generators}
    corr = {}
    for c in conts.outages:
        corr[c.id] = {g.id: r(sol[vmap[("Pc", c.id, g.id)]]) for i, g in enumerate(case.generators) if c.a_gen(i)}
    return Strategy(pre, corr)


def fix_strategy(model: MilpModel, vmap: VariableMap, strategy: Strategy, conts: ContingencySet) -> MilpModel:
    """Pin P0 and every available unit's P^c to ``strategy``."""
    for gid, v in strategy.preventive.items():
        model.fix(vmap[("P0", gid)], v)
    for c in conts.outages:
        for gid, v in strategy.corrective.get(c.id, {}).items():
            model.fix(vmap[("Pc", c.id, gid)], v)
    return model


def solve_model(case: Case, conts: ContingencySet, behaviors: BehaviorSet, opts: RtpOptions,
                model: MilpModel, vmap: VariableMap) -> RtpResult:
    sol = solve_milp(model, opts.solver)
    if not sol.ok:
        return RtpResult(model, vmap, sol, None, {}, math.nan, math.nan, math.nan, {}, {})
    strategy = extract_strategy(sol, vmap, case, conts)
    final = sol
    if opts.severity_pass:
        # lexicographic second stage: dispatch fixed, every block at its least severity
        m2 = model.copy()
        fix_strategy(m2, vmap, strategy, conts)
        m2.set_objective(quicksum(vmap[("s", c, _B[b])] for c, b in vmap.blocks))
        sol2 = solve_milp(m2, opts.solver)
        if sol2.ok:
            final = MilpSolution(sol.status, sol2.values, sol.objective, sol.bound, sol.nodes + sol2.nodes,
                                 sol.lp_iterations + sol2.lp_iterations, model.var_names)
    sev = {(c, b): final[vmap[("s", c, _B[b])]] for c, b in vmap.blocks}
    flows, removed = {}, {}
    for c, b in vmap.blocks:
        flows[(c, b)] = [final[vmap[("f", c, _B[b], ln.id)]] for ln in case.lines]
        removed[(c, b)] = [ln.id for ln in case.lines if final[vmap[("lam", c, _B[b], ln.id)]] > 0.5]
    return RtpResult(
        model, vmap, final, strategy, sev,
        preventive_cost=vmap.parts["preventive"].value(final.values),
        expected_corrective=vmap.parts["corrective"].value(final.values),
        expected_severity=vmap.parts["severity"].value(final.values),
        post_flows=flows, removed=removed,
    )


def solve_rtp(case: Case, conts: ContingencySet, behaviors: BehaviorSet,
              opts: RtpOptions | None = None, *, case_a: bool = False) -> RtpResult:
    opts = case_a_options(opts) if case_a else (opts or RtpOptions())
    model, vmap = _build(case, conts, behaviors, opts)
    return solve_model(case, conts, behaviors, opts, model, vmap)
