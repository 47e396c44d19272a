"""Two-operator study: boundary OPF, per-area subproblems, merge and
system-wide least-severity re-evaluation."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .case import Case, CaseError, load_case, resolve_case
from .evaluator import StrategyEvaluation, area_split, evaluate_strategy
from .formulation import (
    RtpOptions,
    RtpResult,
    Strategy,
    _build,
    _Scope,
    case_a_options,
    solve_model,
)
from .milp import MilpModel, SolverOptions, quicksum, solve_lp
from .scenarios import BehaviorSet, ContingencySet, behavior_set, build_contingencies


class WorkflowError(ValueError):
    pass


@dataclass(frozen=True)
class Area:
    nodes: frozenset[int]
    lines: frozenset[int]
    generators: frozenset[int]
    demands: frozenset[int]


@dataclass(frozen=True)
class AreaPartition:
    areas: dict[str, Area]
    interconnectors: frozenset[int]

    def node_area(self) -> dict[int, str]:
        return {n: a for a, ar in self.areas.items() for n in ar.nodes}


@dataclass(frozen=True)
class AreaPolicy:
    kind: str  # "severity" or "n1"
    s_max: float = math.inf
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind in ("n1-benchmark", "n1_benchmark"):
            object.__setattr__(self, "kind", "n1")
        elif self.kind == "severity_controlled":
            object.__setattr__(self, "kind", "severity")
        if self.kind not in ("severity", "n1"):
            raise WorkflowError(f"unknown area policy {self.kind!r}")
        if not self.s_max >= 0:
            raise WorkflowError("s_max must be >= 0")


def partition(case: Case, nodes_by_area: dict[str, list[int]]) -> AreaPartition:
    owner = {}
    for a, ns in nodes_by_area.items():
        for n in ns:
            if n in owner:
                raise WorkflowError(f"node {n} assigned to both {owner[n]} and {a}")
            owner[n] = a
    missing = set(case.nodes) - set(owner)
    if missing:
        raise WorkflowError(f"nodes without an area: {sorted(missing)}")
    extra = set(owner) - set(case.nodes)
    if extra:
        raise WorkflowError(f"unknown nodes in partition: {sorted(extra)}")
    areas, inter = {}, set()
    for k, ln in enumerate(case.lines):
        if owner[ln.from_node] != owner[ln.to_node]:
            inter.add(k)
    for a, ns in nodes_by_area.items():
        ns = frozenset(ns)
        areas[a] = Area(
            nodes=ns,
            lines=frozenset(k for k, ln in enumerate(case.lines) if k not in inter and ln.from_node in ns),
            generators=frozenset(i for i, g in enumerate(case.generators) if g.node in ns),
            demands=frozenset(j for j, d in enumerate(case.demands) if d.node in ns),
        )
    return AreaPartition(areas, frozenset(inter))


def system_opf(case: Case, opts: SolverOptions | None = None) -> dict[str, float]:
    """Least-cost DC dispatch with pre-contingency limits only."""
    m = MilpModel(f"opf-{case.name}")
    nidx = case.node_index()
    P = [m.add_var(f"P0[{g.id}]", g.p_min, g.p_max) for g in case.generators]
    th = [m.add_var(f"theta0[{n}]", *((0.0, 0.0) if n == case.slack else (-math.inf, math.inf))) for n in case.nodes]
    f = [m.add_var(f"f0[{ln.id}]", -ln.f_max, ln.f_max) for ln in case.lines]
    for k, ln in enumerate(case.lines):
        m.add_constr(f[k] - (1.0 / ln.x) * (th[nidx[ln.from_node]] - th[nidx[ln.to_node]]), "==", 0.0,
                     f"pre_pf[{ln.id}]")
    for n in case.nodes:
        e = quicksum(P[i] for i in case.gens_at(n))
        for k, ln in enumerate(case.lines):
            if ln.from_node == n:
                e -= f[k]
            elif ln.to_node == n:
                e += f[k]
        m.add_constr(e, "==", sum(case.demands[j].p0 for j in case.demands_at(n)), f"pre_pbal[{n}]")
    m.set_objective(quicksum(case.horizon_hours * g.cost * P[i] for i, g in enumerate(case.generators)))
    sol = solve_lp(m, opts or SolverOptions(feasibility_tol=1e-9))
    if not sol.ok:
        raise WorkflowError(f"system OPF is {sol.status.value}")
    return {g.id: round(sol[P[i]], 9) + 0.0 for i, g in enumerate(case.generators)}


def area_contingencies(conts: ContingencySet, part: AreaPartition, area: str) -> ContingencySet:
    """Single failures inside ``area`` plus every interconnector; ids and probabilities kept."""
    ar = part.areas[area]

    def keep(c):
        if c.kind == "line":
            return c.index in ar.lines or c.index in part.interconnectors
        return c.index in ar.generators

    return conts.subset(keep)


def area_options(policy: AreaPolicy, base: RtpOptions | None = None) -> RtpOptions:
    base = base or RtpOptions()
    if policy.kind == "n1":
        return case_a_options(base)
    return RtpOptions(s_max=policy.s_max, epsilon=policy.epsilon, allow_relax_working=base.allow_relax_working,
                      allow_relax_failing=base.allow_relax_failing, objective=base.objective, fees=base.fees,
                      severity_pass=base.severity_pass, solver=base.solver)


def _scope(case: Case, part: AreaPartition, area: str, boundary: dict[str, float], policy: AreaPolicy) -> _Scope:
    ar = part.areas[area]
    fixed = {}
    for i, g in enumerate(case.generators):
        if i in ar.generators:
            continue
        if g.id not in boundary:
            raise WorkflowError(f"boundary dispatch misses out-of-area generator {g.id}")
        fixed[i] = float(boundary[g.id])
    foreign = frozenset(k for k in range(len(case.lines)) if k not in ar.lines and k not in part.interconnectors)
    frozen, unmonitored = frozenset(), frozenset()
    if policy.kind == "severity":
        # no jurisdiction over other areas' branches: they may not be relaxed or tripped
        frozen = foreign
    else:
        # an N-1 operator only secures its own branches and the interconnectors
        unmonitored = foreign
    return _Scope(fixed_gens=fixed, cost_gens=ar.generators, sev_demands=ar.demands, sev_gens=ar.generators,
                  frozen_lines=frozen, unmonitored_lines=unmonitored)


def build_area_subproblem(case: Case, part: AreaPartition, area: str, boundary: dict[str, float],
                          policy: AreaPolicy, conts: ContingencySet, behaviors: BehaviorSet,
                          base: RtpOptions | None = None):
    """Return ``(model, vmap, area contingencies, options)`` for one operator."""
    if area not in part.areas:
        raise WorkflowError(f"unknown area {area!r}")
    sub = area_contingencies(conts, part, area)
    opts = area_options(policy, base)
    model, vmap = _build(case, sub, behaviors, opts, _scope(case, part, area, boundary, policy))
    return model, vmap, sub, opts


def solve_area(case: Case, part: AreaPartition, area: str, boundary: dict[str, float], policy: AreaPolicy,
               conts: ContingencySet, behaviors: BehaviorSet, base: RtpOptions | None = None) -> tuple[RtpResult, ContingencySet]:
    model, vmap, sub, opts = build_area_subproblem(case, part, area, boundary, policy, conts, behaviors, base)
    return solve_model(case, sub, behaviors, opts, model, vmap), sub


def restrict(strategy: Strategy, gen_ids: set[str]) -> Strategy:
    return Strategy({g: v for g, v in strategy.preventive.items() if g in gen_ids},
                    {c: {g: v for g, v in row.items() if g in gen_ids} for c, row in strategy.corrective.items()})


def merge_strategies(case: Case, parts: dict[str, Strategy]) -> Strategy:
    pre: dict[str, float] = {}
    corr: dict[int, dict[str, float]] = {}
    for area, st in parts.items():
        for g, v in st.preventive.items():
            if g in pre:
                raise WorkflowError(f"generator {g} set by more than one area strategy")
            pre[g] = v
        for c, row in st.corrective.items():
            corr.setdefault(c, {}).update(row)
    missing = [g.id for g in case.generators if g.id not in pre]
    if missing:
        raise WorkflowError(f"merged strategy misses generators {missing}")
    return Strategy(pre, dict(sorted(corr.items())))


@dataclass
class SeverityRow:
    contingency: int
    label: str
    behavior: str
    total: float
    by_area: dict[str, float]
    weight: float


def merge_and_min_severity(case: Case, conts: ContingencySet, behaviors: BehaviorSet,
                           area_strategies: dict[str, Strategy], part: AreaPartition,
                           mode: str = "first_round") -> tuple[list[SeverityRow], StrategyEvaluation, Strategy]:
    merged = merge_strategies(case, area_strategies)
    # each operator balanced its own corrective moves against a frozen neighbour, so the
    # merged schedule is replayed as is rather than validated as one system-wide plan
    ev = evaluate_strategy(case, conts, behaviors, merged, mode=mode, validate=False)
    rows = severity_rows(case, conts, ev, part)
    return rows, ev, merged


def severity_rows(case: Case, conts: ContingencySet, ev: StrategyEvaluation, part: AreaPartition) -> list[SeverityRow]:
    na = part.node_area()
    rows = []
    for c in conts:
        for b in ("working", "failing"):
            st = ev.states[(c.id, b)]
            rows.append(SeverityRow(c.id, c.label, b, st.severity, area_split(case, st, na), ev.weights[(c.id, b)]))
    return rows


# -- workflow -------------------------------------------------------------------

@dataclass
class Workflow:
    case: Case
    areas: dict[str, list[int]]
    policies: dict[str, AreaPolicy]
    p_fail: float = 0.2
    probability_mode: str | None = None
    system_policy: AreaPolicy | None = None
    base: RtpOptions = field(default_factory=RtpOptions)


@dataclass
class AreaRun:
    area: str
    policy: AreaPolicy
    result: RtpResult
    contingencies: ContingencySet
    strategy: Strategy


@dataclass
class WorkflowResult:
    boundary: dict[str, float]
    partition: AreaPartition
    runs: dict[str, AreaRun]
    merged: Strategy
    rows: list[SeverityRow]
    evaluation: StrategyEvaluation
    system: RtpResult | None = None
    system_rows: list[SeverityRow] | None = None
    system_eval: StrategyEvaluation | None = None


def run_workflow(wf: Workflow) -> WorkflowResult:
    case = wf.case
    conts = build_contingencies(case, wf.probability_mode)
    beh = behavior_set(wf.p_fail)
    part = partition(case, wf.areas)
    boundary = system_opf(case)
    runs = {}
    for area in sorted(part.areas):
        if area not in wf.policies:
            raise WorkflowError(f"no policy for area {area!r}")
        pol = wf.policies[area]
        res, sub = solve_area(case, part, area, boundary, pol, conts, beh, wf.base)
        if not res.ok:
            raise WorkflowError(f"area {area} subproblem is {res.solution.status.value}")
        ids = {case.generators[i].id for i in part.areas[area].generators}
        runs[area] = AreaRun(area, pol, res, sub, restrict(res.strategy, ids))
    rows, ev, merged = merge_and_min_severity(case, conts, beh, {a: r.strategy for a, r in runs.items()}, part)
    out = WorkflowResult(boundary, part, runs, merged, rows, ev)
    if wf.system_policy is not None:
        opts = area_options(wf.system_policy, wf.base)
        model, vmap = _build(case, conts, beh, opts)
        sysres = solve_model(case, conts, beh, opts, model, vmap)
        if not sysres.ok:
            raise WorkflowError(f"system-wide problem is {sysres.solution.status.value}")
        sev = evaluate_strategy(case, conts, beh, sysres.strategy)
        out.system, out.system_eval = sysres, sev
        out.system_rows = severity_rows(case, conts, sev, part)
    return out


def area_costs(case: Case, conts: ContingencySet, strategy: Strategy, ev: StrategyEvaluation,
               part: AreaPartition) -> dict[str, tuple[float, float, float]]:
    """(preventive, expected corrective, expected severity) attributed to each area."""
    na = part.node_area()
    h = case.horizon_hours
    out = {}
    for a in sorted(part.areas):
        gens = [i for i, g in enumerate(case.generators) if na[g.node] == a]
        p0 = strategy.p0(case)
        prev = h * math.fsum(case.generators[i].cost * p0[i] for i in gens)
        corr = math.fsum(
            c.pi * h * math.fsum(case.generators[i].cost_r * (strategy.pc(case, c)[i] - p0[i]) for i in gens)
            for c in conts.outages
        )
        sev = math.fsum(ev.weights[k] * area_split(case, st, na)[a] for k, st in ev.states.items())
        out[a] = (prev, corr, sev)
    return out


def _policy(tbl: dict, where: str) -> AreaPolicy:
    kind = tbl.get("policy")
    if kind is None:
        raise WorkflowError(f"{where}: missing policy")
    s_max = tbl.get("s_max", math.inf)
    try:
        return AreaPolicy(str(kind), float(s_max), float(tbl.get("epsilon", 0.0)))
    except (TypeError, ValueError) as e:
        raise WorkflowError(f"{where}: {e}") from None


def load_workflow(source: str | Path) -> Workflow:
    """Read a workflow description (TOML). ``source`` is a path or the document text.

    ::

        case = "irep-6bus"        # built-in name or a path relative to this file
        p_fail = 0.2
        [areas.A]
        nodes = [1, 2, 3]
        policy = "severity"
        s_max = 5625
        epsilon = 0
        [areas.B]
        nodes = [4, 5, 6]
        policy = "n1-benchmark"
        [system]                  # optional whole-system run for comparison
        policy = "severity"
        s_max = 12125
    """
    base = Path(".")
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        base = Path(source).parent
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise WorkflowError(f"workflow file: {e}") from e
    ref = doc.get("case")
    if not isinstance(ref, str):
        raise WorkflowError("workflow needs a case reference")
    try:
        p = base / ref
        case = load_case(p) if p.is_file() else resolve_case(ref)
    except CaseError as e:
        raise WorkflowError(str(e)) from e
    areas, policies = {}, {}
    for name, tbl in doc.get("areas", {}).items():
        if not isinstance(tbl, dict) or "nodes" not in tbl:
            raise WorkflowError(f"area {name}: needs a nodes list")
        areas[name] = [int(n) for n in tbl["nodes"]]
        policies[name] = _policy(tbl, f"area {name}")
    if not areas:
        raise WorkflowError("workflow defines no areas")
    system = _policy(doc["system"], "system") if "system" in doc else None
    return Workflow(case, areas, policies, p_fail=float(doc.get("p_fail", case.p_fail)),
                    probability_mode=doc.get("probability_mode"), system_policy=system)
