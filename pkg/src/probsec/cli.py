"""``probsec`` command line.

Exit status: 0 when every optimisation finished optimal, 1 when a solve
ended in any other status, 2 on bad input (case, strategy or workflow file).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .case import CaseError, resolve_case, validate_case
from .evaluator import StrategyError, evaluate_strategy
from .formulation import FormulationError, RtpOptions, build_rtp, case_a_options, solve_model
from .milp import SolverOptions, write_lp
from .multiarea import WorkflowError, area_costs, load_workflow, run_workflow
from .report import (
    ReportError,
    Table,
    cost_table,
    corrective_table,
    dispatch_table,
    eur,
    flows_table,
    load_strategy,
    mw,
    options_dict,
    record_from_result,
    render,
    severity_table,
    strategy_to_toml,
    write_tables,
)
from .scenarios import ScenarioError, behavior_set, build_contingencies

INPUT_ERRORS = (CaseError, ScenarioError, FormulationError, ReportError, WorkflowError, ValueError, OSError)


def _solver(args) -> SolverOptions:
    return SolverOptions(backend=args.solver, lp_engine=args.lp_engine, relative_gap=args.gap)


def _rtp_options(args) -> RtpOptions:
    base = RtpOptions(
        s_max=math.inf if args.smax is None else args.smax,
        epsilon=args.eps,
        allow_relax_working=args.relax_working == "on",
        objective="incremental" if args.objective == "incremental" else "net_cost",
        solver=_solver(args),
    )
    return case_a_options(base) if args.policy == "n1-benchmark" else base


def _load(args):
    case = resolve_case(args.case)
    rep = validate_case(case)
    if not rep.ok:
        raise CaseError("; ".join(rep.errors))
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    p_fail = case.p_fail if args.pfail is None else args.pfail
    return case, build_contingencies(case, args.probabilities), behavior_set(p_fail), p_fail


def _emit(args, tables: list[Table]) -> None:
    sys.stdout.write(render(tables, args.format))
    if getattr(args, "out", None):
        write_tables(tables, Path(args.out))


# -- commands -------------------------------------------------------------------

def cmd_solve(args) -> int:
    case, conts, beh, p_fail = _load(args)
    opts = _rtp_options(args)
    t0 = time.perf_counter()
    model, vmap = build_rtp(case, conts, beh, opts)
    if args.dump_model:
        Path(args.dump_model).write_text(write_lp(model))
    res = solve_model(case, conts, beh, opts, model, vmap)
    secs = time.perf_counter() - t0
    if not res.ok:
        print(f"solve ended {res.solution.status.value}", file=sys.stderr)
        if args.record:
            Path(args.record).write_text(record_from_result("solve", case, options_dict(opts, args.policy, p_fail),
                                                            res, None, secs).to_json())
        return 1
    ev = evaluate_strategy(case, conts, beh, res.strategy, validate=False)
    weights = {(c.id, b): c.pi * pb for c in conts for b, pb in beh.items()}
    # the no-outage blocks are not modelled: a secure base case has nothing to shed
    sev = {k: res.severities.get(k, 0.0) for k in weights}
    label = "N-1 benchmark" if args.policy == "n1-benchmark" else "Severity controlled"
    tables = [
        dispatch_table(case, res.strategy),
        corrective_table(case, conts, res.strategy),
        flows_table(case, conts, res.post_flows, "failing"),
        severity_table(case, conts, sev, weights),
        cost_table([(label, res.preventive_cost, res.expected_corrective, ev.expected_severity
                     if args.policy == "n1-benchmark" else res.expected_severity)]),
    ]
    _emit(args, tables)
    if args.format == "text":
        gap = max(ev.severity_table[k] - sev[k] for k in sev)
        print(f"status {res.solution.status.value}; objective {eur(res.objective)}; "
              f"oracle-model severity gap {eur(gap)}; {secs:.2f} s")
    if args.strategy_out:
        Path(args.strategy_out).write_text(strategy_to_toml(res.strategy, case, conts))
    if args.record:
        rec = record_from_result("solve", case, options_dict(opts, args.policy, p_fail), res, ev, secs)
        Path(args.record).write_text(rec.to_json())
    return 0


def cmd_sweep(args) -> int:
    case, conts, beh, _ = _load(args)
    t = Table("Preventive dispatch per chance level",
              ["epsilon"] + [f"{g.id} [MW]" for g in case.generators] + ["objective [EUR]"])
    status = 0
    for eps in args.eps_list:
        args.eps = eps
        opts = _rtp_options(args)
        model, vmap = build_rtp(case, conts, beh, opts)
        res = solve_model(case, conts, beh, opts, model, vmap)
        if not res.ok:
            status = 1
            t.add(f"{eps:g}", *(["-"] * len(case.generators)), res.solution.status.value)
            continue
        t.add(f"{eps:g}", *(mw(res.strategy.preventive[g.id]) for g in case.generators), eur(res.objective))
    _emit(args, [t])
    return status


def _workflow_source(ref: str):
    p = Path(ref)
    if p.is_file():
        return p
    name = ref if ref.endswith(".toml") else f"{ref}.toml"
    res = resources.files("probsec").joinpath("data", name)
    if res.is_file():
        return res.read_text()
    raise WorkflowError(f"no such workflow file or builtin: {ref}")


def _severity_split(title: str, rows, areas: list[str]) -> Table:
    t = Table(title, ["contingency", "event", "behavior"] + [f"area {a} [EUR]" for a in areas]
              + ["total [EUR]", "probability"])
    for r in rows:
        t.add(r.contingency, r.label, r.behavior, *(eur(r.by_area[a]) for a in areas), eur(r.total),
              f"{r.weight:.6e}")
    return t


def cmd_multiarea(args) -> int:
    wf = load_workflow(_workflow_source(args.workflow))
    wf.base = RtpOptions(solver=_solver(args))
    res = run_workflow(wf)
    case = wf.case
    conts = build_contingencies(case, wf.probability_mode)
    areas = sorted(res.partition.areas)
    boundary = Table("System OPF boundary dispatch", ["generator", "node", "P0 [MW]"])
    for g in case.generators:
        boundary.add(g.id, g.node, mw(res.boundary[g.id]))
    tables = [boundary]
    own = []
    for a in areas:
        run = res.runs[a]
        tag = "N-1 benchmark" if run.policy.kind == "n1" else f"severity s_max={eur(run.policy.s_max)}"
        t = Table(f"Area {a} subproblem dispatch ({tag})", ["generator", "node", "P0 [MW]"])
        for g in case.generators:
            if g.id in run.strategy.preventive:
                t.add(g.id, g.node, mw(run.strategy.preventive[g.id]))
        tables.append(t)
        r = run.result
        own.append((f"area {a} subproblem", r.preventive_cost, r.expected_corrective, r.expected_severity))
    tables.append(cost_table(own, "Area subproblem costs (own scope)"))
    tables.append(_severity_split("Merged strategy: minimum system-wide severity", res.rows, areas))
    split = area_costs(case, conts, res.merged, res.evaluation, res.partition)
    tables.append(cost_table([(f"area {a}", *split[a]) for a in areas], "Merged strategy: costs per area"))
    if res.system is not None:
        tables.append(dispatch_table(case, res.system.strategy, "System-wide run dispatch"))
        tables.append(_severity_split("System-wide run: severity per area", res.system_rows, areas))
        split = area_costs(case, conts, res.system.strategy, res.system_eval, res.partition)
        tables.append(cost_table([(f"area {a}", *split[a]) for a in areas], "System-wide run: costs per area"))
    _emit(args, tables)
    return 0


def cmd_evaluate(args) -> int:
    case, conts, beh, _ = _load(args)
    strategy = load_strategy(args.strategy)
    try:
        ev = evaluate_strategy(case, conts, beh, strategy, mode=args.mode)
    except StrategyError as e:
        print(f"invalid strategy: {e}", file=sys.stderr)
        return 2
    flows = {}
    for (cid, b), st in ev.states.items():
        flows[(cid, b)] = [st.post_flows.get(ln.id, 0.0) for ln in case.lines]
    tables = [
        dispatch_table(case, strategy),
        corrective_table(case, conts, strategy),
        flows_table(case, conts, flows, "failing"),
        severity_table(case, conts, ev.severity_table, ev.weights),
        cost_table([("evaluated", ev.preventive_cost, ev.expected_corrective, ev.expected_severity)]),
    ]
    _emit(args, tables)
    return 0


# -- parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pfail", type=float, default=None, help="corrective-control failure probability")
    p.add_argument("--probabilities", choices=["from_mttf", "explicit"], default=None,
                   help="contingency probability source (default: the case's own)")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out", metavar="DIR", help="also write each table as CSV into DIR")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=["highs", "bnb"], default="highs",
                   help="MILP backend: HiGHS or the built-in branch-and-bound")
    p.add_argument("--lp-engine", choices=["simplex", "highs"], default="highs",
                   help="LP engine for branch-and-bound nodes")
    p.add_argument("--gap", type=float, default=1e-9, help="relative optimality gap")


def _policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=["n1-benchmark", "severity"], default="severity")
    p.add_argument("--smax", type=float, default=None, help="severity threshold in EUR (default: none)")
    p.add_argument("--relax-working", choices=["on", "off"], default="off")
    p.add_argument("--objective", choices=["net", "incremental"], default="net")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probsec", description="Probabilistic real-time security management")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="optimise preventive and corrective control for one case")
    p.add_argument("case", help="built-in case name or TOML case file")
    _policy_flags(p)
    p.add_argument("--eps", type=float, default=0.0, help="allowed probability of exceeding --smax")
    p.add_argument("--dump-model", metavar="PATH", help="write the MILP in LP format")
    p.add_argument("--strategy-out", metavar="PATH", help="write the optimal strategy as TOML")
    p.add_argument("--record", metavar="PATH", help="write a JSON run record")
    _common(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="preventive dispatch for a list of chance levels")
    p.add_argument("case")
    _policy_flags(p)
    p.add_argument("--eps", dest="eps_list", type=float, nargs="+", required=True)
    _common(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep, policy="severity")

    p = sub.add_parser("multiarea", help="run a two-operator workflow file")
    p.add_argument("workflow", help="workflow TOML file or built-in name (workflow-6bus)")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out", metavar="DIR")
    _solver_flags(p)
    p.set_defaults(func=cmd_multiarea)

    p = sub.add_parser("evaluate", help="evaluate a given strategy without optimising")
    p.add_argument("case")
    p.add_argument("strategy", help="strategy TOML file")
    p.add_argument("--mode", choices=["first_round", "cascade"], default="first_round",
                   help="overload removal: one round or repeated to a fixed point")
    _common(p)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
