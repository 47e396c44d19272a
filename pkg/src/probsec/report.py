"""Tables, strategy files and run records."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .case import Case, serialize_case
from .evaluator import StrategyEvaluation
from .formulation import RtpOptions, RtpResult, Strategy
from .scenarios import ContingencySet


class ReportError(ValueError):
    pass


def eur(v: float) -> str:
    return f"{_z(v):.2f}"


def mw(v: float) -> str:
    return f"{_z(v):.1f}"


def _z(v: float) -> float:
    # keep -0.0 out of printed output
    v = float(v)
    return 0.0 if v == 0 or abs(v) < 5e-10 else v


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[str]] = field(default_factory=list)

    def add(self, *cells) -> None:
        if len(cells) != len(self.columns):
            raise ReportError(f"{self.name}: {len(cells)} cells for {len(self.columns)} columns")
        self.rows.append([str(c) for c in cells])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, name: str, text: str) -> "Table":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ReportError(f"{name}: empty CSV")
        return cls(name, rows[0], rows[1:])

    def to_text(self) -> str:
        widths = [max([len(c)] + [len(r[i]) for r in self.rows]) for i, c in enumerate(self.columns)]
        fmt = lambda cells: "  ".join(
            (s.ljust(w) if i == 0 else s.rjust(w)) for i, (s, w) in enumerate(zip(cells, widths))
        ).rstrip()
        lines = [self.name, fmt(self.columns), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in self.rows]
        return "\n".join(lines) + "\n"


# -- standard tables ----------------------------------------------------------

def dispatch_table(case: Case, strategy: Strategy, name: str = "Preventive dispatch") -> Table:
    t = Table(name, ["generator", "node", "P0 [MW]"])
    for g in case.generators:
        t.add(g.id, g.node, mw(strategy.preventive[g.id]))
    return t


def corrective_table(case: Case, conts: ContingencySet, strategy: Strategy) -> Table:
    t = Table("Corrective re-dispatch", ["contingency", "event"] + [f"{g.id} [MW]" for g in case.generators])
    for c in conts.outages:
        pc = strategy.pc(case, c)
        t.add(c.id, c.label, *(("-" if not c.a_gen(i) else mw(pc[i])) for i in range(len(case.generators))))
    return t


def flows_table(case: Case, conts: ContingencySet, flows: dict[tuple[int, str], list[float]],
                behavior: str = "failing") -> Table:
    t = Table(f"Post-contingency line flows ({behavior} corrective control)",
              ["contingency", "event"] + [f"{ln.id} [MW]" for ln in case.lines])
    for c in conts.outages:
        row = flows.get((c.id, behavior))
        if row is None:
            continue
        t.add(c.id, c.label, *(("-" if not c.a_line(k) else mw(row[k])) for k in range(len(case.lines))))
    return t


def severity_table(case: Case, conts: ContingencySet, severities: dict[tuple[int, str], float],
                   weights: dict[tuple[int, str], float]) -> Table:
    base = case.max_severity()
    t = Table("Severity levels", ["contingency", "event", "behavior", "severity [EUR]", "severity [%]", "probability"])
    for c in conts:
        for b in ("working", "failing"):
            s = severities[(c.id, b)]
            pct = 100.0 * s / base if base > 0 else 0.0
            t.add(c.id, c.label, b, eur(s), f"{_z(pct):.2f}", f"{weights[(c.id, b)]:.6e}")
    return t


def cost_table(rows: list[tuple[str, float, float, float]], name: str = "Cost breakdown") -> Table:
    t = Table(name, ["run", "preventive [EUR]", "E[corrective] [EUR]", "E[severity] [EUR]", "total [EUR]"])
    for label, p, c, s in rows:
        t.add(label, eur(p), eur(c), eur(s), eur(p + c + s))
    return t


def render(tables: list[Table], fmt: str = "text") -> str:
    if fmt == "text":
        return "\n".join(t.to_text() for t in tables)
    if fmt == "csv":
        return "\n".join(f"# {t.name}\n{t.to_csv()}" for t in tables)
    raise ReportError(f"unknown format {fmt!r}")


def parse_csv_bundle(text: str) -> list[Table]:
    """Inverse of ``render(tables, "csv")``."""
    out, name, buf = [], None, []
    for line in text.splitlines(keepends=True):
        if line.startswith("# "):
            if name is not None:
                out.append(Table.from_csv(name, "".join(buf).rstrip("\n") + "\n"))
            name, buf = line[2:].rstrip("\n"), []
        elif name is not None and line.strip():
            buf.append(line)
    if name is not None:
        out.append(Table.from_csv(name, "".join(buf)))
    return out


def slug(name: str) -> str:
    keep = "".join(ch.lower() if ch.isalnum() else "-" for ch in name)
    return "-".join(p for p in keep.split("-") if p)


def write_tables(tables: list[Table], outdir: Path) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tables:
        p = outdir / f"{slug(t.name)}.csv"
        p.write_text(t.to_csv())
        paths.append(p)
    return paths


# -- strategy files -----------------------------------------------------------

def strategy_to_toml(strategy: Strategy, case: Case | None = None, conts: ContingencySet | None = None) -> str:
    doc: dict = {}
    if case is not None:
        doc["case"] = case.name
    doc["preventive"] = dict(strategy.preventive)
    corr = {}
    for cid, row in sorted(strategy.corrective.items()):
        entry = dict(row)
        if conts is not None:
            entry = {"label": conts.by_id(cid).label, **entry}
        corr[str(cid)] = entry
    doc["corrective"] = corr
    return tomli_w.dumps(doc)


def strategy_from_toml(text: str) -> Strategy:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ReportError(f"strategy file: {e}") from e
    if "preventive" not in doc or not isinstance(doc["preventive"], dict):
        raise ReportError("strategy file needs a [preventive] table")
    pre = {str(k): float(v) for k, v in doc["preventive"].items()}
    corr = {}
    for key, row in doc.get("corrective", {}).items():
        try:
            cid = int(key)
        except ValueError:
            raise ReportError(f"corrective key {key!r} is not a contingency id") from None
        corr[cid] = {str(g): float(v) for g, v in row.items() if g != "label"}
    return Strategy(pre, corr)


def load_strategy(path: str | Path) -> Strategy:
    return strategy_from_toml(Path(path).read_text())


# -- run record ---------------------------------------------------------------

def case_hash(case: Case) -> str:
    return hashlib.sha256(serialize_case(case).encode()).hexdigest()[:16]


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return _finite(obj)


@dataclass
class RunRecord:
    command: str
    case_name: str
    case_hash: str
    options: dict
    status: str
    strategy: dict | None
    costs: dict
    severities: dict
    evaluation: dict | None
    solver: dict
    seconds: float

    def to_json(self, timing: bool = True) -> str:
        d = _clean(asdict(self))
        if not timing:
            d.pop("seconds")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def options_dict(opts: RtpOptions, policy: str, p_fail: float) -> dict:
    d = asdict(opts)
    d["policy"], d["p_fail"] = policy, p_fail
    return _clean(d)


def record_from_result(command: str, case: Case, opts: dict, res: RtpResult,
                       ev: StrategyEvaluation | None, seconds: float) -> RunRecord:
    sol = res.solution
    st = None if res.strategy is None else {
        "preventive": res.strategy.preventive,
        "corrective": {str(k): v for k, v in res.strategy.corrective.items()},
    }
    evd = None
    if ev is not None:
        evd = {
            "preventive_cost": ev.preventive_cost,
            "expected_corrective": ev.expected_corrective,
            "expected_severity": ev.expected_severity,
            "severities": {f"{c},{b}": v for (c, b), v in ev.severity_table.items()},
        }
    return RunRecord(
        command=command, case_name=case.name, case_hash=case_hash(case), options=opts,
        status=sol.status.value, strategy=st,
        costs={"preventive": res.preventive_cost, "expected_corrective": res.expected_corrective,
               "expected_severity": res.expected_severity},
        severities={f"{c},{b}": v for (c, b), v in res.severities.items()},
        evaluation=evd,
        solver={"objective": sol.objective, "bound": sol.bound, "nodes": sol.nodes,
                "lp_iterations": sol.lp_iterations, "variables": res.model.num_vars,
                "constraints": res.model.num_constrs, "binaries": len(res.model.binaries)},
        seconds=round(seconds, 3),
    )
