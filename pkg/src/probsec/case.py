"""Network case model, TOML case files and the bundled fixtures.

Case file layout (all powers in MW, energy prices in EUR/MWh, fixed fees in
EUR, times in hours)::

    name = "irep-3bus"

    [network]
    nodes = [1, 2, 3]
    slack_node = 1            # optional, defaults to the lowest node id
    horizon_hours = 1.0

    [[network.lines]]
    id = "l1"
    from_node = 1
    to_node = 2
    f_max_mw = 55.0
    x_pu = 1.0
    mttf_h = 10000.0

    [[generators]]
    id = "g1"
    node = 1
    cost_eur_per_mwh = 20.0
    cost_r_eur_per_mwh = 5.0
    p_min_mw = 10.0
    p_max_mw = 100.0
    ramp_down_mw = 100.0
    ramp_up_mw = 100.0
    emergency_ramp_mw = 100.0
    mttf_h = 500.0
    w_eur = 4000.0
    # p_market_mw = 80.0      # optional settled market schedule

    [[demands]]
    id = "d1"
    node = 3
    p_mw = 100.0
    voll_eur_per_mwh = 300.0

    [options]
    p_fail = 0.2
    probability_mode = "explicit"     # or "from_mttf"
    probabilities = [0.99193, ...]    # explicit mode only, scenario order
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN = ("irep-3bus", "irep-6bus")


class CaseError(ValueError):
    """Malformed case document or unknown fixture."""


@dataclass(frozen=True)
class Line:
    id: str
    from_node: int
    to_node: int
    f_max: float
    x: float = 1.0
    mttf: float = math.inf


@dataclass(frozen=True)
class Generator:
    id: str
    node: int
    cost: float
    cost_r: float
    p_min: float
    p_max: float
    ramp_down: float
    ramp_up: float
    emergency_ramp: float
    mttf: float = math.inf
    w: float = 0.0
    p_market: float | None = None


@dataclass(frozen=True)
class Demand:
    id: str
    node: int
    p0: float
    voll: float


@dataclass(frozen=True)
class Case:
    name: str
    nodes: tuple[int, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    demands: tuple[Demand, ...]
    horizon_hours: float = 1.0
    slack_node: int | None = None
    p_fail: float = 0.2
    probability_mode: str = "from_mttf"
    probabilities: tuple[float, ...] | None = None

    @property
    def slack(self) -> int:
        return self.slack_node if self.slack_node is not None else min(self.nodes)

    def node_index(self) -> dict[int, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    def incidence(self) -> np.ndarray:
        """beta[n, l]: +1 at the sending node, -1 at the receiving node."""
        idx = self.node_index()
        beta = np.zeros((len(self.nodes), len(self.lines)))
        for k, ln in enumerate(self.lines):
            beta[idx[ln.from_node], k] = 1.0
            beta[idx[ln.to_node], k] = -1.0
        return beta

    def gens_at(self, node: int) -> list[int]:
        return [i for i, g in enumerate(self.generators) if g.node == node]

    def demands_at(self, node: int) -> list[int]:
        return [i for i, d in enumerate(self.demands) if d.node == node]

    def total_load(self) -> float:
        return sum(d.p0 for d in self.demands)

    def max_severity(self) -> float:
        """Every demand shed for the whole horizon and every unit disconnected."""
        return sum(d.voll * d.p0 for d in self.demands) * self.horizon_hours + sum(g.w for g in self.generators)

    def line(self, lid: str) -> int:
        for k, ln in enumerate(self.lines):
            if ln.id == lid:
                return k
        raise KeyError(lid)

    def gen(self, gid: str) -> int:
        for k, g in enumerate(self.generators):
            if g.id == gid:
                return k
        raise KeyError(gid)

    def with_(self, **kw) -> "Case":
        return replace(self, **kw)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# -- validation ----------------------------------------------------------

def _dupes(ids) -> list:
    seen, out = set(), []
    for i in ids:
        if i in seen and i not in out:
            out.append(i)
        seen.add(i)
    return out


def validate_case(case: Case) -> ValidationReport:
    rep = ValidationReport()
    err = rep.errors.append
    if not case.nodes:
        err("no nodes")
    for n in _dupes(case.nodes):
        err(f"duplicate node id {n}")
    nodes = set(case.nodes)
    if not case.horizon_hours > 0:
        err(f"horizon_hours must be > 0, got {case.horizon_hours}")
    if not case.generators:
        err("no generators")
    if not case.demands:
        rep.warnings.append("no demands: every run is trivial")
    if case.slack_node is not None and case.slack_node not in nodes:
        err(f"slack node {case.slack_node} does not exist")
    for kind, items in (("line", case.lines), ("generator", case.generators), ("demand", case.demands)):
        for i in _dupes([it.id for it in items]):
            err(f"duplicate {kind} id {i!r}")

    for ln in case.lines:
        for end in (ln.from_node, ln.to_node):
            if end not in nodes:
                err(f"line {ln.id}: node {end} does not exist")
        if ln.from_node == ln.to_node:
            err(f"line {ln.id}: from_node equals to_node")
        if not ln.f_max > 0:
            err(f"line {ln.id}: f_max must be > 0")
        if not ln.x > 0:
            err(f"line {ln.id}: reactance must be > 0")
        if not ln.mttf > 0:
            err(f"line {ln.id}: mttf must be > 0")
    for g in case.generators:
        if g.node not in nodes:
            err(f"generator {g.id}: node {g.node} does not exist")
        if not 0 <= g.p_min <= g.p_max:
            err(f"generator {g.id}: need 0 <= p_min <= p_max, got p_min={g.p_min}, p_max={g.p_max}")
        for nm in ("ramp_down", "ramp_up", "emergency_ramp", "w"):
            if getattr(g, nm) < 0:
                err(f"generator {g.id}: {nm} must be >= 0")
        if not g.mttf > 0:
            err(f"generator {g.id}: mttf must be > 0")
        if g.p_market is not None and not g.p_min <= g.p_market <= g.p_max:
            err(f"generator {g.id}: p_market {g.p_market} outside [p_min, p_max]")
    for d in case.demands:
        if d.node not in nodes:
            err(f"demand {d.id}: node {d.node} does not exist")
        if d.p0 < 0:
            err(f"demand {d.id}: p0 must be >= 0")
        if d.voll < 0:
            err(f"demand {d.id}: voll must be >= 0")
    if not 0 <= case.p_fail <= 1:
        err(f"p_fail must be in [0, 1], got {case.p_fail}")
    if case.probability_mode not in ("explicit", "from_mttf"):
        err(f"unknown probability_mode {case.probability_mode!r}")
    elif case.probability_mode == "explicit":
        expect = 1 + len(case.lines) + len(case.generators)
        if case.probabilities is None:
            err("probability_mode 'explicit' needs an options.probabilities list")
        elif len(case.probabilities) != expect:
            err(f"options.probabilities has {len(case.probabilities)} entries, expected {expect}")

    if case.nodes and not rep.errors and len(islands(case, [True] * len(case.lines))) > 1:
        rep.warnings.append("network graph is not connected")
    return rep


def islands(case: Case, in_service) -> list[list[int]]:
    """Connected components as lists of node positions (lowest position first)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    idx = case.node_index()
    n = len(case.nodes)
    rows, cols = [], []
    for k, ln in enumerate(case.lines):
        if in_service[k]:
            rows.append(idx[ln.from_node])
            cols.append(idx[ln.to_node])
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values(), key=lambda v: v[0])


# -- TOML I/O ------------------------------------------------------------

def _get(tbl: dict, key: str, where: str, cast=float, default=...):
    if key not in tbl:
        if default is ...:
            raise CaseError(f"{where}: missing mandatory field {key!r}")
        return default
    try:
        return cast(tbl[key])
    except (TypeError, ValueError) as exc:
        raise CaseError(f"{where}.{key}: {exc}") from None


def case_from_dict(doc: dict) -> Case:
    net = doc.get("network")
    if not isinstance(net, dict):
        raise CaseError("missing [network] section")
    nodes = tuple(int(n) for n in net.get("nodes", []))
    if not nodes:
        raise CaseError("no nodes")
    lines = []
    for i, t in enumerate(net.get("lines", [])):
        w = f"network.lines[{i}]"
        lines.append(Line(
            id=_get(t, "id", w, str),
            from_node=_get(t, "from_node", w, int),
            to_node=_get(t, "to_node", w, int),
            f_max=_get(t, "f_max_mw", w),
            x=_get(t, "x_pu", w, default=1.0),
            mttf=_get(t, "mttf_h", w, default=math.inf),
        ))
    gens = []
    for i, t in enumerate(doc.get("generators", [])):
        w = f"generators[{i}]"
        p_max = _get(t, "p_max_mw", w)
        gens.append(Generator(
            id=_get(t, "id", w, str),
            node=_get(t, "node", w, int),
            cost=_get(t, "cost_eur_per_mwh", w),
            cost_r=_get(t, "cost_r_eur_per_mwh", w, default=0.0),
            p_min=_get(t, "p_min_mw", w, default=0.0),
            p_max=p_max,
            ramp_down=_get(t, "ramp_down_mw", w, default=p_max),
            ramp_up=_get(t, "ramp_up_mw", w, default=p_max),
            emergency_ramp=_get(t, "emergency_ramp_mw", w, default=p_max),
            mttf=_get(t, "mttf_h", w, default=math.inf),
            w=_get(t, "w_eur", w, default=0.0),
            p_market=_get(t, "p_market_mw", w, default=None),
        ))
    dems = []
    for i, t in enumerate(doc.get("demands", [])):
        w = f"demands[{i}]"
        dems.append(Demand(
            id=_get(t, "id", w, str),
            node=_get(t, "node", w, int),
            p0=_get(t, "p_mw", w),
            voll=_get(t, "voll_eur_per_mwh", w),
        ))
    opts = doc.get("options", {})
    probs = opts.get("probabilities")
    return Case(
        name=str(doc.get("name", "case")),
        nodes=nodes,
        lines=tuple(lines),
        generators=tuple(gens),
        demands=tuple(dems),
        horizon_hours=_get(net, "horizon_hours", "network", default=1.0),
        slack_node=_get(net, "slack_node", "network", int, default=None),
        p_fail=_get(opts, "p_fail", "options", default=0.2),
        probability_mode=_get(opts, "probability_mode", "options", str,
                              default="explicit" if probs is not None else "from_mttf"),
        probabilities=tuple(float(p) for p in probs) if probs is not None else None,
    )


def load_case(source: str | Path) -> Case:
    """Parse a TOML case document (text) or a path to one."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith(".toml")):
        source = Path(source).read_text()
    try:
        doc = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise CaseError(f"case file parse error: {exc}") from None
    return case_from_dict(doc)


def _opt(d: dict, key: str, val):
    if val is not None and not (isinstance(val, float) and math.isinf(val)):
        d[key] = val


def case_to_dict(case: Case) -> dict:
    net: dict = {"nodes": list(case.nodes), "horizon_hours": case.horizon_hours}
    _opt(net, "slack_node", case.slack_node)
    net["lines"] = []
    for ln in case.lines:
        t = {"id": ln.id, "from_node": ln.from_node, "to_node": ln.to_node, "f_max_mw": ln.f_max, "x_pu": ln.x}
        _opt(t, "mttf_h", ln.mttf)
        net["lines"].append(t)
    gens = []
    for g in case.generators:
        t = {
            "id": g.id, "node": g.node,
            "cost_eur_per_mwh": g.cost, "cost_r_eur_per_mwh": g.cost_r,
            "p_min_mw": g.p_min, "p_max_mw": g.p_max,
            "ramp_down_mw": g.ramp_down, "ramp_up_mw": g.ramp_up,
            "emergency_ramp_mw": g.emergency_ramp, "w_eur": g.w,
        }
        _opt(t, "mttf_h", g.mttf)
        _opt(t, "p_market_mw", g.p_market)
        gens.append(t)
    dems = [{"id": d.id, "node": d.node, "p_mw": d.p0, "voll_eur_per_mwh": d.voll} for d in case.demands]
    opts: dict = {"p_fail": case.p_fail, "probability_mode": case.probability_mode}
    if case.probabilities is not None:
        opts["probabilities"] = list(case.probabilities)
    return {"name": case.name, "network": net, "generators": gens, "demands": dems, "options": opts}


def serialize_case(case: Case) -> str:
    return tomli_w.dumps(case_to_dict(case))


def builtin_case(name: str) -> Case:
    if name not in BUILTIN:
        raise CaseError(f"unknown builtin case {name!r}; choose from {', '.join(BUILTIN)}")
    text = resources.files("probsec").joinpath("data", f"{name}.toml").read_text()
    return load_case(text)


def resolve_case(ref: str) -> Case:
    """A builtin name or a path to a case file."""
    if ref in BUILTIN:
        return builtin_case(ref)
    p = Path(ref)
    if not p.exists():
        raise CaseError(f"no such case file or builtin: {ref}")
    return load_case(p.read_text())
