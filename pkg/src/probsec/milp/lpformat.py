"""CPLEX-LP text emission/parsing and solution-file reading.

Only the subset this package writes is parsed back: one objective, linear
rows with a single sense and numeric rhs, a Bounds section and a Binaries
section.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .model import INF, LinExpr, MilpModel, MilpSolution, ModelError, Status

_BAD = re.compile(r"[^A-Za-z0-9_.()#$%&/,;?@{}|~!'`]")


def lp_name(name: str) -> str:
    s = name.replace("[", "(").replace("]", ")")
    s = _BAD.sub("_", s)
    if s[0].isdigit() or s[0] in ".eE":
        s = "_" + s
    return s


def _num(a: float) -> str:
    return repr(float(a))


def _terms(coeffs: dict[int, float], names: list[str]) -> str:
    if not coeffs:
        return "0 " + names[0] if names else "0"
    parts = []
    for i, a in sorted(coeffs.items()):
        sign = "-" if a < 0 else "+"
        parts.append(f"{sign} {_num(abs(a))} {names[i]}")
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def write_lp(model: MilpModel) -> str:
    names = [lp_name(n) for n in model.var_names]
    if len(set(names)) != len(names):
        raise ModelError("variable names collide after LP-format sanitising")
    out = [f"\\ {model.name}", "Minimize"]
    obj = _terms(model.objective.terms, names)
    if model.objective.const:
        c = model.objective.const
        obj += f" {'-' if c < 0 else '+'} {_num(abs(c))}"
    out.append(f" obj: {obj}")
    out.append("Subject To")
    sense = {"<=": "<=", ">=": ">=", "==": "="}
    for row in model.rows:
        out.append(f" {lp_name(row.name)}: {_terms(row.coeffs, names)} {sense[row.sense]} {_num(row.rhs)}")
    out.append("Bounds")
    for i, nm in enumerate(names):
        lo, hi = model.lb[i], model.ub[i]
        if lo == -INF and hi == INF:
            out.append(f" {nm} free")
        elif lo == hi:
            out.append(f" {nm} = {_num(lo)}")
        else:
            los = "-inf" if lo == -INF else _num(lo)
            his = "+inf" if hi == INF else _num(hi)
            out.append(f" {los} <= {nm} <= {his}")
    bins = [names[i] for i in model.binaries]
    if bins:
        out.append("Binaries")
        for k in range(0, len(bins), 8):
            out.append(" " + " ".join(bins[k:k + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


def _declare(name: str, index: dict[str, int], model: MilpModel) -> int:
    if name not in index:
        index[name] = model.add_var(name, 0.0, INF).index
    return index[name]


def _parse_expr(text: str, index: dict[str, int], model: MilpModel) -> tuple[dict[int, float], float]:
    coeffs: dict[int, float] = {}
    const = 0.0
    toks = text.split()
    sign = 1.0
    coef = None
    for t in toks:
        if t == "+":
            sign = 1.0
            continue
        if t == "-":
            sign = -1.0
            continue
        try:
            coef = float(t)
            continue
        except ValueError:
            pass
        i = _declare(t, index, model)
        coeffs[i] = coeffs.get(i, 0.0) + sign * (1.0 if coef is None else coef)
        sign, coef = 1.0, None
    if coef is not None:
        const += sign * coef
    return coeffs, const


def parse_lp(text: str) -> MilpModel:
    """Parse LP text produced by :func:`write_lp` back into a model."""
    lines = [ln.strip() for ln in text.splitlines()]
    name = "model"
    section = None
    model = MilpModel(name)
    index: dict[str, int] = {}
    buf = ""
    obj_text = ""
    rows: list[str] = []
    bounds: list[str] = []
    bins: list[str] = []
    for ln in lines:
        if not ln:
            continue
        if ln.startswith("\\"):
            name = ln[1:].strip() or name
            continue
        low = ln.lower()
        if low in ("minimize", "minimise", "min"):
            section = "obj"
            continue
        if low in ("subject to", "st", "s.t."):
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binaries", "binary", "bin"):
            section = "bins"
            continue
        if low == "end":
            break
        if section == "obj":
            obj_text += " " + ln
        elif section == "rows":
            buf += " " + ln
            if re.search(r"(<=|>=|=)\s*[-+]?[0-9.eE+-]+\s*$", buf):
                rows.append(buf.strip())
                buf = ""
        elif section == "bounds":
            bounds.append(ln)
        elif section == "bins":
            bins.extend(ln.split())
        else:
            raise ModelError(f"unexpected text outside sections: {ln!r}")
    model.name = name

    pending_rows = []
    for r in rows:
        label, _, body = r.partition(":")
        m = re.match(r"(.*?)(<=|>=|=)\s*([-+]?[0-9.eE+-]+)\s*$", body)
        if not m:
            raise ModelError(f"cannot parse row {r!r}")
        pending_rows.append((label.strip(), m.group(1), m.group(2), float(m.group(3))))

    for bl in bounds:
        toks = bl.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            i = _declare(toks[0], index, model)
            model.lb[i], model.ub[i] = -INF, INF
        elif len(toks) == 3 and toks[1] == "=":
            i = _declare(toks[0], index, model)
            model.lb[i] = model.ub[i] = float(toks[2])
        elif len(toks) == 5:
            i = _declare(toks[2], index, model)
            model.lb[i] = -INF if toks[0] == "-inf" else float(toks[0])
            model.ub[i] = INF if toks[4] == "+inf" else float(toks[4])
        else:
            raise ModelError(f"cannot parse bound {bl!r}")
    _, _, obj_body = obj_text.partition(":")
    oc, oconst = _parse_expr(obj_body, index, model)
    parsed = []
    for label, lhs, sense, rhs in pending_rows:
        co, k = _parse_expr(lhs, index, model)
        parsed.append((label, co, {"=": "=="}.get(sense, sense), rhs - k))
    for b in bins:
        _declare(b, index, model)
    for b in bins:
        i = index[b]
        model.binary[i] = True
        model.lb[i] = max(model.lb[i], 0.0)
        model.ub[i] = min(model.ub[i], 1.0)
    model.set_objective(LinExpr(oc, oconst))
    for label, co, sense, rhs in parsed:
        model.add_constr(LinExpr(co), sense, rhs, label)
    return model


def read_solution(text: str, model: MilpModel) -> MilpSolution:
    """Read ``name value`` pairs (or CBC-style ``idx name value ...`` rows).

    Variables missing from the file are taken as zero; the objective is
    recomputed from the model.
    """
    names = {lp_name(n): i for i, n in enumerate(model.var_names)}
    names.update({n: i for i, n in enumerate(model.var_names)})
    x = np.zeros(model.num_vars)
    status = Status.OPTIMAL
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith(("#", "\\")):
            continue
        low = ln.lower()
        if "infeasible" in low:
            status = Status.INFEASIBLE
            continue
        if low.startswith(("optimal", "objective", "status")):
            continue
        toks = ln.replace("**", "").split()
        if len(toks) >= 3 and toks[0].isdigit() and toks[1] in names:
            nm, val = toks[1], toks[2]
        elif len(toks) >= 2 and toks[0] in names:
            nm, val = toks[0], toks[1]
        else:
            continue
        x[names[nm]] = float(val)
    obj = model.objective.value(x) if status == Status.OPTIMAL else math.inf
    return MilpSolution(status, x, obj, var_names=model.var_names)
