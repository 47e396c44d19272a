"""Linear model container, expressions and solution records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union

import numpy as np
from scipy import sparse

INF = math.inf

SENSES = ("<=", ">=", "==")


class ModelError(ValueError):
    """Raised for malformed models (unknown variables, bad bounds, NaN data)."""


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_ERROR = "numerical_error"


class LinExpr:
    """Sparse affine expression ``sum(coef * var) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[int, float] | None = None, const: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def of(x: "Operand") -> "LinExpr":
        if isinstance(x, LinExpr):
            return x
        if isinstance(x, Var):
            return LinExpr({x.index: 1.0})
        return LinExpr(const=float(x))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, var: "Var | int", coef: float) -> "LinExpr":
        i = var.index if isinstance(var, Var) else int(var)
        self.terms[i] = self.terms.get(i, 0.0) + float(coef)
        return self

    def __iadd__(self, other: "Operand") -> "LinExpr":
        o = LinExpr.of(other)
        for i, a in o.terms.items():
            self.terms[i] = self.terms.get(i, 0.0) + a
        self.const += o.const
        return self

    def __add__(self, other: "Operand") -> "LinExpr":
        out = self.copy()
        out += other
        return out

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return LinExpr({i: -a for i, a in self.terms.items()}, -self.const)

    def __sub__(self, other: "Operand") -> "LinExpr":
        return self + (-LinExpr.of(other))

    def __rsub__(self, other: "Operand") -> "LinExpr":
        return LinExpr.of(other) - self

    def __mul__(self, k: float) -> "LinExpr":
        k = float(k)
        return LinExpr({i: a * k for i, a in self.terms.items()}, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "LinExpr":
        return self * (1.0 / float(k))

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(a * x[i] for i, a in self.terms.items())

    def __repr__(self) -> str:
        body = " + ".join(f"{a:g}*x{i}" for i, a in sorted(self.terms.items()))
        return f"LinExpr({body or '0'} + {self.const:g})"


@dataclass(frozen=True, eq=False)
class Var:
    index: int
    name: str

    def _e(self) -> LinExpr:
        return LinExpr({self.index: 1.0})

    def __add__(self, o):
        return self._e() + o

    __radd__ = __add__

    def __sub__(self, o):
        return self._e() - o

    def __rsub__(self, o):
        return LinExpr.of(o) - self._e()

    def __mul__(self, k):
        return self._e() * k

    __rmul__ = __mul__

    def __neg__(self):
        return -self._e()

    def __truediv__(self, k):
        return self._e() / k


Operand = Union[LinExpr, Var, float, int]


@dataclass
class Row:
    name: str
    coeffs: dict[int, float]
    sense: str
    rhs: float


class MilpModel:
    """Minimisation model over continuous and binary variables.

    Constraints are stored row-wise as sparse dicts. ``big_m`` holds the
    constants used per constraint class so they can be audited after build.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.rows: list[Row] = []
        self.objective = LinExpr()
        self.big_m: dict[str, float] = {}
        self._by_name: dict[str, int] = {}

    # -- construction -------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = INF, binary: bool = False) -> Var:
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(0.0, lb), min(1.0, ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"bad bounds for {name}: [{lb}, {ub}]")
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        self._by_name[name] = idx
        return Var(idx, name)

    def add_constr(self, expr: Operand, sense: str, rhs: float = 0.0, name: str | None = None) -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        e = LinExpr.of(expr)
        coeffs = {i: a for i, a in e.terms.items() if a != 0.0}
        for i, a in coeffs.items():
            if not 0 <= i < len(self.var_names):
                raise ModelError(f"constraint {name!r} references undeclared variable x{i}")
            if not math.isfinite(a):
                raise ModelError(f"non-finite coefficient in {name!r}")
        r = float(rhs) - e.const
        if not math.isfinite(r):
            raise ModelError(f"non-finite rhs in {name!r}")
        self.rows.append(Row(name or f"c{len(self.rows)}", coeffs, sense, r))
        return len(self.rows) - 1

    def set_objective(self, expr: Operand) -> None:
        e = LinExpr.of(expr)
        for i, a in e.terms.items():
            if not 0 <= i < len(self.var_names) or not math.isfinite(a):
                raise ModelError("objective references undeclared variable or non-finite data")
        self.objective = e.copy()

    def fix(self, var: Var | int, value: float) -> None:
        i = var.index if isinstance(var, Var) else var
        self.lb[i] = self.ub[i] = float(value)

    def register_big_m(self, klass: str, value: float) -> float:
        if not value > 0:
            raise ModelError(f"big-M for {klass!r} must be positive, got {value}")
        self.big_m[klass] = float(value)
        return float(value)

    def copy(self) -> "MilpModel":
        m = MilpModel(self.name)
        m.var_names = list(self.var_names)
        m.lb, m.ub, m.binary = list(self.lb), list(self.ub), list(self.binary)
        m.rows = [Row(r.name, dict(r.coeffs), r.sense, r.rhs) for r in self.rows]
        m.objective = self.objective.copy()
        m.big_m = dict(self.big_m)
        m._by_name = dict(self._by_name)
        return m

    # -- queries ------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_constrs(self) -> int:
        return len(self.rows)

    @property
    def binaries(self) -> list[int]:
        return [i for i, b in enumerate(self.binary) if b]

    def var(self, name: str) -> Var:
        return Var(self._by_name[name], name)

    def relaxed(self) -> "MilpModel":
        m = self.copy()
        m.binary = [False] * m.num_vars
        return m

    def matrices(self):
        """Return ``(c, c0, A, row_lo, row_hi, lb, ub)`` with ``A`` in CSR form."""
        n, m = self.num_vars, self.num_constrs
        c = np.zeros(n)
        for i, a in self.objective.terms.items():
            c[i] += a
        data, ri, ci = [], [], []
        lo = np.full(m, -INF)
        hi = np.full(m, INF)
        for k, row in enumerate(self.rows):
            for i, a in row.coeffs.items():
                data.append(a)
                ri.append(k)
                ci.append(i)
            if row.sense in ("<=", "=="):
                hi[k] = row.rhs
            if row.sense in (">=", "=="):
                lo[k] = row.rhs
        A = sparse.csr_matrix((data, (ri, ci)), shape=(m, n))
        return c, self.objective.const, A, lo, hi, np.array(self.lb), np.array(self.ub)

    def violations(self, x: np.ndarray, tol: float = 1e-7, int_tol: float = 1e-6) -> list[str]:
        """Names of rows/bounds/integrality marks violated by ``x`` beyond ``tol``."""
        bad = []
        for i in range(self.num_vars):
            if x[i] < self.lb[i] - tol or x[i] > self.ub[i] + tol:
                bad.append(f"bound:{self.var_names[i]}")
            if self.binary[i] and min(abs(x[i]), abs(x[i] - 1.0)) > int_tol:
                bad.append(f"integrality:{self.var_names[i]}")
        for row in self.rows:
            act = sum(a * x[i] for i, a in row.coeffs.items())
            scale = max(1.0, abs(row.rhs))
            if row.sense == "<=" and act > row.rhs + tol * scale:
                bad.append(row.name)
            elif row.sense == ">=" and act < row.rhs - tol * scale:
                bad.append(row.name)
            elif row.sense == "==" and abs(act - row.rhs) > tol * scale:
                bad.append(row.name)
        return bad


@dataclass
class SolverOptions:
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    relative_gap: float = 1e-6
    node_limit: int = 100_000
    deterministic_seed: int = 0
    # "bnb": own branch-and-bound; "highs": scipy.optimize.milp
    backend: str = "bnb"
    # LP engine used by solve_lp and by bnb nodes: "simplex" (own) or "highs"
    lp_engine: str = "simplex"
    max_lp_iterations: int = 200_000

    def __post_init__(self):
        for k in ("feasibility_tol", "integrality_tol", "relative_gap"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if self.backend not in ("bnb", "highs"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.lp_engine not in ("simplex", "highs"):
            raise ValueError(f"unknown lp_engine {self.lp_engine!r}")


@dataclass
class MilpSolution:
    status: Status
    values: np.ndarray
    objective: float
    bound: float = -INF
    nodes: int = 0
    lp_iterations: int = 0
    var_names: list[str] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL

    def __getitem__(self, key: "Var | int | str") -> float:
        if isinstance(key, Var):
            return float(self.values[key.index])
        if isinstance(key, str):
            return float(self.values[self.var_names.index(key)])
        return float(self.values[key])

    def value(self, expr: Operand) -> float:
        return LinExpr.of(expr).value(self.values)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.var_names, self.values)}


def linearize_bin_times_free(model: MilpModel, lam: Var, theta: Var, M: float, name: str) -> Var:
    """Add ``t = lam * theta`` for binary ``lam`` and ``|theta| <= M``; return ``t``."""
    if not M > 0:
        raise ModelError("big-M must be positive")
    t = model.add_var(name, -M, M)
    model.add_constr(t - M * lam, "<=", 0.0, f"{name}:ub")
    model.add_constr(t + M * lam, ">=", 0.0, f"{name}:lb")
    model.add_constr(t - theta + M * lam, "<=", M, f"{name}:on_ub")
    model.add_constr(t - theta - M * lam, ">=", -M, f"{name}:on_lb")
    return t


def linearize_bin_times_nonneg(model: MilpModel, y: Var, P: Var, M: float, name: str) -> Var:
    """Add ``t = y * P`` for binary ``y`` and ``0 <= P <= M``; return ``t >= 0``."""
    if not M > 0:
        raise ModelError("big-M must be positive")
    t = model.add_var(name, 0.0, INF)
    model.add_constr(t - M * y, "<=", 0.0, f"{name}:ub")
    model.add_constr(t - P + M * y, "<=", M, f"{name}:on_ub")
    model.add_constr(t - P - M * y, ">=", -M, f"{name}:on_lb")
    return t


def quicksum(items: Iterable[Operand]) -> LinExpr:
    out = LinExpr()
    for it in items:
        out += it
    return out
