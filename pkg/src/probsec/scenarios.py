"""Contingency and corrective-control behaviour sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .case import Case

WORKING, FAILING = "working", "failing"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Contingency:
    """One exclusive event. ``kind`` is ``none``, ``line`` or ``gen``; ``index`` the outaged component."""

    id: int
    kind: str
    index: int | None
    pi: float
    label: str

    @property
    def tau(self) -> int:
        return 1 if self.kind == "gen" else 0

    @property
    def is_pseudo(self) -> bool:
        return self.kind == "none"

    def a_line(self, k: int) -> int:
        return 0 if self.kind == "line" and self.index == k else 1

    def a_gen(self, g: int) -> int:
        return 0 if self.kind == "gen" and self.index == g else 1


@dataclass(frozen=True)
class ContingencySet:
    contingencies: tuple[Contingency, ...]

    def __iter__(self):
        return iter(self.contingencies)

    def __len__(self):
        return len(self.contingencies)

    def __getitem__(self, i) -> Contingency:
        return self.contingencies[i]

    def by_id(self, cid: int) -> Contingency:
        for c in self.contingencies:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def outages(self) -> tuple[Contingency, ...]:
        return tuple(c for c in self.contingencies if not c.is_pseudo)

    def total(self) -> float:
        return math.fsum(c.pi for c in self.contingencies)

    def subset(self, keep) -> "ContingencySet":
        """Restrict to the pseudo-contingency plus outages accepted by ``keep``; ids are kept."""
        return ContingencySet(tuple(c for c in self.contingencies if c.is_pseudo or keep(c)))


@dataclass(frozen=True)
class BehaviorSet:
    working: float
    failing: float

    def items(self):
        return ((WORKING, self.working), (FAILING, self.failing))

    def __getitem__(self, b: str) -> float:
        return {WORKING: self.working, FAILING: self.failing}[b]


def behavior_set(p_fail: float) -> BehaviorSet:
    if not 0.0 <= p_fail <= 1.0:
        raise ScenarioError(f"p_fail must be in [0, 1], got {p_fail}")
    return BehaviorSet(1.0 - p_fail, p_fail)


def _events(case: Case):
    yield "none", None, "No Outage"
    for k, ln in enumerate(case.lines):
        yield "line", k, f"Line {ln.id} Outage"
    for g, gen in enumerate(case.generators):
        yield "gen", g, f"Gen {gen.id} Outage"


def outage_probabilities(case: Case) -> list[float]:
    """Product-form single-outage model with ``p_i = horizon / mttf_i``."""
    p = []
    for comp in (*case.lines, *case.generators):
        if not comp.mttf > case.horizon_hours:
            raise ScenarioError(f"component {comp.id}: mttf {comp.mttf} h must exceed the horizon")
        p.append(case.horizon_hours / comp.mttf)
    none = math.prod(1.0 - q for q in p)
    out = [none]
    for i, q in enumerate(p):
        others = math.prod(1.0 - r for j, r in enumerate(p) if j != i)
        out.append(q * others)
    return out


def build_contingencies(case: Case, mode: str | Sequence[float] | None = None) -> ContingencySet:
    """Pseudo-contingency first, then line outages, then generator outages.

    ``mode`` is ``"from_mttf"``, ``"explicit"`` (use the case's own list), a
    probability list, or ``None`` for the case default. Product-form
    probabilities only cover the no-outage and single-outage events, so they
    are completed to one by putting the remainder (multiple outages, outside
    the event set) on the pseudo-contingency.
    """
    if mode is None:
        mode = case.probability_mode
    if isinstance(mode, str):
        if mode == "from_mttf":
            raw = outage_probabilities(case)
            probs = [1.0 - math.fsum(raw[1:])] + raw[1:]
        elif mode == "explicit":
            if case.probabilities is None:
                raise ScenarioError("case has no explicit probabilities")
            probs = list(case.probabilities)
        else:
            raise ScenarioError(f"unknown probability mode {mode!r}")
    else:
        probs = [float(p) for p in mode]
    events = list(_events(case))
    if len(probs) != len(events):
        raise ScenarioError(f"{len(probs)} probabilities given for {len(events)} events")
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise ScenarioError("probabilities must lie in [0, 1]")
    if abs(math.fsum(probs) - 1.0) > 1e-3:
        raise ScenarioError(f"probabilities sum to {math.fsum(probs):.6f}, not 1")
    return ContingencySet(tuple(
        Contingency(i + 1, kind, idx, p, label) for i, ((kind, idx, label), p) in enumerate(zip(events, probs))
    ))


def availability(contingency: Contingency, component) -> int:
    """``component`` is ``("line", k)`` or ``("gen", g)``."""
    kind, idx = component
    if kind == "line":
        return contingency.a_line(idx)
    if kind == "gen":
        return contingency.a_gen(idx)
    raise ScenarioError(f"unknown component kind {kind!r}")
