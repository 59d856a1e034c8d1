"""Budgeted interventions: allocation rules, control transforms and policy comparisons."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ActiveControl, CommunityModel, SystemState, Trace, simulate
from .errors import AdoptDynError, MissingGraph
from .network import in_degree_centrality, pagerank

logger = logging.getLogger(__name__)


class Kind(str, enum.Enum):
    OPINION = "opinion"
    DISSATISFACTION = "dissatisfaction"
    NONE = "none"


class Rule(str, enum.Enum):
    SIZE = "size"
    MOBILITY = "mobility"
    INDEGREE = "indegree"
    PAGERANK = "pagerank"


@dataclass(frozen=True)
class ControlPolicy:
    kind: Kind = Kind.NONE
    rule: Rule = Rule.SIZE
    budget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "budget", float(self.budget))
        if not self.budget >= 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")

    @property
    def label(self) -> str:
        if self.kind is Kind.NONE:
            return "baseline"
        return f"{self.kind.value}-{self.rule.value}-{self.budget:g}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "rule": self.rule.value, "budget": self.budget}


def allocation_weights(rule: Rule, model: CommunityModel, graph=None) -> np.ndarray:
    rule = Rule(rule)
    if rule is Rule.SIZE:
        return np.asarray(model.f, dtype=float)
    if rule is Rule.MOBILITY:
        return model.m * model.f
    if graph is None:
        raise MissingGraph(f"allocation rule {rule.value!r} needs a similarity graph")
    if rule is Rule.INDEGREE:
        return in_degree_centrality(graph)[0]
    return pagerank(graph)


def allocate(rule: Rule, budget: float, model: CommunityModel, graph=None) -> np.ndarray:
    """Split ``budget`` across communities proportionally to the rule's weights.

    The rounding residue goes to the largest allocation, so the entries sum to
    ``budget`` exactly in floating point whenever that is representable.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    w = allocation_weights(rule, model, graph)
    if budget == 0:
        return np.zeros(model.n)
    total = w.sum()
    if not total > 0:
        raise ValueError(f"allocation weights for rule {Rule(rule).value!r} sum to zero")
    u = budget * (w / total)
    k = int(np.argmax(u))
    u[k] = 0.0
    u[k] = max(budget - u.sum(), 0.0)
    return u


def apply_opinion_control(x0, u) -> tuple[np.ndarray, float]:
    """Shifted anchor ``clip(x0 + u, 0, 1)`` and the total mass lost to clipping."""
    raw = np.asarray(x0, dtype=float) + np.asarray(u, dtype=float)
    shifted = np.clip(raw, 0.0, 1.0)
    return shifted, float(np.abs(raw - shifted).sum())


def apply_dissatisfaction_control(delta, u) -> tuple[np.ndarray, float]:
    """Effective dismissal rates ``delta * (1 - min(u, 1))`` and the budget stranded above 1."""
    u = np.asarray(u, dtype=float)
    return np.asarray(delta, dtype=float) * (1.0 - np.minimum(u, 1.0)), float(np.maximum(u - 1.0, 0.0).sum())


def control_for(policy: ControlPolicy, model: CommunityModel, x0, graph=None) -> Optional[ActiveControl]:
    if policy.kind is Kind.NONE:
        return None
    u = allocate(policy.rule, policy.budget, model, graph)
    if policy.kind is Kind.OPINION:
        anchor, clipped = apply_opinion_control(x0, u)
        return ActiveControl(anchor=anchor, clipped_mass=clipped)
    delta, stranded = apply_dissatisfaction_control(model.delta, u)
    return ActiveControl(delta=delta, stranded_budget=stranded)


@dataclass
class PolicyOutcome:
    policy: ControlPolicy
    trace: Optional[Trace] = None
    final_susceptible: float = float("nan")
    final_adopters: float = float("nan")
    final_dissatisfied: float = float("nan")
    final_mean_opinion: float = float("nan")
    clipped_mass: float = 0.0
    stranded_budget: float = 0.0
    error: Optional[str] = None

    @classmethod
    def from_trace(cls, policy, trace, control=None) -> "PolicyOutcome":
        s, a, d, x = (float(v) for v in trace.final_aggregates)
        return cls(policy, trace, s, a, d, x,
                   0.0 if control is None else control.clipped_mass,
                   0.0 if control is None else control.stranded_budget)

    @property
    def ok(self) -> bool:
        return self.error is None

    def summary(self) -> dict:
        out = {"label": self.policy.label, **self.policy.to_dict(), "error": self.error,
               "final_susceptible": self.final_susceptible, "final_adopters": self.final_adopters,
               "final_dissatisfied": self.final_dissatisfied, "final_mean_opinion": self.final_mean_opinion,
               "clipped_mass": self.clipped_mass, "stranded_budget": self.stranded_budget,
               "converged": None if self.trace is None else self.trace.converged}
        if not self.ok:
            for k in ("final_susceptible", "final_adopters", "final_dissatisfied", "final_mean_opinion"):
                out[k] = None
        return out


def run_policy(policy: ControlPolicy, model: CommunityModel, x0, initial: SystemState, horizon: int,
               graph=None) -> PolicyOutcome:
    control = control_for(policy, model, x0, graph)
    trace = simulate(initial, model, horizon, control=control, x0=x0)
    return PolicyOutcome.from_trace(policy, trace, control)


def _rank_key(item):
    idx, outcome = item
    return (0 if outcome.ok else 1, -outcome.final_adopters if outcome.ok else 0.0, idx)


def compare(model: CommunityModel, x0, initial: SystemState, horizon: int, policies, graph=None) -> list:
    """Simulate every policy from the same state; outcomes ranked by final adopters, failures last.

    A policy that raises is recorded with its error message; the batch continues.
    """
    outcomes = []
    for policy in policies:
        try:
            outcomes.append(run_policy(policy, model, x0, initial, horizon, graph))
        except AdoptDynError as exc:
            logger.warning("policy %s failed: %s", policy.label, exc)
            outcomes.append(PolicyOutcome(policy, error=f"{type(exc).__name__}: {exc}"))
    return [o for _, o in sorted(enumerate(outcomes), key=_rank_key)]


def standard_policies(n: int, opinion_budget: Optional[float] = None, dissatisfaction_budget: Optional[float] = None):
    """Both intervention kinds under all four rules, budgets ``n`` and ``0.75 n`` by default."""
    ob = float(n) if opinion_budget is None else opinion_budget
    db = 0.75 * n if dissatisfaction_budget is None else dissatisfaction_budget
    return [ControlPolicy(Kind.OPINION, r, ob) for r in Rule] + [ControlPolicy(Kind.DISSATISFACTION, r, db) for r in Rule]


@dataclass
class SweepResult:
    kind: Kind
    budgets: list
    adopters: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def violations(self, tol: float = 1e-12) -> dict:
        """Per rule, the budget pairs where final adopters decreased."""
        out = {}
        for rule, vals in self.adopters.items():
            bad = [(self.budgets[i], self.budgets[i + 1]) for i in range(len(vals) - 1)
                   if vals[i] is not None and vals[i + 1] is not None and vals[i + 1] < vals[i] - tol]
            if bad:
                out[rule] = bad
        return out

    @property
    def monotone(self) -> bool:
        return not self.violations()

    def to_dict(self) -> dict:
        viol = self.violations()
        return {"intervention": self.kind.value, "budgets": list(self.budgets),
                "final_adopters": {r.value: v for r, v in self.adopters.items()},
                "errors": {r.value: e for r, e in self.errors.items()},
                "monotone": not viol,
                "violations": {r.value: [list(p) for p in v] for r, v in viol.items()}}


def budget_sweep(model: CommunityModel, x0, initial: SystemState, horizon: int, kind=Kind.DISSATISFACTION,
                 budgets=None, rules=tuple(Rule), graph=None) -> SweepResult:
    """Final adopters for every rule over a budget grid (default 0, n/4, n/2, 3n/4, n)."""
    kind = Kind(kind)
    budgets = [model.n * q for q in (0.0, 0.25, 0.5, 0.75, 1.0)] if budgets is None else [float(b) for b in budgets]
    res = SweepResult(kind, budgets)
    for rule in map(Rule, rules):
        vals, errs = [], []
        for b in budgets:
            try:
                vals.append(run_policy(ControlPolicy(kind, rule, b), model, x0, initial, horizon, graph).final_adopters)
                errs.append(None)
            except AdoptDynError as exc:
                vals.append(None)
                errs.append(f"{type(exc).__name__}: {exc}")
        res.adopters[rule] = vals
        res.errors[rule] = errs
    for rule, pairs in res.violations().items():
        logger.warning("final adopters not monotone in budget for rule %s at %s", rule.value, pairs)
    return res
