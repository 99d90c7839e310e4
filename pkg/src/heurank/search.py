"""Best-first forward search with merit ``alpha * g + beta * h``.

A* is ``alpha = beta = 1``, GBFS is ``alpha = 0, beta = 1``.  Full duplicate
detection, goal test when a state is popped, optional reopening of closed
states.  The Open list is a binary heap with lazy deletion of stale entries;
counters follow the eager decrease-key semantics.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

from .domains import Plan, encode_state, is_goal, successors

TIE_POLICIES = ("lifo", "fifo", "lower_g", "higher_g")


class CertificationInconclusive(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 1.0
    beta: float = 1.0
    reopening: bool = True
    tie_policy: str = "lifo"
    expansion_budget: int = 100_000
    generated_budget: int | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("need alpha, beta >= 0 and alpha + beta > 0")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
        if self.expansion_budget < 0 or (self.generated_budget is not None and self.generated_budget <= 0):
            raise ValueError("budgets must be positive")

    @classmethod
    def astar(cls, **kw) -> "SearchConfig":
        return cls(alpha=1.0, beta=1.0, **kw)

    @classmethod
    def gbfs(cls, **kw) -> "SearchConfig":
        kw.setdefault("reopening", False)
        return cls(alpha=0.0, beta=1.0, **kw)


@dataclass
class SearchResult:
    status: str  # solved | budget_exhausted | exhausted_open
    plan: Plan | None
    expanded_count: int
    generated_count: int
    reopened_count: int
    expansion_order: list = field(default_factory=list)
    g_values: dict = field(default_factory=dict, repr=False)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def to_json(self, trace: bool = False) -> dict:
        out = {
            "status": self.status,
            "cost": self.plan.total_cost if self.plan else None,
            "length": self.plan.length if self.plan else None,
            "expanded": self.expanded_count,
            "generated": self.generated_count,
            "reopened": self.reopened_count,
        }
        if trace:
            out["expansion_order"] = [encode_state(s) for s in self.expansion_order]
        return out


def _tie_key(policy, g, counter):
    if policy == "lifo":
        return (-counter,)
    if policy == "fifo":
        return (counter,)
    if policy == "lower_g":
        return (g, -counter)
    return (-g, -counter)


def forward_search(instance, h: Callable, cfg: SearchConfig = SearchConfig()) -> SearchResult:
    alpha, beta, policy = cfg.alpha, cfg.beta, cfg.tie_policy
    counter = itertools.count()
    s0 = instance.initial_state
    g = {s0: 0.0}
    parent = {s0: None}
    hcache = {}

    def merit(s, gs):
        if beta == 0:
            return alpha * gs
        hv = hcache.get(s)
        if hv is None:
            hv = hcache[s] = float(h(s))
        return alpha * gs + beta * hv

    open_entry = {}  # state -> live heap entry id
    heap = []

    def push(s):
        c = next(counter)
        open_entry[s] = c
        heapq.heappush(heap, (merit(s, g[s]), _tie_key(policy, g[s], c), c, s))

    push(s0)
    closed = set()
    order = []
    generated = reopened = 0
    status = "exhausted_open"
    goal = None
    while heap:
        _, _, c, s = heapq.heappop(heap)
        if open_entry.get(s) != c:
            continue  # stale
        del open_entry[s]
        if is_goal(instance, s):
            status, goal = "solved", s
            break
        if len(order) >= cfg.expansion_budget or (
                cfg.generated_budget is not None and generated >= cfg.generated_budget):
            status = "budget_exhausted"
            break
        closed.add(s)
        order.append(s)
        gs = g[s]
        for t, w in successors(instance, s):
            generated += 1
            gt = gs + w
            if t in closed:
                if gt < g[t] and cfg.reopening:
                    closed.discard(t)
                    reopened += 1
                else:
                    continue
            elif t in open_entry:
                if not gt < g[t]:
                    continue
            g[t] = gt
            parent[t] = (s, w)
            push(t)

    plan = None
    if goal is not None:
        edges = []
        x = goal
        while parent[x] is not None:
            p, w = parent[x]
            edges.append((p, x, w))
            x = p
        plan = Plan(tuple(reversed(edges)))
    return SearchResult(status, plan, len(order), generated, reopened, order, g)


def validate_plan_diagnostics(instance, plan: Plan) -> str | None:
    """First violation found in ``plan`` or ``None`` when it solves the instance."""
    s = instance.initial_state
    for i, (a, b, c) in enumerate(plan.edges):
        if a != s:
            return f"edge {i} starts at {a!r}, expected {s!r}"
        costs = [w for t, w in successors(instance, a) if t == b]
        if not costs:
            return f"edge {i}: {a!r} -> {b!r} is not a transition"
        if not any(abs(w - c) <= 1e-9 for w in costs):
            return f"edge {i}: cost {c} not in {costs}"
        s = b
    if not is_goal(instance, s):
        return f"final state {s!r} is not a goal"
    return None


def validate_plan(instance, plan: Plan) -> bool:
    return validate_plan_diagnostics(instance, plan) is None


def certify_strict_optimal_efficiency(instance, h, cfg: SearchConfig) -> dict:
    """Run the search and check that it expanded exactly the states of the returned plan, in order."""
    res = forward_search(instance, h, cfg)
    if not res.solved:
        raise CertificationInconclusive(f"{instance.instance_id}: search ended with {res.status}")
    path = res.plan.states(instance.initial_state)[:-1]
    certified = res.expanded_count == res.plan.length and res.expansion_order == path
    return {"certified": certified, "expanded": res.expanded_count, "plan_length": res.plan.length,
            "cost": res.plan.total_cost}


def result_line(instance_id, res: SearchResult, trace=False) -> str:
    return json.dumps({"instance_id": instance_id, **res.to_json(trace)})
