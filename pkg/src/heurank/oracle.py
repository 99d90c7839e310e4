"""Ground truth: optimal plans, exact cost-to-goal and enumeration of all optimal plans.

Deliberately independent of :mod:`heurank.search` so the engine can be checked
against it.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math

from .domains import Plan, encode_state, decode_state, is_goal, predecessors, successors, FORMAT_VERSION

DEFAULT_CAP = 2_000_000
EPS = 1e-9


class NoPlanError(RuntimeError):
    pass


class OracleCapacityError(RuntimeError):
    pass


class CostToGoalTable(dict):
    """Map state -> exact cost-to-goal.  Dead ends are stored as ``math.inf``."""

    def is_dead_end(self, s) -> bool:
        return math.isinf(self[s])

    def finite_max(self) -> float:
        return max((v for v in self.values() if not math.isinf(v)), default=0.0)

    def capped(self, s) -> float:
        """Label usable by a regression loss: dead ends become twice the largest finite value."""
        v = self[s]
        return 2.0 * self.finite_max() if math.isinf(v) else v


def _manhattan_lb(instance):
    sp = instance.space
    if instance.domain_tag == "sliding_puzzle":
        return sp.manhattan
    if instance.domain_tag == "oneway_grid":
        return lambda s: s[0] + s[1]
    return None


def _best_first(instance, start, cap, lb=None):
    """Dijkstra (or A* when ``lb`` is a consistent lower bound). Returns (goal, g, parent) or None."""
    lb = lb or (lambda s: 0.0)
    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    tie = itertools.count()
    heap = [(lb(start), next(tie), start)]
    while heap:
        f, _, s = heapq.heappop(heap)
        if s in closed:
            continue
        if is_goal(instance, s):
            return s, g, parent
        closed.add(s)
        if len(closed) > cap:
            raise OracleCapacityError(f"{instance.instance_id}: more than {cap} expansions")
        gs = g[s]
        for t, c in successors(instance, s):
            nt = gs + c
            if t not in g or nt < g[t] - EPS:
                g[t] = nt
                parent[t] = (s, c)
                heapq.heappush(heap, (nt + lb(t), next(tie), t))
    return None


def _walk_back(parent, goal) -> Plan:
    edges = []
    s = goal
    while parent[s] is not None:
        p, c = parent[s]
        edges.append((p, s, c))
        s = p
    return Plan(tuple(reversed(edges)))


def optimal_solve(instance, cap: int = DEFAULT_CAP, use_lower_bound: bool = True) -> Plan:
    lb = _manhattan_lb(instance) if use_lower_bound else None
    res = _best_first(instance, instance.initial_state, cap, lb)
    if res is None:
        raise NoPlanError(f"{instance.instance_id}: no plan")
    goal, _, parent = res
    return _walk_back(parent, goal)


def optimal_cost(instance, cap: int = DEFAULT_CAP) -> float:
    return optimal_solve(instance, cap).total_cost


def reachable_goal(instance, cap: int = DEFAULT_CAP) -> bool:
    try:
        return _best_first(instance, instance.initial_state, cap) is not None
    except OracleCapacityError:
        return False


def reachable_graph(instance, cap: int = DEFAULT_CAP, start=None):
    """Forward closure from ``start``: adjacency dict state -> [(succ, cost)]."""
    start = instance.initial_state if start is None else start
    adj = {}
    stack = [start]
    while stack:
        s = stack.pop()
        if s in adj:
            continue
        if len(adj) >= cap:
            raise OracleCapacityError(f"{instance.instance_id}: reachable set exceeds {cap}")
        adj[s] = successors(instance, s)
        stack.extend(t for t, _ in adj[s] if t not in adj)
    return adj


def _backward_dijkstra(goals, preds):
    dist = {}
    tie = itertools.count()
    heap = [(0.0, next(tie), s) for s in goals]
    while heap:
        d, _, s = heapq.heappop(heap)
        if s in dist:
            continue
        dist[s] = d
        for p, c in preds(s):
            if p not in dist:
                heapq.heappush(heap, (d + c, next(tie), p))
    return dist


def cost_to_goal(instance, states=None, cap: int = DEFAULT_CAP) -> CostToGoalTable:
    """Exact h* over ``states`` (default: every state reachable from the initial state)."""
    per_state = instance.domain_tag in ("sokoban_lite", "sliding_puzzle") and states is not None
    if per_state:
        lb = _manhattan_lb(instance)
        table = CostToGoalTable()
        for s in states:
            res = _best_first(instance, s, cap, lb)
            table[s] = math.inf if res is None else res[1][res[0]]
        return table

    roots = [instance.initial_state] if states is None else list(states)
    adj = {}
    for r in roots:
        if r not in adj:
            adj.update(reachable_graph(instance, cap, start=r))
    goals = [s for s in adj if is_goal(instance, s)]
    if predecessors(instance, instance.initial_state) is not None and instance.domain_tag != "sokoban_lite":
        # closure is enough to bound the backward sweep; use the domain's inverse moves
        def preds(s):
            return [(p, c) for p, c in predecessors(instance, s) if p in adj]
    else:
        radj = {s: [] for s in adj}
        for s, out in adj.items():
            for t, c in out:
                radj[t].append((s, c))

        def preds(s):
            return radj[s]
    dist = _backward_dijkstra(goals, preds)
    table = CostToGoalTable()
    for s in (adj if states is None else roots):
        table[s] = dist.get(s, math.inf)
    return table


def enumerate_optimal_plans(instance, limit: int = 10_000, cap: int = DEFAULT_CAP):
    """All distinct optimal plans (up to ``limit``).  Returns ``(plans, truncated)``."""
    hstar = cost_to_goal(instance, cap=cap)
    s0 = instance.initial_state
    fstar = hstar[s0]
    if math.isinf(fstar):
        raise NoPlanError(f"{instance.instance_id}: no plan")
    plans = []
    truncated = False

    def dfs(s, g, edges, on_path):
        nonlocal truncated
        if truncated:
            return
        if is_goal(instance, s) and abs(g - fstar) <= EPS:
            if len(plans) >= limit:
                truncated = True
                return
            plans.append(Plan(tuple(edges)))
            # zero-cost continuations past a goal are also distinct optimal plans
        for t, c in successors(instance, s):
            if t in on_path or t not in hstar:
                continue
            if abs(g + c + hstar[t] - fstar) <= EPS:
                on_path.add(t)
                edges.append((s, t, c))
                dfs(t, g + c, edges, on_path)
                edges.pop()
                on_path.discard(t)

    dfs(s0, 0.0, [], {s0})
    return plans, truncated


def write_hstar(path_or_file, instance_id, table: CostToGoalTable):
    entries = [[encode_state(s), "deadend" if math.isinf(v) else v] for s, v in table.items()]
    line = json.dumps({"format_version": FORMAT_VERSION, "instance_id": instance_id, "entries": entries})
    if hasattr(path_or_file, "write"):
        path_or_file.write(line + "\n")
    else:
        with open(path_or_file, "a") as f:
            f.write(line + "\n")


def read_hstar_line(obj) -> CostToGoalTable:
    t = CostToGoalTable()
    for s, v in obj["entries"]:
        t[decode_state(s)] = math.inf if v == "deadend" else float(v)
    return t
