"""Open lists met when only the states of a given optimal plan are expanded.

A :class:`RankingTrace` records, for every step ``i`` of the plan, the on-path
state ``s_i`` popped at that step together with every other state sitting in
the Open list at that moment (with its current ``g``).  Training records for
each loss are compiled from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domains import FORMAT_VERSION, Plan, decode_state, encode_state, features, is_goal, successors
from .search import validate_plan_diagnostics

LOSS_KINDS = ("lstar", "lgbfs", "rank", "lrt", "l2", "lbe")
EPS = 1e-9


class TraceError(ValueError):
    pass


class LabelError(KeyError):
    def __init__(self, states):
        self.states = list(states)
        super().__init__(f"missing cost-to-goal labels for {self.states!r}")


@dataclass(frozen=True)
class Step:
    i: int
    on_path: object
    g_on_path: float
    off_path: tuple  # ((state, g), ...)


@dataclass
class StateEntry:
    state: object
    features: np.ndarray
    h_star: float | None = None  # inf marks a dead end


class LabelStore:
    """h* labels of a trace; counts every lookup so callers can prove labels were not needed."""

    def __init__(self, labels=None):
        self._labels = dict(labels or {})
        self.lookups = 0

    def __contains__(self, s):
        self.lookups += 1
        return s in self._labels

    def get(self, s):
        self.lookups += 1
        return self._labels.get(s)

    def set(self, s, value):
        self._labels[s] = value

    def items(self):
        return self._labels.items()


@dataclass
class RankingTrace:
    instance_id: str
    plan: Plan
    start: object
    steps: list
    state_table: dict  # state -> StateEntry
    children: dict  # on-path state -> [successor states]
    labels: LabelStore = field(default_factory=LabelStore)

    @property
    def path(self) -> list:
        return self.plan.states(self.start)

    def key(self, s):
        return (self.instance_id, s)

    def to_json(self) -> dict:
        enc = encode_state
        return {
            "format_version": FORMAT_VERSION,
            "instance_id": self.instance_id,
            "start": enc(self.start),
            "plan": [[enc(a), enc(b), c] for a, b, c in self.plan.edges],
            "steps": [{"i": st.i, "on_path": enc(st.on_path), "g": st.g_on_path,
                       "off_path": [[enc(s), gv] for s, gv in st.off_path]} for st in self.steps],
            "children": [[enc(s), [enc(t) for t in ch]] for s, ch in self.children.items()],
            "state_table": [{"state": enc(e.state), "features": e.features.tolist(),
                             "h_star": _label_json(self.labels, e.state)} for e in self.state_table.values()],
        }

    @classmethod
    def from_json(cls, obj) -> "RankingTrace":
        dec = decode_state
        plan = Plan(tuple((dec(a), dec(b), float(c)) for a, b, c in obj["plan"]))
        steps = [Step(st["i"], dec(st["on_path"]), st["g"], tuple((dec(s), gv) for s, gv in st["off_path"]))
                 for st in obj["steps"]]
        table, labels = {}, LabelStore()
        for e in obj["state_table"]:
            s = dec(e["state"])
            table[s] = StateEntry(s, np.asarray(e["features"], dtype=float))
            if e["h_star"] is not None:
                labels.set(s, math.inf if e["h_star"] == "deadend" else float(e["h_star"]))
        children = {dec(s): [dec(t) for t in ch] for s, ch in obj["children"]}
        return cls(obj["instance_id"], plan, dec(obj["start"]), steps, table, children, labels)


def _label_json(labels, s):
    if s not in labels._labels:
        return None
    v = labels._labels[s]
    return "deadend" if math.isinf(v) else v


def ranking_trace(instance, plan: Plan, goal_step: bool = True) -> RankingTrace:
    """Simulate the forward search that expands exactly the non-goal states of ``plan``.

    ``goal_step=False`` drops the Open list in which the goal itself is selected;
    with goal testing at pop time that step is required for efficiency, so the
    default keeps it.
    """
    why = validate_plan_diagnostics(instance, plan)
    if why is not None:
        raise TraceError(f"{instance.instance_id}: invalid plan: {why}")
    path = plan.states(instance.initial_state)
    if len(set(path)) != len(path):
        raise TraceError(f"{instance.instance_id}: plan revisits a state")
    open_g = {path[0]: 0.0}
    closed = set()
    prefix = 0.0
    steps = []
    children = {}
    for i in range(1, len(path)):
        s = path[i - 1]
        del open_g[s]
        closed.add(s)
        gs = prefix
        kids = []
        for t, w in successors(instance, s):
            kids.append(t)
            if t in closed:
                continue
            gt = gs + w
            if t not in open_g or gt < open_g[t]:
                open_g[t] = gt
        children[s] = kids
        prefix += plan.edges[i - 1][2]
        si = path[i]
        if si not in open_g:
            raise TraceError(f"{instance.instance_id}: step {i} state not generated")
        if open_g[si] < prefix - EPS:
            raise TraceError(f"{instance.instance_id}: plan is not optimal at step {i}")
        if i == len(path) - 1 and not goal_step:
            break
        off = tuple((t, gt) for t, gt in open_g.items() if t != si)
        steps.append(Step(i, si, prefix, off))
    goal = path[-1]
    children[goal] = [t for t, _ in successors(instance, goal)]

    table = {}
    for s in path:
        table.setdefault(s, StateEntry(s, features(instance, s)))
        for t in children[s]:
            table.setdefault(t, StateEntry(t, features(instance, t)))
    return RankingTrace(instance.instance_id, plan, instance.initial_state, steps, table, children)


def label_trace(trace: RankingTrace, instance, include_off_path: bool = False):
    """Fill h* labels for on-path states (and optionally every other table state) from the oracle."""
    from .oracle import cost_to_goal

    wanted = list(dict.fromkeys(trace.path))
    if include_off_path:
        wanted += [s for s in trace.state_table if s not in set(wanted)]
    table = cost_to_goal(instance, wanted)
    for s in wanted:
        trace.labels.set(s, table[s])
    return trace


@dataclass(frozen=True)
class TrainingRecord:
    kind: str  # pair | path_transition | labeled_state | parent_children
    instance_id: str
    states: tuple  # pair: (s_i, s_j); transition: (parent, child); labeled: (s,); bundle: (s, *children)
    g: tuple = ()  # pair: (g_i, g_j)
    h_star: float | None = None
    deadend: bool = False

    def keys(self):
        return [(self.instance_id, s) for s in self.states]


def training_records(trace: RankingTrace, loss_kind: str, include_off_path: bool = False,
                     deadend_label: float | None = None) -> list:
    """Supervision units for ``loss_kind``.

    Ranking losses (``lstar``, ``lgbfs``, ``rank``) never consult h* labels.
    ``include_off_path`` extends ``l2`` to every state of the trace table; dead
    ends then need ``deadend_label`` (a finite cap) or a :class:`LabelError` is raised.
    """
    iid = trace.instance_id
    if loss_kind in ("lstar", "lgbfs", "rank"):
        return [TrainingRecord("pair", iid, (st.on_path, sj), (st.g_on_path, gj))
                for st in trace.steps for sj, gj in st.off_path]
    path = trace.path
    if loss_kind == "lrt":
        return [TrainingRecord("path_transition", iid, (a, b)) for a, b in zip(path[:-1], path[1:])]
    if loss_kind == "l2":
        states = list(path)
        if include_off_path:
            states += [s for s in trace.state_table if s not in set(path)]
        return _labeled(trace, states, deadend_label)
    if loss_kind == "lbe":
        labels = _labels_for(trace, path)
        return [TrainingRecord("parent_children", iid, (s, *trace.children[s]), h_star=labels[s])
                for s in path]
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _labels_for(trace, states):
    vals, missing = {}, []
    for s in states:
        v = trace.labels.get(s)
        if v is None:
            missing.append(s)
        vals[s] = v
    if missing:
        raise LabelError(missing)
    return vals


def _labeled(trace, states, deadend_label):
    labels = _labels_for(trace, states)
    dead = [s for s in states if math.isinf(labels[s])]
    if dead and deadend_label is None:
        raise LabelError(dead)
    out = []
    for s in states:
        v = labels[s]
        if math.isinf(v):
            out.append(TrainingRecord("labeled_state", trace.instance_id, (s,), h_star=float(deadend_label),
                                      deadend=True))
        else:
            out.append(TrainingRecord("labeled_state", trace.instance_id, (s,), h_star=float(v)))
    return out


def count_pairs(traces) -> int:
    return sum(len(st.off_path) for t in traces for st in t.steps)
