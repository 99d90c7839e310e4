"""State spaces: the instance abstraction, five instance families, generators and features.

States are plain hashable Python values (strings for explicit graphs, nested
tuples for everything else) so they can be used directly as dict keys.  The
JSON form of a state is obtained with :func:`encode_state` and reversed with
:func:`decode_state`.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable

import numpy as np

StateId = Hashable

DOMAIN_TAGS = ("explicit_graph", "maze_teleport", "sliding_puzzle", "sokoban_lite", "oneway_grid")

FORMAT_VERSION = 1
GENERATION_RETRIES = 100


class EncodingError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


def encode_state(s):
    if isinstance(s, tuple):
        return [encode_state(x) for x in s]
    return s


def decode_state(obj):
    if isinstance(obj, list):
        return tuple(decode_state(x) for x in obj)
    return obj


@dataclass(frozen=True)
class Plan:
    edges: tuple  # of (from, to, cost)

    @classmethod
    def from_states(cls, instance: "ProblemInstance", states) -> "Plan":
        """Build a plan from a state sequence, taking the cheapest legal edge at each step."""
        edges = []
        for a, b in zip(states[:-1], states[1:]):
            costs = [c for t, c in successors(instance, a) if t == b]
            if not costs:
                raise ValueError(f"no transition {a!r} -> {b!r}")
            edges.append((a, b, min(costs)))
        return cls(tuple(edges))

    @property
    def total_cost(self) -> float:
        return float(sum(e[2] for e in self.edges))

    @property
    def length(self) -> int:
        return len(self.edges)

    def states(self, start=None) -> list:
        if not self.edges:
            return [] if start is None else [start]
        return [self.edges[0][0]] + [e[1] for e in self.edges]

    def to_json(self, instance_id: str, start=None) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "instance_id": instance_id,
            "cost": self.total_cost,
            "length": self.length,
            "states": [encode_state(s) for s in self.states(start)],
            "costs": [e[2] for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Plan":
        _check_version(obj)
        states = [decode_state(s) for s in obj["states"]]
        costs = obj.get("costs") or [1.0] * (len(states) - 1)
        return cls(tuple((a, b, float(c)) for a, b, c in zip(states[:-1], states[1:], costs)))


@dataclass(frozen=True)
class ProblemInstance:
    instance_id: str
    domain_tag: str
    params: dict
    payload: dict
    initial_state: Any
    goal_spec: dict

    def __post_init__(self):
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain {self.domain_tag!r}")

    @cached_property
    def space(self) -> "_Space":
        return _SPACES[self.domain_tag](self)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "instance_id": self.instance_id,
            "domain_tag": self.domain_tag,
            "params": self.params,
            "payload": self.payload,
            "initial_state": encode_state(self.initial_state),
            "goal_spec": self.goal_spec,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemInstance":
        _check_version(obj)
        return cls(
            instance_id=obj["instance_id"],
            domain_tag=obj["domain_tag"],
            params=obj.get("params", {}),
            payload=obj["payload"],
            initial_state=decode_state(obj["initial_state"]),
            goal_spec=obj["goal_spec"],
        )


def _check_version(obj: dict):
    v = obj.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"format_version {v!r} != {FORMAT_VERSION}")


def successors(instance: ProblemInstance, s) -> list:
    return instance.space.successors(s)


def is_goal(instance: ProblemInstance, s) -> bool:
    return instance.space.is_goal(s)


def features(instance: ProblemInstance, s) -> np.ndarray:
    return instance.space.features(s)


def feature_dim(instance: ProblemInstance) -> int:
    return instance.space.feature_dim


def predecessors(instance: ProblemInstance, s):
    """Predecessor edges ``[(s_prev, cost)]``, or ``None`` when the domain cannot invert moves."""
    return instance.space.predecessors(s)


# --------------------------------------------------------------------------
# per-domain state spaces


class _Space:
    feature_dim = 1

    def __init__(self, inst: ProblemInstance):
        self.inst = inst

    def successors(self, s):
        raise NotImplementedError

    def is_goal(self, s):
        raise NotImplementedError

    def features(self, s):
        raise NotImplementedError

    def predecessors(self, s):
        return None


class _ExplicitGraph(_Space):
    # features: out-degree, cheapest outgoing edge, goal flag
    feature_dim = 3

    def __init__(self, inst):
        super().__init__(inst)
        p = inst.payload
        self.nodes = list(p["nodes"])
        self.adj = {n: [] for n in self.nodes}
        self.radj = {n: [] for n in self.nodes}
        for u, v, c in p["edges"]:
            if c < 0:
                raise ValueError(f"negative edge cost on {u}->{v}")
            self.adj[u].append((v, float(c)))
            self.radj[v].append((u, float(c)))
        self.goals = frozenset(inst.goal_spec["goals"])

    def _check(self, s):
        if s not in self.adj:
            raise EncodingError(f"unknown node {s!r}")

    def successors(self, s):
        self._check(s)
        return list(self.adj[s])

    def predecessors(self, s):
        self._check(s)
        return list(self.radj[s])

    def is_goal(self, s):
        return s in self.goals

    def features(self, s):
        self._check(s)
        out = self.adj[s]
        return np.array([len(out), min((c for _, c in out), default=0.0), float(s in self.goals)])


def _grid_pos(s, n):
    if not (isinstance(s, tuple) and len(s) == 2 and all(isinstance(v, int) for v in s)):
        raise EncodingError(f"malformed grid state {s!r}")
    if not (0 <= s[0] < n and 0 <= s[1] < n):
        raise EncodingError(f"grid state {s!r} outside {n}x{n}")
    return s


_MOVES = (("down", (1, 0)), ("left", (0, -1)), ("right", (0, 1)), ("up", (-1, 0)))


class _Maze(_Space):
    """Grid maze; stepping onto a teleport tile moves the agent to its partner tile."""

    def __init__(self, inst):
        super().__init__(inst)
        p = inst.payload
        self.n = p["size"]
        self.walls = frozenset((r, c) for r, row in enumerate(p["grid"]) for c, ch in enumerate(row) if ch == "#")
        self.tele = {}
        self.pairs = []
        for a, b in p["teleports"]:
            a, b = tuple(a), tuple(b)
            self.tele[a] = b
            self.tele[b] = a
            self.pairs.append((a, b))
        self.goal = tuple(inst.goal_spec["goal"])
        self.n_pairs = inst.params.get("teleports", len(self.pairs))
        self.feature_dim = 3 + self.n_pairs + 1 + 4

    def _free(self, r, c):
        return 0 <= r < self.n and 0 <= c < self.n and (r, c) not in self.walls

    def successors(self, s):
        r, c = _grid_pos(s, self.n)
        out = []
        for _, (dr, dc) in _MOVES:
            t = (r + dr, c + dc)
            if self._free(*t):
                out.append((self.tele.get(t, t), 1.0))
        return out

    def predecessors(self, s):
        r, c = _grid_pos(s, self.n)
        if s in self.tele:
            # arriving at s means having stepped onto its partner
            entries = [self.tele[s]]
        else:
            entries = [s]
        out = []
        for t in entries:
            for _, (dr, dc) in _MOVES:
                p = (t[0] - dr, t[1] - dc)
                if self._free(*p):
                    out.append((p, 1.0))
        return out

    def is_goal(self, s):
        return s == self.goal

    def features(self, s):
        r, c = _grid_pos(s, self.n)
        n = float(self.n)
        gr, gc = self.goal
        md = abs(r - gr) + abs(c - gc)
        routes = []
        for a, b in self.pairs:
            via_a = abs(r - a[0]) + abs(c - a[1]) + abs(b[0] - gr) + abs(b[1] - gc)
            via_b = abs(r - b[0]) + abs(c - b[1]) + abs(a[0] - gr) + abs(a[1] - gc)
            routes.append(min(via_a, via_b))
        routes += [md] * (self.n_pairs - len(routes))
        blocked = [0.0 if self._free(r + dr, c + dc) else 1.0 for _, (dr, dc) in _MOVES]
        return np.array([md / n, r / n, c / n] + [x / n for x in routes] + [min([md] + routes) / n] + blocked)


class _Puzzle(_Space):
    """k x k sliding tile puzzle; states are permutations with 0 as the blank, goal = identity."""

    def __init__(self, inst):
        super().__init__(inst)
        self.k = inst.payload["size"]
        self.N = self.k * self.k
        self.goal = tuple(range(self.N))
        self.feature_dim = (self.N - 1) + 2

    def _check(self, s):
        if not (isinstance(s, tuple) and len(s) == self.N and sorted(s) == list(range(self.N))):
            raise EncodingError(f"malformed puzzle state {s!r}")

    def successors(self, s):
        self._check(s)
        b = s.index(0)
        r, c = divmod(b, self.k)
        out = []
        for _, (dr, dc) in _MOVES:
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.k and 0 <= cc < self.k:
                t = list(s)
                j = rr * self.k + cc
                t[b], t[j] = t[j], t[b]
                out.append((tuple(t), 1.0))
        return out

    def predecessors(self, s):
        return self.successors(s)

    def is_goal(self, s):
        return s == self.goal

    def manhattan(self, s):
        d = 0
        for pos, tile in enumerate(s):
            if tile:
                r, c = divmod(pos, self.k)
                tr, tc = divmod(tile, self.k)
                d += abs(r - tr) + abs(c - tc)
        return d

    def features(self, s):
        self._check(s)
        disp = [0.0] * (self.N - 1)
        for pos, tile in enumerate(s):
            if tile:
                r, c = divmod(pos, self.k)
                tr, tc = divmod(tile, self.k)
                disp[tile - 1] = float(abs(r - tr) + abs(c - tc))
        misplaced = sum(1 for pos, tile in enumerate(s) if tile and tile != pos)
        return np.array([sum(disp), float(misplaced)] + disp)


class _Sokoban(_Space):
    """Small Sokoban without deadlock pruning. State = (agent, sorted boxes)."""

    # features: box-goal matching bound, agent-to-nearest-box, boxes off goal
    feature_dim = 3

    def __init__(self, inst):
        super().__init__(inst)
        p = inst.payload
        self.n = p["size"]
        self.walls = frozenset((r, c) for r, row in enumerate(p["grid"]) for c, ch in enumerate(row) if ch == "#")
        self.goals = tuple(sorted(tuple(g) for g in inst.goal_spec["goals"]))
        self.goal_set = frozenset(self.goals)

    def _check(self, s):
        try:
            agent, boxes = s
            _grid_pos(agent, self.n)
            for b in boxes:
                _grid_pos(b, self.n)
        except (TypeError, ValueError) as exc:
            raise EncodingError(f"malformed sokoban state {s!r}") from exc
        return agent, boxes

    def _free(self, p):
        return 0 <= p[0] < self.n and 0 <= p[1] < self.n and p not in self.walls

    def successors(self, s):
        agent, boxes = self._check(s)
        bset = set(boxes)
        out = []
        for _, (dr, dc) in _MOVES:
            t = (agent[0] + dr, agent[1] + dc)
            if not self._free(t):
                continue
            if t in bset:
                beyond = (t[0] + dr, t[1] + dc)
                if not self._free(beyond) or beyond in bset:
                    continue
                nb = tuple(sorted((bset - {t}) | {beyond}))
                out.append(((t, nb), 1.0))
            else:
                out.append(((t, boxes), 1.0))
        return out

    def is_goal(self, s):
        return frozenset(s[1]) == self.goal_set

    def matching_bound(self, boxes):
        best = None
        for perm in itertools.permutations(self.goals, len(boxes)):
            d = sum(abs(b[0] - g[0]) + abs(b[1] - g[1]) for b, g in zip(boxes, perm))
            best = d if best is None else min(best, d)
        return best or 0

    def features(self, s):
        agent, boxes = self._check(s)
        near = min((abs(agent[0] - b[0]) + abs(agent[1] - b[1]) for b in boxes), default=0)
        off = sum(1 for b in boxes if b not in self.goal_set)
        return np.array([float(self.matching_bound(boxes)), float(near), float(off)])


class _OnewayGrid(_Space):
    """Obstacle-free grid where the agent only decreases one coordinate per move."""

    feature_dim = 3

    def __init__(self, inst):
        super().__init__(inst)
        self.n = inst.payload["size"]
        self.goal = (0, 0)

    def successors(self, s):
        x, y = _grid_pos(s, self.n)
        out = []
        # actions "dec_x" then "dec_y"
        if x > 0:
            out.append(((x - 1, y), 1.0))
        if y > 0:
            out.append(((x, y - 1), 1.0))
        return out

    def predecessors(self, s):
        x, y = _grid_pos(s, self.n)
        out = []
        if x + 1 < self.n:
            out.append(((x + 1, y), 1.0))
        if y + 1 < self.n:
            out.append(((x, y + 1), 1.0))
        return out

    def is_goal(self, s):
        return s == self.goal

    def features(self, s):
        x, y = _grid_pos(s, self.n)
        return np.array([float(x + y), float(x), float(y)])


_SPACES = {
    "explicit_graph": _ExplicitGraph,
    "maze_teleport": _Maze,
    "sliding_puzzle": _Puzzle,
    "sokoban_lite": _Sokoban,
    "oneway_grid": _OnewayGrid,
}


# --------------------------------------------------------------------------
# fixtures


def explicit_graph(instance_id, edges, start, goals, h_ref=None, nodes=None) -> ProblemInstance:
    if nodes is None:
        nodes = []
        for u, v, _ in edges:
            for x in (u, v):
                if x not in nodes:
                    nodes.append(x)
    payload = {"nodes": list(nodes), "edges": [list(e) for e in edges]}
    if h_ref is not None:
        payload["h_ref"] = dict(h_ref)
    return ProblemInstance(instance_id, "explicit_graph", {}, payload, start, {"goals": list(goals)})


def fig1b() -> ProblemInstance:
    """Five-node graph on which GBFS guided by exact cost-to-goal returns a cost-11 plan."""
    edges = [("A", "C", 2), ("A", "B", 8), ("C", "D", 4), ("B", "E", 3), ("D", "E", 4)]
    h = {"A": 10, "B": 3, "C": 8, "D": 4, "E": 0}
    return explicit_graph("fig1b", edges, "A", ["E"], h_ref=h, nodes=["A", "B", "C", "D", "E"])


def fig1a() -> ProblemInstance:
    """Search tree with optimal path s0-s1-s2-s3 and four off-path leaves."""
    edges = [("s0", "s1", 1), ("s0", "s4", 1), ("s0", "s5", 1),
             ("s1", "s2", 1), ("s1", "s6", 1), ("s1", "s7", 1), ("s2", "s3", 1)]
    return explicit_graph("fig1a", edges, "s0", ["s3"], nodes=[f"s{i}" for i in range(8)])


_A4_EDGES = [("A", "B", 1), ("B", "D", 1), ("A", "C", 1), ("A", "D", 9), ("B", "C", 9)]
_A4_H = {"A": 0, "B": 1, "C": 1, "D": 2}


def gbfs_nonexistence(undirected: bool = True) -> ProblemInstance:
    """Four-node instance with goal A and start D; the drawn arrows leave D without out-edges."""
    edges = list(_A4_EDGES)
    if undirected:
        edges += [(v, u, c) for u, v, c in _A4_EDGES]
    iid = "a4_undirected" if undirected else "a4_directed"
    return explicit_graph(iid, edges, "D", ["A"], h_ref=_A4_H, nodes=["A", "B", "C", "D"])


def oneway_grid(size: int = 5) -> ProblemInstance:
    if size < 2:
        raise ValueError("grid size must be >= 2")
    return ProblemInstance(f"oneway_grid-{size}", "oneway_grid", {"size": size}, {"size": size},
                           (size - 1, size - 1), {"goal": [0, 0]})


FIXTURES = {
    "fig1a": fig1a,
    "fig1b": fig1b,
    "a4_directed": lambda: gbfs_nonexistence(False),
    "a4_undirected": lambda: gbfs_nonexistence(True),
}


# --------------------------------------------------------------------------
# generators


def _rng(tag, params, seed, attempt) -> random.Random:
    key = json.dumps([tag, params, seed, attempt], sort_keys=True).encode()
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))


def _carve_maze(n, rng):
    grid = [["#"] * n for _ in range(n)]
    cells = [(r, c) for r in range(1, n - 1, 2) for c in range(1, n - 1, 2)]
    start = cells[0]
    grid[start[0]][start[1]] = " "
    stack, seen = [start], {start}
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((2, 0), (0, -2), (0, 2), (-2, 0))
                if 0 < r + dr < n - 1 and 0 < c + dc < n - 1 and (r + dr, c + dc) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nr, nc = rng.choice(nbrs)
        grid[(r + nr) // 2][(c + nc) // 2] = " "
        grid[nr][nc] = " "
        seen.add((nr, nc))
        stack.append((nr, nc))
    return grid, cells


def _gen_maze(params, rng, seed):
    n = params.get("size", 15)
    pairs = params.get("teleports", 4)
    breaks = params.get("break_fraction", 0.1)
    if n < 5 or pairs < 0:
        raise ValueError("maze needs size >= 5 and teleports >= 0")
    grid, cells = _carve_maze(n, rng)
    inner_walls = [(r, c) for r in range(1, n - 1) for c in range(1, n - 1)
                   if grid[r][c] == "#" and (r % 2 == 1) != (c % 2 == 1)
                   and r < n - 2 + (n % 2) and c < n - 2 + (n % 2)]
    for r, c in rng.sample(inner_walls, int(breaks * len(inner_walls))):
        grid[r][c] = " "
    start, goal = cells[0], cells[-1]
    free = [(r, c) for r in range(n) for c in range(n) if grid[r][c] == " " and (r, c) not in (start, goal)]
    if len(free) < 2 * pairs:
        raise ValueError("maze too small for requested teleports")
    ends = rng.sample(free, 2 * pairs)
    tele = [[list(ends[2 * i]), list(ends[2 * i + 1])] for i in range(pairs)]
    payload = {"size": n, "grid": ["".join(row) for row in grid], "teleports": tele}
    return payload, start, {"goal": list(goal)}


def _gen_puzzle(params, rng, seed):
    k = params.get("size", 3)
    if k < 2:
        raise ValueError("puzzle size must be >= 2")
    N = k * k
    scramble = params.get("scramble")
    if scramble is not None:
        inst = ProblemInstance("tmp", "sliding_puzzle", {}, {"size": k}, tuple(range(N)), {})
        s, prev = tuple(range(N)), None
        for _ in range(scramble):
            opts = [t for t, _ in successors(inst, s) if t != prev]
            prev, s = s, rng.choice(opts)
        return {"size": k}, s, {"goal": "identity"}
    perm = list(range(N))
    rng.shuffle(perm)
    return {"size": k}, tuple(perm), {"goal": "identity"}


def puzzle_solvable(perm, k) -> bool:
    tiles = [t for t in perm if t]
    # parity relative to the identity goal with the blank in cell 0
    inv = sum(1 for i in range(len(tiles)) for j in range(i + 1, len(tiles)) if tiles[i] > tiles[j])
    if k % 2 == 1:
        return inv % 2 == 0
    blank_row = perm.index(0) // k
    return (inv + blank_row) % 2 == 0


def _gen_sokoban(params, rng, seed):
    n = params.get("size", 6)
    nb = params.get("boxes", 2)
    if nb < 1 or nb > 3 or n < 4:
        raise ValueError("sokoban_lite needs 1..3 boxes and size >= 4")
    wall_p = params.get("wall_prob", 0.1)
    grid = [["#" if r in (0, n - 1) or c in (0, n - 1) or rng.random() < wall_p else " "
             for c in range(n)] for r in range(n)]
    free = [(r, c) for r in range(n) for c in range(n) if grid[r][c] == " "]
    if len(free) < 2 * nb + 1:
        return None
    picks = rng.sample(free, 2 * nb + 1)
    goals, boxes, agent = picks[:nb], picks[nb:2 * nb], picks[-1]
    payload = {"size": n, "grid": ["".join(row) for row in grid]}
    return payload, (agent, tuple(sorted(boxes))), {"goals": [list(g) for g in sorted(goals)]}


def _gen_graph(params, rng, seed):
    if "fixture" in params:
        inst = FIXTURES[params["fixture"]]()
        return inst.payload, inst.initial_state, inst.goal_spec
    n = params.get("nodes", 8)
    p = params.get("edge_prob", 0.3)
    max_cost = params.get("max_cost", 9)
    names = [f"n{i}" for i in range(n)]
    edges = [[u, v, rng.randint(0, max_cost)] for u in names for v in names if u != v and rng.random() < p]
    return {"nodes": names, "edges": edges}, names[0], {"goals": [names[-1]]}


def _solvable(inst: ProblemInstance) -> bool:
    from . import oracle

    if inst.domain_tag == "sliding_puzzle":
        return puzzle_solvable(inst.initial_state, inst.payload["size"])
    if inst.domain_tag == "sokoban_lite" and is_goal(inst, inst.initial_state):
        return False
    return oracle.reachable_goal(inst, cap=inst.params.get("oracle_cap", 200_000))


def generate_instance(domain_tag: str, params: dict | None = None, seed: int = 0) -> ProblemInstance:
    """Deterministically generate a solvable instance; retries on derived sub-seeds."""
    params = dict(params or {})
    if domain_tag == "oneway_grid":
        return oneway_grid(params.get("size", 5))
    if domain_tag == "explicit_graph" and "fixture" in params:
        return FIXTURES[params["fixture"]]()
    gen = {"maze_teleport": _gen_maze, "sliding_puzzle": _gen_puzzle,
           "sokoban_lite": _gen_sokoban, "explicit_graph": _gen_graph}.get(domain_tag)
    if gen is None:
        raise ValueError(f"unknown domain {domain_tag!r}")
    size = params.get("size", params.get("nodes", ""))
    iid = f"{domain_tag}-{size}-s{seed}"
    for attempt in range(GENERATION_RETRIES):
        out = gen(params, _rng(domain_tag, params, seed, attempt), seed)
        if out is None:
            continue
        payload, start, goal = out
        inst = ProblemInstance(iid, domain_tag, params, payload, start, goal)
        if _solvable(inst):
            return inst
    raise GenerationError(f"{domain_tag} {params} seed {seed}: unsolvable after {GENERATION_RETRIES} tries")


def read_instances(path) -> list:
    with open(path) as f:
        return [ProblemInstance.from_json(json.loads(line)) for line in f if line.strip()]


def write_instances(path, instances):
    with open(path, "w") as f:
        for inst in instances:
            f.write(inst.dumps() + "\n")
