"""Named, runnable checks of the efficiency theory on bundled fixtures."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import domains, models, optim, oracle
from .losses import loss_l01
from .search import SearchConfig, certify_strict_optimal_efficiency, forward_search
from .trace import ranking_trace

CASES = ("fig1b_gbfs", "fig1b_astar", "theorem1_roundtrip", "astar_implies_gbfs", "gbfs_nonexistence",
         "multipath_grid")

MAZE_PARAMS = {"size": 10, "teleports": 4}
TABULAR_CFG = dict(loss_kind="lstar", optimizer="adaptive_moment", learning_rate=0.1, epochs=2000, l01_target=0)


@dataclass
class VerificationCase:
    name: str
    passed: bool
    evidence: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_json(self):
        return {"name": self.name, "outcome": "pass" if self.passed else "fail",
                "degenerate": self.degenerate, "evidence": self.evidence}


def _ref_h(inst):
    return lambda s: float(inst.payload["h_ref"][s])


def _h_table(trace, model, inst):
    return {trace.key(s): model.evaluate(inst, s) for s in trace.state_table}


def fig1b_gbfs():
    inst = domains.fig1b()
    res = forward_search(inst, _ref_h(inst), SearchConfig.gbfs())
    opt = oracle.optimal_solve(inst).total_cost
    ev = {"gbfs_cost": res.plan.total_cost, "gbfs_plan": res.plan.states(), "optimal_cost": opt,
          "expansion_order": res.expansion_order}
    return VerificationCase("fig1b_gbfs", res.plan.total_cost == 11 and opt == 10, ev)


def fig1b_astar():
    inst = domains.fig1b()
    res = forward_search(inst, _ref_h(inst), SearchConfig.astar(tie_policy="lower_g"))
    ev = {"astar_cost": res.plan.total_cost, "astar_plan": res.plan.states(), "expanded": res.expanded_count}
    return VerificationCase("fig1b_astar", res.plan.total_cost == 10 and res.expanded_count == 3, ev)


def maze_set(n=100, params=None, seed0=0):
    insts = [domains.generate_instance("maze_teleport", params or MAZE_PARAMS, seed0 + k) for k in range(n)]
    traces = [ranking_trace(i, oracle.optimal_solve(i)) for i in insts]
    return insts, traces


def train_tabular(traces, **overrides):
    model = models.init("tabular", models.tabular_spec(traces))
    cfg = optim.TrainConfig(**{**TABULAR_CFG, **overrides})
    return optim.train(traces, model, cfg)


def theorem1_roundtrip(n=100):
    if n == 0:
        return VerificationCase("theorem1_roundtrip", True, {"instances": 0}, degenerate=True)
    insts, traces = maze_set(n)
    model, report = train_tabular(traces)
    astar = SearchConfig.astar()
    rows = []
    for inst, tr in zip(insts, traces):
        cert = certify_strict_optimal_efficiency(inst, model.heuristic(inst), astar)
        rows.append({"instance_id": inst.instance_id, "l01": loss_l01(tr, _h_table(tr, model, inst), 1, 1), **cert})
    sufficient = all(r["certified"] and r["expanded"] == r["plan_length"] for r in rows if r["l01"] == 0)

    # necessity, sampled: drag the earliest rival below every other state
    inst, tr = next((i, t) for i, t in zip(insts, traces) if t.steps and any(st.off_path for st in t.steps))
    broken = model.copy()
    st = next(st for st in tr.steps if st.off_path)
    rival = st.off_path[0][0]
    others = [model.evaluate(inst, s) for s in tr.state_table]
    broken.params[broken._index[tr.key(rival)]] = min(others) - 100.0
    l01_broken = loss_l01(tr, _h_table(tr, broken, inst), 1, 1)
    cert_broken = certify_strict_optimal_efficiency(inst, broken.heuristic(inst), astar)
    ev = {
        "instances": n,
        "train_epochs": len(report.epochs),
        "train_l01": report.final_l01,
        "certified": sum(r["certified"] for r in rows),
        "expanded_equals_length": sum(r["expanded"] == r["plan_length"] for r in rows),
        "injected": {"instance_id": inst.instance_id, "l01": l01_broken, **cert_broken},
    }
    ok = report.final_l01 == 0 and sufficient and l01_broken > 0 and not cert_broken["certified"]
    return VerificationCase("theorem1_roundtrip", ok, ev)


def astar_implies_gbfs(n=100, epoch_checkpoints=(1, 2, 4, 8)):
    """L01 at (1,1) zero implies L01 at (0,1) zero, checked at several training stages."""
    insts, traces = maze_set(n)
    checked = antecedent = exceptions = 0
    for epochs in (*epoch_checkpoints, TABULAR_CFG["epochs"]):
        model, _ = train_tabular(traces, epochs=epochs, l01_target=0 if epochs == TABULAR_CFG["epochs"] else None)
        for inst, tr in zip(insts, traces):
            h = _h_table(tr, model, inst)
            checked += 1
            if loss_l01(tr, h, 1, 1) == 0:
                antecedent += 1
                exceptions += loss_l01(tr, h, 0, 1) != 0
    ev = {"traces": n, "checked": checked, "astar_perfect": antecedent, "exceptions": exceptions}
    return VerificationCase("astar_implies_gbfs", exceptions == 0 and antecedent > 0, ev,
                            degenerate=antecedent == 0)


def gbfs_nonexistence():
    """Enumerate every strict ordering of h over A..D and report what GBFS does from D."""
    inst = domains.gbfs_nonexistence(undirected=True)
    opt = oracle.optimal_solve(inst)
    rows = []
    for perm in itertools.permutations("ABCD"):
        h = {s: float(rank) for rank, s in enumerate(perm)}
        res = forward_search(inst, h.__getitem__, SearchConfig.gbfs())
        rows.append({"order": "<".join(perm), "cost": res.plan.total_cost, "plan": res.plan.states(),
                     "expanded": res.expanded_count})
    efficient = [r["order"] for r in rows if r["cost"] == opt.total_cost and r["expanded"] == opt.length]
    with_hstar = forward_search(inst, _ref_h(inst), SearchConfig.gbfs())
    directed = domains.gbfs_nonexistence(undirected=False)
    dres = forward_search(directed, _ref_h(directed), SearchConfig.gbfs())
    ev = {
        "optimal_plan": opt.states(), "optimal_cost": opt.total_cost,
        "orderings": rows, "optimal_and_efficient_orderings": efficient,
        "hstar_gbfs": {"plan": with_hstar.plan.states(), "cost": with_hstar.plan.total_cost},
        "directed_variant_status": dres.status,
    }
    return VerificationCase("gbfs_nonexistence", len(rows) == 24, ev)


LEFT_THEN_DOWN = [(4, 4), (3, 4), (2, 4), (1, 4), (0, 4), (0, 3), (0, 2), (0, 1), (0, 0)]
DOWN_THEN_LEFT = [(4, 4), (4, 3), (4, 2), (4, 1), (4, 0), (3, 0), (2, 0), (1, 0), (0, 0)]


def multipath_grid(tie_policy="lifo", epochs=500):
    grid = domains.oneway_grid(5)
    plans, truncated = oracle.enumerate_optimal_plans(grid, limit=1000)
    sets = {
        "one": [domains.Plan.from_states(grid, LEFT_THEN_DOWN)],
        "two": [domains.Plan.from_states(grid, LEFT_THEN_DOWN), domains.Plan.from_states(grid, DOWN_THEN_LEFT)],
        "all": plans,
    }
    expansions, l01 = [], []
    for ps in sets.values():
        traces = [ranking_trace(grid, p) for p in ps]
        model, report = train_tabular(traces, epochs=epochs, l01_target=None)
        res = forward_search(grid, model.heuristic(grid), SearchConfig.astar(tie_policy=tie_policy))
        expansions.append(res.expanded_count)
        l01.append(report.final_l01)
    ev = {"plan_count": len(plans), "truncated": truncated, "expansions": expansions, "train_l01": l01}
    return VerificationCase("multipath_grid", len(plans) == 70 and expansions == [8, 8, 8], ev)


_RUNNERS = {
    "fig1b_gbfs": fig1b_gbfs,
    "fig1b_astar": fig1b_astar,
    "theorem1_roundtrip": theorem1_roundtrip,
    "astar_implies_gbfs": astar_implies_gbfs,
    "gbfs_nonexistence": gbfs_nonexistence,
    "multipath_grid": multipath_grid,
}


def run_case(name: str, **kw) -> VerificationCase:
    if name not in _RUNNERS:
        raise KeyError(f"unknown case {name!r}; choose from {CASES}")
    return _RUNNERS[name](**kw)
