"""Pipeline stages and the ``heurank`` command line.

generate -> solve -> trace -> train -> eval -> report, plus ``verify``.
Every file written carries ``format_version``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from collections import OrderedDict
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import domains, models, oracle, optim, verify
from .domains import FORMAT_VERSION, FormatError, Plan, ProblemInstance
from .search import SearchConfig, forward_search
from .trace import RankingTrace, TrainingRecord, label_trace, ranking_trace, training_records

DEFAULT_BUDGET = 100_000
ROW_FIELDS = ["format_version", "variant", "instance_id", "status", "solved", "expanded", "generated",
              "reopened", "cost", "length"]


class FileDependencyError(FileNotFoundError):
    pass


def _need(path):
    if path is None or not Path(path).exists():
        raise FileDependencyError(f"missing upstream artifact: {path}")
    return path


def _read_jsonl(path):
    with open(_need(path)) as f:
        out = [json.loads(line) for line in f if line.strip()]
    for obj in out:
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: format_version {obj.get('format_version')!r}")
    return out


# --------------------------------------------------------------------------
# heuristics for evaluation


def heuristic_for(instance, model):
    """``model`` is a HeuristicModel or one of ``"hstar"``, ``"zero"``."""
    if model == "zero":
        return lambda s: 0.0
    if model == "hstar":
        ref = instance.payload.get("h_ref")
        if ref is not None:
            return lambda s: float(ref[s])
        table = oracle.cost_to_goal(instance)
        return lambda s: table.capped(s)
    return model.heuristic(instance)


def search_config(name, alpha=None, beta=None, budget=DEFAULT_BUDGET, tie_policy="lifo", reopening=None):
    if name == "astar":
        cfg = SearchConfig.astar(expansion_budget=budget, tie_policy=tie_policy)
    elif name == "gbfs":
        cfg = SearchConfig.gbfs(expansion_budget=budget, tie_policy=tie_policy)
    else:
        cfg = SearchConfig(alpha=alpha, beta=beta, expansion_budget=budget, tie_policy=tie_policy)
    if reopening is not None:
        cfg = SearchConfig(cfg.alpha, cfg.beta, reopening, cfg.tie_policy, cfg.expansion_budget)
    return cfg


def _eval_one(args):
    inst, model, cfg, variant = args
    res = forward_search(inst, heuristic_for(inst, model), cfg)
    return {
        "format_version": FORMAT_VERSION, "variant": variant, "instance_id": inst.instance_id,
        "status": res.status, "solved": int(res.solved), "expanded": res.expanded_count,
        "generated": res.generated_count, "reopened": res.reopened_count,
        "cost": res.plan.total_cost if res.solved else "", "length": res.plan.length if res.solved else "",
    }


def workers_from_env(default=1) -> int:
    try:
        return max(1, int(os.environ.get("HEURANK_WORKERS", default)))
    except ValueError:
        return default


def evaluate(instances, model, cfg: SearchConfig, variant="model", workers=None) -> list:
    """Per-instance rows, ordered by instance_id whatever the worker count."""
    workers = workers_from_env() if workers is None else workers
    jobs = [(inst, model, cfg, variant) for inst in instances]
    if workers > 1 and len(jobs) > 1:
        with get_context("fork").Pool(workers) as pool:
            rows = pool.map(_eval_one, jobs)
    else:
        rows = [_eval_one(j) for j in jobs]
    return sorted(rows, key=lambda r: r["instance_id"])


@dataclass
class EvalMetrics:
    variant: str
    n: int
    solved_fraction: float
    avg_expanded: float  # over the instances solved by every compared variant
    avg_plan_length: float  # same common-solved set
    avg_expanded_all: float  # over every instance, unsolved ones at their budget-capped count
    rows: list = field(default_factory=list, repr=False)


def summarize(rows_by_variant: dict) -> dict:
    """Metrics per variant; averages over the set of instances every variant solved."""
    solved_sets = [{r["instance_id"] for r in rows if int(r["solved"])} for rows in rows_by_variant.values()]
    common = set.intersection(*solved_sets) if solved_sets else set()
    out = OrderedDict()
    for variant, rows in rows_by_variant.items():
        n = len(rows)
        sub = [r for r in rows if r["instance_id"] in common]
        out[variant] = EvalMetrics(
            variant=variant,
            n=n,
            solved_fraction=100.0 * sum(int(r["solved"]) for r in rows) / n if n else 0.0,
            avg_expanded=float(np.mean([int(r["expanded"]) for r in sub])) if sub else math.nan,
            avg_plan_length=float(np.mean([float(r["length"]) for r in sub])) if sub else math.nan,
            avg_expanded_all=float(np.mean([int(r["expanded"]) for r in rows])) if rows else math.nan,
            rows=rows,
        )
    return out


def write_rows(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ROW_FIELDS)
        w.writeheader()
        w.writerows(rows)


def read_rows(path) -> list:
    with open(_need(path), newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        if str(r.get("format_version")) != str(FORMAT_VERSION):
            raise FormatError(f"{path}: format_version {r.get('format_version')!r}")
    return rows


# --------------------------------------------------------------------------
# loss comparison


@dataclass
class CompareSetup:
    model_kind: str = "mlp"
    model_spec: dict = field(default_factory=lambda: {"hidden": [32, 32]})
    seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 50
    budget: int = 10_000


def make_traces(instances, label=False, plans=None):
    traces = []
    for k, inst in enumerate(instances):
        plan = oracle.optimal_solve(inst) if plans is None else plans[k]
        tr = ranking_trace(inst, plan)
        if label:
            label_trace(tr, inst)
        traces.append(tr)
    return traces


def compare_losses(train_instances, test_instances, losses=("lstar", "lgbfs", "l2"), searches=("astar", "gbfs"),
                   setup: CompareSetup | None = None, traces=None):
    """Train one model per loss (same spec and seed) and evaluate each under each search.

    Returns ``(metrics, models)``; ``metrics[search]`` maps loss -> EvalMetrics.
    """
    setup = setup or CompareSetup()
    traces = make_traces(train_instances, label=True) if traces is None else traces
    spec = dict(setup.model_spec)
    if setup.model_kind == "tabular":
        spec = models.tabular_spec(traces)
    else:
        spec.setdefault("feature_dim", len(next(iter(traces[0].state_table.values())).features))
    trained = OrderedDict()
    for loss in losses:
        model = models.init(setup.model_kind, spec, seed=setup.seed)
        cfg = optim.TrainConfig(loss_kind=loss, learning_rate=setup.learning_rate, epochs=setup.epochs,
                                seed=setup.seed)
        trained[loss], _ = optim.train(traces, model, cfg)
    metrics = OrderedDict()
    for search in searches:
        cfg = search_config(search, budget=setup.budget)
        rows = {loss: evaluate(test_instances, m, cfg, variant=f"{search}/{loss}") for loss, m in trained.items()}
        metrics[search] = summarize(rows)
    return metrics, trained


def comparison_table(metrics_by_domain: dict, field_name="solved_fraction") -> list:
    """Rows ``{domain, <search>/<loss>: value}`` in the layout of a solved-fraction table."""
    table = []
    for domain, by_search in metrics_by_domain.items():
        row = OrderedDict(domain=domain)
        for search, by_loss in by_search.items():
            for loss, m in by_loss.items():
                row[f"{search}/{loss}"] = getattr(m, field_name)
        table.append(row)
    return table


def render_table(table) -> str:
    if not table:
        return ""
    cols = list(table[0])
    fmt = lambda v: f"{v:.2f}" if isinstance(v, float) else str(v)
    widths = [max(len(c), *(len(fmt(r[c])) for r in table)) for c in cols]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(fmt(r[c]).rjust(w) for c, w in zip(cols, widths)) for r in table]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# record files


def record_json(rec: TrainingRecord) -> dict:
    return {"kind": rec.kind, "states": [domains.encode_state(s) for s in rec.states], "g": list(rec.g),
            "h_star": rec.h_star, "deadend": rec.deadend}


def write_records(path, traces, loss_kind, deadend_label=None):
    with open(path, "w") as f:
        for tr in traces:
            obj = tr.to_json()
            obj["loss_kind"] = loss_kind
            obj["records"] = [record_json(r) for r in training_records(tr, loss_kind, deadend_label=deadend_label)]
            f.write(json.dumps(obj) + "\n")


def read_traces(path) -> list:
    return [RankingTrace.from_json(obj) for obj in _read_jsonl(path)]


# --------------------------------------------------------------------------
# CLI


def _load_model(arg):
    if arg in ("hstar", "zero"):
        return arg
    return models.HeuristicModel.load(_need(arg))


def cmd_generate(a):
    params = json.loads(a.params) if a.params else {}
    insts = [domains.generate_instance(a.domain, params, a.seed + k) for k in range(a.count)]
    domains.write_instances(a.out, insts)
    print(f"wrote {len(insts)} instances to {a.out}")


def cmd_solve(a):
    insts = domains.read_instances(_need(a.inp))
    with open(a.out, "w") as f:
        for inst in insts:
            if a.enumerate:
                plans, truncated = oracle.enumerate_optimal_plans(inst, limit=a.enumerate)
                if truncated:
                    print(f"{inst.instance_id}: enumeration truncated at {a.enumerate}", file=sys.stderr)
            else:
                plans = [oracle.optimal_solve(inst)]
            for p in plans:
                f.write(json.dumps(p.to_json(inst.instance_id, inst.initial_state)) + "\n")
    print(f"solved {len(insts)} instances -> {a.out}")


def cmd_trace(a):
    insts = {i.instance_id: i for i in domains.read_instances(_need(a.instances))}
    traces = []
    for obj in _read_jsonl(a.plans):
        inst = insts.get(obj["instance_id"])
        if inst is None:
            raise FileDependencyError(f"plan for unknown instance {obj['instance_id']}")
        tr = ranking_trace(inst, Plan.from_json(obj))
        if a.loss in ("l2", "lbe"):
            label_trace(tr, inst)
        traces.append(tr)
    write_records(a.out, traces, a.loss)
    print(f"wrote {len(traces)} traces ({a.loss}) to {a.out}")


def cmd_train(a):
    traces = read_traces(a.records)
    spec_obj = json.load(open(_need(a.model_spec))) if a.model_spec else {"kind": "tabular", "spec": {}}
    kind, spec = spec_obj["kind"], dict(spec_obj.get("spec", {}))
    if kind == "tabular":
        spec = models.tabular_spec(traces)
    elif "feature_dim" not in spec:
        spec["feature_dim"] = len(next(iter(traces[0].state_table.values())).features)
    model = models.init(kind, spec, seed=a.seed)
    cfg = optim.TrainConfig(loss_kind=a.loss, alpha=a.alpha, beta=a.beta, optimizer=a.optimizer,
                            learning_rate=a.lr, epochs=a.epochs, seed=a.seed, l01_target=a.l01_target)
    model, report = optim.train(traces, model, cfg, checkpoint=a.out)
    if a.report:
        report.write_csv(a.report)
    print(f"trained {kind} with {a.loss}: {len(report.epochs)} epochs, L01 {report.final_l01}, "
          f"stop={report.stop_reason} -> {a.out}")


def cmd_eval(a):
    insts = domains.read_instances(_need(a.instances))
    model = _load_model(a.model)
    cfg = search_config(a.search, a.alpha, a.beta, a.budget, a.tie_policy)
    variant = a.variant or f"{a.search}/{Path(a.model).stem}"
    rows = evaluate(insts, model, cfg, variant=variant)
    write_rows(a.out, rows)
    m = summarize({variant: rows})[variant]
    costs = [float(r["cost"]) for r in rows if r["solved"]]
    print(json.dumps({"variant": variant, "solved_fraction": m.solved_fraction,
                      "avg_expanded": m.avg_expanded_all, "avg_plan_length": m.avg_plan_length,
                      "avg_cost": float(np.mean(costs)) if costs else None}))


def cmd_verify(a):
    names = verify.CASES if a.all or not a.case else [a.case]
    ok = True
    for name in names:
        case = verify.run_case(name)
        ok &= case.passed
        print(json.dumps(case.to_json(), default=str))
    return 0 if ok else 1


def cmd_report(a):
    rows_by_variant = OrderedDict()
    for path in a.metrics:
        for r in read_rows(path):
            rows_by_variant.setdefault(r["variant"], []).append(r)
    metrics = summarize(rows_by_variant)
    fields = ["variant", "n", "solved_fraction", "avg_expanded", "avg_plan_length", "avg_expanded_all"]
    table = [OrderedDict((k, getattr(m, k)) for k in fields) for m in metrics.values()]
    with open(a.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["format_version"] + fields)
        w.writeheader()
        for row in table:
            w.writerow({"format_version": FORMAT_VERSION, **row})
    print(render_table(table))


def build_parser():
    p = argparse.ArgumentParser(prog="heurank", description="learn and certify ranking heuristics")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate")
    g.add_argument("--domain", required=True, choices=domains.DOMAIN_TAGS)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params", default="", help="JSON object, e.g. '{\"size\": 15, \"teleports\": 4}'")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("solve")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--enumerate", type=int, default=0, metavar="LIMIT")
    s.set_defaults(fn=cmd_solve)

    t = sub.add_parser("trace")
    t.add_argument("--instances", required=True)
    t.add_argument("--plans", required=True)
    t.add_argument("--loss", required=True, choices=("lstar", "lgbfs", "rank", "lrt", "l2", "lbe"))
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_trace)

    tr = sub.add_parser("train")
    tr.add_argument("--records", required=True)
    tr.add_argument("--model-spec", help="JSON file {kind, spec}; default tabular")
    tr.add_argument("--loss", required=True, choices=("lstar", "lgbfs", "rank", "lrt", "l2", "lbe"))
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--beta", type=float)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int, default=100)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--optimizer", default="adaptive_moment", choices=("adaptive_moment", "sgd_momentum"))
    tr.add_argument("--l01-target", type=int)
    tr.add_argument("--report", help="per-epoch CSV")
    tr.add_argument("--out", required=True)
    tr.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval")
    e.add_argument("--instances", required=True)
    e.add_argument("--model", required=True, help="checkpoint path, or 'hstar' / 'zero'")
    e.add_argument("--search", default="astar", choices=("astar", "gbfs", "custom"))
    e.add_argument("--alpha", type=float, default=1.0)
    e.add_argument("--beta", type=float, default=1.0)
    e.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    e.add_argument("--tie-policy", default="lifo", choices=("lifo", "fifo", "lower_g", "higher_g"))
    e.add_argument("--variant")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify")
    v.add_argument("--case", choices=verify.CASES)
    v.add_argument("--all", action="store_true")
    v.set_defaults(fn=cmd_verify)

    r = sub.add_parser("report")
    r.add_argument("--metrics", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    a = build_parser().parse_args(argv)
    try:
        code = a.fn(a)
    except (FileDependencyError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
