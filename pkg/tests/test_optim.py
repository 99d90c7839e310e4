import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heurank import domains, models, optim, oracle
from heurank.losses import loss_l01
from heurank.optim import DivergenceError, OptState, TrainConfig, step, train
from heurank.search import SearchConfig, forward_search
from heurank.trace import label_trace, ranking_trace
from heurank.verify import LEFT_THEN_DOWN


def test_zero_gradient_no_momentum():
    cfg = TrainConfig(optimizer="sgd_momentum", momentum=0.0)
    p, _ = step(OptState(), np.array([1.0, -2.0]), np.zeros(2), cfg)
    assert p.tolist() == [1.0, -2.0]


def test_sgd_scalar_step():
    cfg = TrainConfig(optimizer="sgd_momentum", learning_rate=0.1, momentum=0.0)
    p, _ = step(OptState(), np.array([0.0]), np.array([1.0]), cfg)
    assert p[0] == pytest.approx(-0.1)


def test_sgd_momentum_accumulates():
    cfg = TrainConfig(optimizer="sgd_momentum", learning_rate=0.1, momentum=0.5)
    p, s = step(OptState(), np.array([0.0]), np.array([1.0]), cfg)
    p, s = step(s, p, np.array([1.0]), cfg)
    assert p[0] == pytest.approx(-0.1 - 0.15)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-4, 1e-1))
def test_adam_first_step_is_learning_rate(c, lr):
    cfg = TrainConfig(learning_rate=lr)
    p, s = step(OptState(), np.array([2.0]), np.array([c]), cfg)
    assert 2.0 - p[0] == pytest.approx(lr, rel=1e-5)
    assert s.t == 1


def test_shape_mismatch():
    with pytest.raises(ValueError):
        step(OptState(), np.zeros(3), np.zeros(2), TrainConfig())


def test_config_defaults_follow_loss():
    assert (TrainConfig("lstar").alpha, TrainConfig("lstar").beta) == (1.0, 1.0)
    assert (TrainConfig("lgbfs").alpha, TrainConfig("lgbfs").beta) == (0.0, 1.0)
    with pytest.raises(ValueError):
        TrainConfig("hinge")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def test_fig1a_reaches_zero_l01(fig1a_trace):
    model = models.init("tabular", models.tabular_spec([fig1a_trace]))
    model, report = train([fig1a_trace], model, TrainConfig(learning_rate=0.1, epochs=500, l01_target=0))
    assert report.final_l01 == 0 and len(report.epochs) <= 500
    assert report.stop_reason == "l01_target"
    h = {fig1a_trace.key(s): model.evaluate(domains.fig1a(), s) for s in fig1a_trace.state_table}
    assert loss_l01(fig1a_trace, h, 1, 1) == 0


def test_one_grid_plan_gives_eight_expansions():
    g = domains.oneway_grid(5)
    tr = ranking_trace(g, domains.Plan.from_states(g, LEFT_THEN_DOWN))
    model = models.init("tabular", models.tabular_spec([tr]))
    model, _ = train([tr], model, TrainConfig(learning_rate=0.1, epochs=500))
    res = forward_search(g, model.heuristic(g), SearchConfig.astar())
    assert res.expanded_count == 8 and res.plan.total_cost == 8


def test_empty_traces_leave_model_unchanged():
    model = models.init("linear", {"feature_dim": 3})
    before = model.params.copy()
    model, report = train([], model, TrainConfig())
    assert np.array_equal(model.params, before)
    assert report.epochs == [] and report.stop_reason == "empty"


@pytest.fixture(scope="module")
def maze_traces():
    insts = [domains.generate_instance("maze_teleport", {"size": 9, "teleports": 2}, s) for s in range(12)]
    return insts, [ranking_trace(i, oracle.optimal_solve(i)) for i in insts]


def mlp(insts):
    return models.init("mlp", {"feature_dim": domains.feature_dim(insts[0]), "hidden": [8]}, seed=3)


def test_training_is_deterministic(maze_traces):
    insts, traces = maze_traces
    runs = [train(traces, mlp(insts), TrainConfig(epochs=5, seed=9)) for _ in range(2)]
    assert np.array_equal(runs[0][0].params, runs[1][0].params)
    assert [r["l01"] for r in runs[0][1].epochs] == [r["l01"] for r in runs[1][1].epochs]


def test_report_rows_and_csv(tmp_path, maze_traces):
    insts, traces = maze_traces
    _, report = train(traces[:8], mlp(insts), TrainConfig(epochs=3), validation=traces[8:])
    assert [r["epoch"] for r in report.epochs] == [1, 2, 3]
    assert all(r["val_l01"] is not None for r in report.epochs)
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [int(r["l01"]) for r in rows] == [r["l01"] for r in report.epochs]


def test_l01_reported_matches_direct_count(maze_traces):
    insts, traces = maze_traces
    model, report = train(traces, mlp(insts), TrainConfig(epochs=2))
    total = 0
    for inst, tr in zip(insts, traces):
        h = {tr.key(s): model.evaluate(inst, s) for s in tr.state_table}
        total += loss_l01(tr, h, 1, 1)
    assert report.final_l01 == total


def test_early_stopping_restores_best(maze_traces):
    insts, traces = maze_traces
    model, report = train(traces[:6], mlp(insts), TrainConfig(epochs=200, learning_rate=0.05, patience=2),
                          validation=traces[6:])
    assert report.stop_reason == "early_stop" and len(report.epochs) < 200
    best = min(r["val_l01"] for r in report.epochs)
    assert report.epochs[-1]["val_l01"] > best
    assert optim.ranking_errors(model, optim.batches_for(traces[6:], TrainConfig()), 1, 1) == best


def test_training_lowers_surrogate(maze_traces):
    insts, traces = maze_traces
    _, report = train(traces, mlp(insts), TrainConfig(epochs=30, learning_rate=1e-2))
    assert report.epochs[-1]["surrogate"] < report.epochs[0]["surrogate"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_last_good(maze_traces):
    insts, traces = maze_traces
    labeled = [label_trace(t, i) for i, t in zip(insts, traces)]
    model = models.init("linear", {"feature_dim": domains.feature_dim(insts[0])})
    with pytest.raises(DivergenceError) as exc:
        train(traces, model, TrainConfig(loss_kind="l2", optimizer="sgd_momentum", learning_rate=1e6, epochs=50),
              batches=optim.batches_for(labeled, TrainConfig(loss_kind="l2")))
    assert np.all(np.isfinite(exc.value.last_good.params))


def test_checkpoint_written(tmp_path, maze_traces):
    insts, traces = maze_traces
    path = tmp_path / "ck.json"
    model, report = train(traces, mlp(insts), TrainConfig(epochs=1), checkpoint=path)
    assert report.checkpoint == str(path)
    assert np.array_equal(models.HeuristicModel.load(path).params, model.params)
