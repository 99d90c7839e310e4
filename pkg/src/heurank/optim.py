"""Training loop: one optimizer step per problem instance, shuffled every epoch."""

from __future__ import annotations

import csv
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .losses import LOSS_ALPHA_BETA, compile_records, loss_arrays
from .trace import LOSS_KINDS, training_records


class DivergenceError(FloatingPointError):
    def __init__(self, msg, last_good):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class TrainConfig:
    loss_kind: str = "lstar"
    alpha: float | None = None
    beta: float | None = None
    optimizer: str = "adaptive_moment"  # or sgd_momentum
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0
    patience: int | None = None  # early stopping on validation L01
    l01_target: int | None = None
    deadend_label: float | None = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("need learning_rate > 0 and epochs >= 1")
        if self.optimizer not in ("adaptive_moment", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        ab = LOSS_ALPHA_BETA.get(self.loss_kind, (1.0, 1.0))
        if self.alpha is None:
            self.alpha = ab[0]
        if self.beta is None:
            self.beta = ab[1]


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts: epoch, surrogate, l01, val_l01, seconds
    stop_reason: str = "epochs"
    checkpoint: str | None = None

    @property
    def final_l01(self):
        return self.epochs[-1]["l01"] if self.epochs else None

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["epoch", "surrogate", "l01", "val_l01", "seconds"])
            w.writeheader()
            for row in self.epochs:
                w.writerow(row)


@dataclass
class OptState:
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def step(opt_state: OptState, params, grads, cfg: TrainConfig, beta1=0.9, beta2=0.999, eps=1e-8):
    """One parameter update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch {params.shape} vs {grads.shape}")
    lr = cfg.learning_rate
    m = np.zeros_like(params) if opt_state.m is None else opt_state.m
    if cfg.optimizer == "sgd_momentum":
        v = cfg.momentum * m - lr * grads
        return params + v, OptState(opt_state.t + 1, v, None)
    v = np.zeros_like(params) if opt_state.v is None else opt_state.v
    t = opt_state.t + 1
    m = beta1 * m + (1 - beta1) * grads
    v = beta2 * v + (1 - beta2) * grads * grads
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return params - lr * mhat / (np.sqrt(vhat) + eps), OptState(t, m, v)


class InstanceBatch:
    """All traces of one instance compiled against a shared state list."""

    def __init__(self, traces, loss_kind, deadend_label=None):
        self.instance_id = traces[0].instance_id
        table = OrderedDict()
        for t in traces:
            for s, e in t.state_table.items():
                table.setdefault(t.key(s), e.features)
        self.keys = list(table)
        self.X = np.array(list(table.values()), dtype=float)
        recs = [r for t in traces for r in training_records(t, loss_kind, deadend_label=deadend_label)]
        self.loss = compile_records(recs, self.keys)
        if loss_kind in ("lstar", "lgbfs", "rank"):
            self.pairs = self.loss
        else:
            self.pairs = compile_records([r for t in traces for r in training_records(t, "rank")], self.keys)
        assert len(self.loss.keys) == len(self.keys), "records reference states outside the trace tables"

    def h(self, model):
        return model.forward(self.keys, None if model.kind == "tabular" else self.X)

    def l01(self, h, alpha, beta):
        c = self.pairs
        r = alpha * c.pair_dg + beta * (h[c.pair_i] - h[c.pair_j])
        return int(np.count_nonzero(r >= 0))


def group_traces(traces) -> list:
    groups = OrderedDict()
    for t in traces:
        groups.setdefault(t.instance_id, []).append(t)
    return list(groups.values())


def batches_for(traces, cfg: TrainConfig) -> list:
    return [InstanceBatch(g, cfg.loss_kind, cfg.deadend_label) for g in group_traces(traces)]


def ranking_errors(model, batches, alpha, beta) -> int:
    return sum(b.l01(b.h(model), alpha, beta) for b in batches)


def train(traces, model, cfg: TrainConfig, validation=None, checkpoint=None, batches=None):
    """Fit ``model`` in place to ``traces``; returns ``(model, TrainReport)``."""
    report = TrainReport()
    batches = batches_for(traces, cfg) if batches is None else batches
    if not batches:
        report.stop_reason = "empty"
        return model, report
    val = batches_for(validation, cfg) if validation else None
    rng = np.random.default_rng(cfg.seed)
    state = OptState()
    best = (None, model.params.copy())
    waited = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        last_good = model.params.copy()
        total = 0.0
        for bi in rng.permutation(len(batches)):
            b = batches[bi]
            h = b.h(model)
            value, dh = loss_arrays(cfg.loss_kind, h, b.loss, cfg.alpha, cfg.beta)
            if not np.isfinite(value):
                model.params = last_good
                raise DivergenceError(f"loss became {value} in epoch {epoch}", model)
            total += value
            grad = model.backprop(b.keys, dh)
            model.params, state = step(state, model.params, grad, cfg)
        if not np.all(np.isfinite(model.params)):
            model.params = last_good
            raise DivergenceError(f"non-finite parameters in epoch {epoch}", model)
        l01 = ranking_errors(model, batches, cfg.alpha, cfg.beta)
        row = {"epoch": epoch, "surrogate": total, "l01": l01, "val_l01": None,
               "seconds": round(time.perf_counter() - t0, 6)}
        report.epochs.append(row)
        if val is not None:
            vl = ranking_errors(model, val, cfg.alpha, cfg.beta)
            row["val_l01"] = vl
            if best[0] is None or vl < best[0]:
                best, waited = (vl, model.params.copy()), 0
            else:
                waited += 1
                if cfg.patience is not None and waited >= cfg.patience:
                    model.params = best[1]
                    report.stop_reason = "early_stop"
                    break
        if cfg.l01_target is not None and l01 <= cfg.l01_target:
            report.stop_reason = "l01_target"
            break
    if checkpoint is not None:
        model.save(checkpoint)
        report.checkpoint = str(checkpoint)
    return model, report
