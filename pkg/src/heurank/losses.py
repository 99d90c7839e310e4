"""Ranking, regression and Bellman-style losses over heuristic outputs.

Every loss works in h-space: it takes the heuristic value of each referenced
state and returns the loss value with its gradient with respect to those
values.  Models turn that gradient into a parameter gradient.

State keys are ``(instance_id, state)`` tuples, see :meth:`TrainingRecord.keys`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .trace import RankingTrace, TrainingRecord


class RecordKindError(TypeError):
    pass


@dataclass
class LossBatch:
    records: list
    h_values: dict
    alpha: float = 1.0
    beta: float = 1.0


@dataclass
class LossValueGrad:
    value: float
    d_value_d_h: dict = field(default_factory=dict)


def softplus(x):
    return np.logaddexp(0.0, x)


def r_value(g_i, g_j, h_i, h_j, alpha, beta):
    """Merit margin of on-path ``s_i`` over rival ``s_j``; negative means correctly ranked."""
    return alpha * (g_i - g_j) + beta * (h_i - h_j)


def loss_l01(trace: RankingTrace, h_values: dict, alpha: float, beta: float, count_ties: bool = True) -> int:
    """Number of violated ranking conditions.

    A tie (``r == 0``) counts as a violation unless ``count_ties`` is off; the search
    cannot be guaranteed to pick the on-path state when merits tie.
    """
    n = 0
    for st in trace.steps:
        hi = h_values[trace.key(st.on_path)]
        for sj, gj in st.off_path:
            r = r_value(st.g_on_path, gj, hi, h_values[trace.key(sj)], alpha, beta)
            n += r >= 0 if count_ties else r > 0
    return int(n)


# --------------------------------------------------------------------------
# index form: records compiled once against a key list, evaluated many times


@dataclass
class Compiled:
    keys: list
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_dg: np.ndarray  # g_i - g_j
    tr_parent: np.ndarray
    tr_child: np.ndarray
    lab_idx: np.ndarray
    lab_y: np.ndarray
    bundles: list  # (parent index, children index array, h*)
    other: int = 0


def _id_order(keys):
    # ties in the Bellman min go to the lowest state id
    try:
        return sorted(keys)
    except TypeError:
        return list(keys)


def compile_records(records, keys=None) -> Compiled:
    index = {} if keys is None else {k: i for i, k in enumerate(keys)}
    keys = [] if keys is None else list(keys)

    def ix(k):
        if k not in index:
            index[k] = len(keys)
            keys.append(k)
        return index[k]

    pi, pj, dg, tp, tc, li, ly, bundles = [], [], [], [], [], [], [], []
    for rec in records:
        ks = rec.keys()
        if rec.kind == "pair":
            pi.append(ix(ks[0]))
            pj.append(ix(ks[1]))
            dg.append(rec.g[0] - rec.g[1])
        elif rec.kind == "path_transition":
            tp.append(ix(ks[0]))
            tc.append(ix(ks[1]))
        elif rec.kind == "labeled_state":
            li.append(ix(ks[0]))
            ly.append(rec.h_star)
        elif rec.kind == "parent_children":
            kids = _id_order(ks[1:])
            bundles.append((ix(ks[0]), np.array([ix(k) for k in kids], dtype=int), rec.h_star))
        else:
            raise RecordKindError(rec.kind)
    a = lambda x, t=int: np.asarray(x, dtype=t)
    return Compiled(keys, a(pi), a(pj), a(dg, float), a(tp), a(tc), a(li), a(ly, float), bundles)


def rank_logistic_arrays(h, c: Compiled, alpha, beta):
    if beta <= 0:
        raise ValueError("ranking losses need beta > 0")
    r = alpha * c.pair_dg + beta * (h[c.pair_i] - h[c.pair_j])
    value = float(softplus(r).sum())
    s = beta * expit(r)
    grad = np.zeros_like(h)
    np.add.at(grad, c.pair_i, s)
    np.add.at(grad, c.pair_j, -s)
    return value, grad


def rt_arrays(h, c: Compiled):
    d = h[c.tr_child] - h[c.tr_parent]
    s = expit(d)
    grad = np.zeros_like(h)
    np.add.at(grad, c.tr_child, s)
    np.add.at(grad, c.tr_parent, -s)
    return float(softplus(d).sum()), grad


def l2_arrays(h, c: Compiled):
    e = h[c.lab_idx] - c.lab_y
    grad = np.zeros_like(h)
    np.add.at(grad, c.lab_idx, 2.0 * e)
    return float(e @ e), grad


def be_arrays(h, c: Compiled):
    value = 0.0
    grad = np.zeros_like(h)
    for p, kids, y in c.bundles:
        hp = h[p]
        if len(kids):
            # children are in id order, so argmin breaks ties toward the lowest id
            m = kids[int(np.argmin(h[kids]))]
            t = 1.0 + h[m] - hp
            if t > 0:
                value += t
                grad[m] += 1.0
                grad[p] -= 1.0
        if y - hp > 0:
            value += y - hp
            grad[p] -= 1.0
        if hp - 2.0 * y > 0:
            value += hp - 2.0 * y
            grad[p] += 1.0
    return value, grad


def loss_arrays(kind, h, c: Compiled, alpha=1.0, beta=1.0):
    if kind in ("lstar", "lgbfs", "rank"):
        return rank_logistic_arrays(h, c, alpha, beta)
    if kind == "lrt":
        return rt_arrays(h, c)
    if kind == "l2":
        return l2_arrays(h, c)
    if kind == "lbe":
        return be_arrays(h, c)
    raise ValueError(f"unknown loss kind {kind!r}")


def _only(records, kind):
    for rec in records:
        if rec.kind != kind:
            raise RecordKindError(f"expected {kind} records, got {rec.kind}")


def _run(batch: LossBatch, kind, fn):
    _only(batch.records, kind)
    c = compile_records(batch.records)
    h = np.array([batch.h_values[k] for k in c.keys], dtype=float)
    value, grad = fn(h, c)
    return LossValueGrad(value, dict(zip(c.keys, grad.tolist())))


def loss_rank_logistic(batch: LossBatch) -> LossValueGrad:
    """Sum of ``softplus(r)`` over ranking pairs."""
    return _run(batch, "pair", lambda h, c: rank_logistic_arrays(h, c, batch.alpha, batch.beta))


def loss_l2(batch: LossBatch) -> LossValueGrad:
    return _run(batch, "labeled_state", l2_arrays)


def loss_rt(batch: LossBatch) -> LossValueGrad:
    """Logistic loss asking each child on the plan to rank below its parent."""
    return _run(batch, "path_transition", rt_arrays)


def loss_be(batch: LossBatch) -> LossValueGrad:
    """Bellman hinge on the best child plus a band ``h* <= h <= 2 h*``.

    Parents without children contribute only the band terms.  At hinge kinks
    the subgradient is 0; a tie in the min goes to the lowest state id.
    """
    return _run(batch, "parent_children", be_arrays)


LOSS_ALPHA_BETA = {"lstar": (1.0, 1.0), "lgbfs": (0.0, 1.0)}
