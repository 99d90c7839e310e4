import numpy as np
import pytest

from heurank import domains, oracle
from heurank.trace import ranking_trace


def fd_grad(f, x, step=1e-5):
    """Central finite differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        old = x[k]
        x[k] = old + step
        hi = f(x)
        x[k] = old - step
        lo = f(x)
        x[k] = old
        g[k] = (hi - lo) / (2 * step)
    return g


def max_rel_err(a, b, floor=1e-4):
    """Largest componentwise ``|a - b| / max(|a|, |b|, floor)``.

    The floor keeps exact-zero components, whose difference quotient is pure
    rounding noise of order eps * |loss| / step, on an absolute scale.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def brute_force_pairs(instance, path):
    """Replay the forward-search loop while forcing each selection onto ``path``.

    Returns the multiset of (s_i, s_j, g_i, g_j) comparisons as a sorted list.
    Written from the algorithm steps directly, independent of heurank.trace.
    """
    open_list = {path[0]: 0.0}
    closed = {}
    pairs = []
    for i in range(1, len(path) + 1):
        s = path[i - 1]
        g_s = open_list.pop(s)
        if i == len(path):
            break  # s is the goal, popped and tested
        closed[s] = g_s
        for t, w in domains.successors(instance, s):
            g_t = g_s + w
            if t in closed:
                continue
            if t in open_list and g_t >= open_list[t]:
                continue
            open_list[t] = g_t
        nxt = path[i]
        for t, g_t in open_list.items():
            if t != nxt:
                pairs.append((repr(nxt), repr(t), open_list[nxt], g_t))
    return sorted(pairs)


@pytest.fixture(scope="session")
def fig1a():
    return domains.fig1a()


@pytest.fixture(scope="session")
def fig1b():
    return domains.fig1b()


@pytest.fixture(scope="session")
def fig1a_trace(fig1a):
    return ranking_trace(fig1a, oracle.optimal_solve(fig1a))


@pytest.fixture(scope="session")
def small_mazes():
    insts = [domains.generate_instance("maze_teleport", {"size": 9, "teleports": 2}, s) for s in range(10)]
    return insts, [oracle.optimal_solve(i) for i in insts]


def be_kink_gap(h, comp):
    """Distance of the compiled Lbe bundles from their nearest non-differentiable point."""
    gap = np.inf
    for p, kids, y in comp.bundles:
        hp = h[p]
        if len(kids):
            hk = np.sort(h[kids])
            gap = min(gap, abs(1 + hk[0] - hp))
            if len(hk) > 1:
                gap = min(gap, hk[1] - hk[0])
        gap = min(gap, abs(y - hp), abs(hp - 2 * y))
    return gap


def theta_gradient_check(model, batch, loss_kind, alpha=1.0, beta=1.0, seed=0, step=1e-5, tries=50):
    """Analytic vs central-difference gradient of the loss over model parameters.

    Parameters are drawn at random; for ``lbe`` they are redrawn until every
    hinge and min is at least 1e-3 away from a kink.
    """
    from heurank.losses import loss_arrays

    rng = np.random.default_rng(seed)
    X = None if model.kind == "tabular" else batch.X
    base = model.params.copy()
    for _ in range(tries):
        model.params = base + rng.normal(0, 1.0 if model.kind == "tabular" else 0.3, base.size)
        h = model.forward(batch.keys, X)
        if loss_kind != "lbe" or be_kink_gap(h, batch.loss) >= 1e-3:
            break
    else:
        raise RuntimeError("could not sample parameters away from kinks")
    h = model.forward(batch.keys, X)
    _, dh = loss_arrays(loss_kind, h, batch.loss, alpha, beta)
    analytic = model.backprop(batch.keys, dh)
    theta = model.params.copy()

    def f(t):
        model.params = t
        return loss_arrays(loss_kind, model.forward(batch.keys, X), batch.loss, alpha, beta)[0]

    numeric = fd_grad(f, theta, step)
    model.params = theta
    return max_rel_err(analytic, numeric), analytic, numeric
