"""Parametric heuristics ``h(s, theta)`` with a flat double-precision parameter vector.

``tabular``  one value per known state key, unseen states evaluate to 0.
``linear``   ``w . features(s) + b``.
``mlp``      fully connected network on ``features(s)`` with softplus or relu hidden units.

Gradients are exact: :meth:`HeuristicModel.backprop` applies the chain rule to
the activations cached by the most recent :meth:`HeuristicModel.forward`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .domains import FORMAT_VERSION, FormatError, decode_state, encode_state, features

MODEL_KINDS = ("tabular", "linear", "mlp")


class StaleCacheError(RuntimeError):
    pass


class FeatureDimError(ValueError):
    pass


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.logaddexp(0.0, z)


def _dact(name, z):
    if name == "relu":
        return (z > 0).astype(float)
    return expit(z)


@dataclass
class HeuristicModel:
    kind: str
    spec: dict
    params: np.ndarray
    seed: int = 0
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "tabular":
            self._index = {k: i for i, k in enumerate(self.spec["keys"])}

    # ------------------------------------------------------------------ shapes
    def _layers(self):
        sizes = [self.spec["feature_dim"], *self.spec.get("hidden", []), 1]
        out, off = [], 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            W = self.params[off:off + a * b].reshape(b, a)
            off += a * b
            bias = self.params[off:off + b]
            off += b
            out.append((W, bias))
        return out

    # ---------------------------------------------------------------- forward
    def forward(self, keys, X=None) -> np.ndarray:
        """h for a batch.  ``keys`` are (instance_id, state) tuples, ``X`` the feature rows."""
        keys = list(keys)
        if self.kind == "tabular":
            idx = np.array([self._index.get(k, -1) for k in keys], dtype=int)
            h = np.where(idx >= 0, self.params[np.maximum(idx, 0)], 0.0) if len(idx) else np.zeros(0)
            self._cache = (keys, idx)
            return h
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.spec["feature_dim"]:
            raise FeatureDimError(f"features have dim {X.shape[1]}, model expects {self.spec['feature_dim']}")
        if self.kind == "linear":
            d = self.spec["feature_dim"]
            self._cache = (keys, X)
            return X @ self.params[:d] + self.params[d]
        act = self.spec.get("activation", "softplus")
        zs, a_s = [], [X]
        a = X
        layers = self._layers()
        for li, (W, b) in enumerate(layers):
            z = a @ W.T + b
            zs.append(z)
            a = z if li == len(layers) - 1 else _act(act, z)
            a_s.append(a)
        out = a[:, 0]
        if self.spec.get("output_softplus", False):
            out = np.logaddexp(0.0, out)
        self._cache = (keys, (zs, a_s))
        return out

    def backprop(self, keys, d_h) -> np.ndarray:
        """Parameter gradient given dLoss/dh for the states of the last forward pass."""
        if self._cache is None or list(keys) != self._cache[0]:
            raise StaleCacheError("backprop keys do not match the last forward pass")
        d_h = np.asarray(d_h, dtype=float)
        grad = np.zeros_like(self.params)
        if self.kind == "tabular":
            idx = self._cache[1]
            known = idx >= 0
            np.add.at(grad, idx[known], d_h[known])
            return grad
        if self.kind == "linear":
            X = self._cache[1]
            d = self.spec["feature_dim"]
            grad[:d] = d_h @ X
            grad[d] = d_h.sum()
            return grad
        zs, a_s = self._cache[1]
        act = self.spec.get("activation", "softplus")
        layers = self._layers()
        delta = d_h[:, None]
        if self.spec.get("output_softplus", False):
            delta = delta * expit(zs[-1])
        # walk the flat layout backwards
        offsets = []
        off = 0
        for W, b in layers:
            offsets.append(off)
            off += W.size + b.size
        for li in range(len(layers) - 1, -1, -1):
            W, b = layers[li]
            o = offsets[li]
            grad[o:o + W.size] = (delta.T @ a_s[li]).ravel()
            grad[o + W.size:o + W.size + b.size] = delta.sum(axis=0)
            if li:
                delta = (delta @ W) * _dact(act, zs[li - 1])
        return grad

    # -------------------------------------------------------------- per state
    def evaluate(self, instance, s) -> float:
        key = (instance.instance_id, s)
        X = None if self.kind == "tabular" else features(instance, s)[None, :]
        h = float(self.forward([key], X)[0])
        self._cache = None
        return h

    def heuristic(self, instance):
        """Memoised ``state -> h`` callable for the search engine."""
        memo = {}

        def h(s):
            v = memo.get(s)
            if v is None:
                v = memo[s] = self.evaluate(instance, s)
            return v

        return h

    def copy(self) -> "HeuristicModel":
        return HeuristicModel(self.kind, copy.deepcopy(self.spec), self.params.copy(), self.seed)

    # ---------------------------------------------------------- serialization
    def to_json(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": self.kind, "spec": _spec_json(self),
                "seed": self.seed, "params": self.params.tolist()}

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def from_json(cls, obj) -> "HeuristicModel":
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatError("checkpoint format_version mismatch")
        spec = dict(obj["spec"])
        if obj["kind"] == "tabular":
            spec["keys"] = [(iid, decode_state(s)) for iid, s in spec["keys"]]
        return cls(obj["kind"], spec, np.asarray(obj["params"], dtype=float), obj.get("seed", 0))

    @classmethod
    def load(cls, path) -> "HeuristicModel":
        with open(path) as f:
            return cls.from_json(json.load(f))


def _spec_json(model):
    spec = dict(model.spec)
    if model.kind == "tabular":
        spec["keys"] = [[iid, encode_state(s)] for iid, s in spec["keys"]]
    return spec


def n_params(kind, spec) -> int:
    if kind == "tabular":
        return len(spec["keys"])
    if kind == "linear":
        return spec["feature_dim"] + 1
    sizes = [spec["feature_dim"], *spec.get("hidden", []), 1]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def init(kind: str, spec: dict, seed: int = 0) -> HeuristicModel:
    """Zeros for tabular/linear; uniform(+-1/sqrt(fan_in)) weights and zero biases for mlp."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    spec = dict(spec)
    if kind == "tabular":
        spec["keys"] = list(dict.fromkeys(spec.get("keys", [])))
    elif "feature_dim" not in spec or spec["feature_dim"] < 1:
        raise ValueError("spec needs a positive feature_dim")
    if kind == "mlp":
        spec.setdefault("hidden", [32, 32])
        spec.setdefault("activation", "softplus")
        if spec["activation"] not in ("softplus", "relu"):
            raise ValueError("activation must be softplus or relu")
    params = np.zeros(n_params(kind, spec))
    if kind == "mlp":
        rng = np.random.default_rng(seed)
        sizes = [spec["feature_dim"], *spec["hidden"], 1]
        off = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / np.sqrt(a)
            params[off:off + a * b] = rng.uniform(-lim, lim, size=a * b)
            off += a * b + b
    return HeuristicModel(kind, spec, params, seed)


def tabular_spec(traces) -> dict:
    """Index every state appearing in the traces' tables."""
    keys = []
    for t in traces:
        keys.extend(t.key(s) for s in t.state_table)
    return {"keys": keys}
