"""Small reverse-mode differentiation engine over float64 numpy arrays.

A :class:`Tape` records primitive applications eagerly; :meth:`Tape.backward`
replays them in reverse, applying each primitive's vector-Jacobian product.
Index arrays, masks and labels are passed as keyword attributes and are never
differentiated.

Only the primitives the recommender needs are provided::

    gather concat affine tanh sigmoid exp masked_softmax segment_softmax
    weighted_sum mean sum rowdot reshape bce
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, NumericError, ShapeError

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    vjp: Callable


OPS: dict[str, Primitive] = {}


def primitive(name):
    def register(cls):
        OPS[name] = Primitive(cls.forward, cls.vjp)
        return cls
    return register


def _segment_sum(x, segments, n):
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, segments, x)
    return out


# primitives -------------------------------------------------------------------

@primitive("gather")
class _Gather:
    @staticmethod
    def forward(table, *, index):
        if table.ndim != 2:
            raise ShapeError(f"gather expects a 2-d table, got shape {table.shape}")
        if len(index) and (index.min() < 0 or index.max() >= table.shape[0]):
            raise ShapeError(f"gather index out of range for {table.shape[0]} rows")
        return table[index]

    @staticmethod
    def vjp(g, out, table, *, index):
        gt = np.zeros_like(table)
        np.add.at(gt, index, g)
        return (gt,)


@primitive("concat")
class _Concat:
    @staticmethod
    def forward(*xs):
        lead = {x.shape[:-1] for x in xs}
        if len(lead) != 1:
            raise ShapeError(f"concat shapes disagree: {[x.shape for x in xs]}")
        return np.concatenate(xs, axis=-1)

    @staticmethod
    def vjp(g, out, *xs):
        cuts = np.cumsum([x.shape[-1] for x in xs])[:-1]
        return tuple(np.split(g, cuts, axis=-1))


@primitive("affine")
class _Affine:
    @staticmethod
    def forward(x, w, b=None):
        if w.ndim != 2 or x.shape[-1] != w.shape[0]:
            raise ShapeError(f"affine: input {x.shape} vs weight {w.shape}")
        if b is not None and b.shape != (w.shape[1],):
            raise ShapeError(f"affine: bias {b.shape} vs weight {w.shape}")
        y = x @ w
        return y if b is None else y + b

    @staticmethod
    def vjp(g, out, x, w, b=None):
        gx = g @ w.T
        gw = np.outer(x, g) if x.ndim == 1 else x.T @ g
        if b is None:
            return gx, gw
        return gx, gw, (g if g.ndim == 1 else g.sum(axis=0))


@primitive("tanh")
class _Tanh:
    @staticmethod
    def forward(x):
        return np.tanh(x)

    @staticmethod
    def vjp(g, out, x):
        return (g * (1.0 - out * out),)


@primitive("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    @staticmethod
    def vjp(g, out, x):
        return (g * out * (1.0 - out),)


@primitive("exp")
class _Exp:
    @staticmethod
    def forward(x):
        return np.exp(x)

    @staticmethod
    def vjp(g, out, x):
        return (g * out,)


@primitive("masked_softmax")
class _MaskedSoftmax:
    """Softmax along the last axis over positions where ``mask`` is true."""

    @staticmethod
    def forward(x, *, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"mask {mask.shape} vs logits {x.shape}")
        if not mask.any(axis=-1).all():
            raise ContractError("masked_softmax over a fully masked row")
        z = np.where(mask, x, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def vjp(g, out, x, *, mask):
        return (out * (g - (out * g).sum(axis=-1, keepdims=True)),)


@primitive("segment_softmax")
class _SegmentSoftmax:
    """Softmax of 1-d logits within each segment (variable-length sets)."""

    @staticmethod
    def forward(x, *, segments, n):
        if x.ndim != 1 or x.shape != segments.shape:
            raise ShapeError(f"segment_softmax: logits {x.shape} vs segments {segments.shape}")
        peak = np.full(n, -np.inf)
        np.maximum.at(peak, segments, x)
        e = np.exp(x - peak[segments])
        return e / _segment_sum(e, segments, n)[segments]

    @staticmethod
    def vjp(g, out, x, *, segments, n):
        dot = _segment_sum(out * g, segments, n)
        return (out * (g - dot[segments]),)


@primitive("weighted_sum")
class _WeightedSum:
    """``out[s] = sum_{i: seg_i = s} w_i * x_i``; unweighted when ``w`` is absent."""

    @staticmethod
    def forward(x, w=None, *, segments, n):
        if x.ndim != 2 or len(x) != len(segments):
            raise ShapeError(f"weighted_sum: rows {x.shape} vs segments {segments.shape}")
        if w is not None and w.shape != (len(x),):
            raise ShapeError(f"weighted_sum: weights {w.shape} vs rows {x.shape}")
        return _segment_sum(x if w is None else x * w[:, None], segments, n)

    @staticmethod
    def vjp(g, out, x, w=None, *, segments, n):
        gs = g[segments]
        if w is None:
            return (gs,)
        return gs * w[:, None], np.einsum("ij,ij->i", gs, x)


@primitive("mean")
class _Mean:
    """Mean over axis 0, or per segment (empty segments give zeros)."""

    @staticmethod
    def forward(x, *, segments=None, n=None):
        if segments is None:
            if len(x) == 0:
                raise ContractError("mean of an empty array")
            return x.mean(axis=0)
        counts = np.maximum(np.bincount(segments, minlength=n), 1)
        return _segment_sum(x, segments, n) / counts.reshape((-1,) + (1,) * (x.ndim - 1))

    @staticmethod
    def vjp(g, out, x, *, segments=None, n=None):
        if segments is None:
            return (np.broadcast_to(g / len(x), x.shape).copy(),)
        counts = np.maximum(np.bincount(segments, minlength=n), 1)
        return ((g / counts.reshape((-1,) + (1,) * (g.ndim - 1)))[segments],)


@primitive("sum")
class _Sum:
    @staticmethod
    def forward(x):
        return np.asarray(x.sum())

    @staticmethod
    def vjp(g, out, x):
        return (np.full_like(x, g),)


@primitive("rowdot")
class _RowDot:
    @staticmethod
    def forward(a, b):
        if a.shape != b.shape:
            raise ShapeError(f"rowdot: {a.shape} vs {b.shape}")
        return np.einsum("...i,...i->...", a, b)

    @staticmethod
    def vjp(g, out, a, b):
        g = np.asarray(g)[..., None]
        return g * b, g * a


@primitive("reshape")
class _Reshape:
    @staticmethod
    def forward(x, *, shape):
        return x.reshape(shape)

    @staticmethod
    def vjp(g, out, x, *, shape):
        return (g.reshape(x.shape),)


@primitive("bce")
class _BCE:
    """Mean binary cross-entropy with probabilities clamped to [c, 1 - c]."""

    @staticmethod
    def forward(p, *, labels, clamp=BCE_CLAMP):
        labels = np.asarray(labels, dtype=np.float64)
        if p.shape != labels.shape or p.ndim != 1:
            raise ShapeError(f"bce: predictions {p.shape} vs labels {labels.shape}")
        if len(p) == 0:
            raise ContractError("bce over an empty batch")
        q = np.clip(p, clamp, 1.0 - clamp)
        return np.asarray(-np.mean(labels * np.log(q) + (1.0 - labels) * np.log(1.0 - q)))

    @staticmethod
    def vjp(g, out, p, *, labels, clamp=BCE_CLAMP):
        labels = np.asarray(labels, dtype=np.float64)
        inside = (p >= clamp) & (p <= 1.0 - clamp)
        q = np.clip(p, clamp, 1.0 - clamp)
        d = -(labels / q - (1.0 - labels) / (1.0 - q)) / len(p)
        return (g * np.where(inside, d, 0.0),)


# tape ---------------------------------------------------------------------------

class Tape:
    """Append-only record of primitive applications.

    Node ids are integers in creation order, so the record is topologically
    sorted by construction.
    """

    def __init__(self, store: "ParameterStore | None" = None):
        self.store = store
        self.values: list[np.ndarray] = []
        self.records: list[tuple[str, tuple[int, ...], dict, int]] = []
        self.param_nodes: dict[str, int] = {}

    def _new(self, value) -> int:
        self.values.append(value)
        return len(self.values) - 1

    def const(self, value) -> int:
        return self._new(np.asarray(value, dtype=np.float64))

    def param(self, name: str) -> int:
        """Leaf bound to ``store[name]``; repeated calls return the same node."""
        if name not in self.param_nodes:
            if self.store is None:
                raise ContractError("tape has no parameter store")
            self.param_nodes[name] = self._new(self.store[name])
        return self.param_nodes[name]

    def value(self, node: int) -> np.ndarray:
        return self.values[node]

    def apply(self, op: str, *inputs, **attrs) -> int:
        inputs = tuple(i for i in inputs if i is not None)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = OPS[op].forward(*(self.values[i] for i in inputs), **attrs)
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{op} produced non-finite values")
        node = self._new(out)
        self.records.append((op, inputs, attrs, node))
        return node

    # one method per primitive keeps model code readable
    def gather(self, table, index):
        return self.apply("gather", table, index=np.asarray(index, dtype=np.int64))

    def concat(self, *xs):
        return self.apply("concat", *xs)

    def affine(self, x, w, b=None):
        return self.apply("affine", x, w, b)

    def tanh(self, x):
        return self.apply("tanh", x)

    def sigmoid(self, x):
        return self.apply("sigmoid", x)

    def exp(self, x):
        return self.apply("exp", x)

    def masked_softmax(self, x, mask):
        return self.apply("masked_softmax", x, mask=mask)

    def segment_softmax(self, x, segments, n):
        return self.apply("segment_softmax", x, segments=segments, n=n)

    def weighted_sum(self, x, w, segments, n):
        return self.apply("weighted_sum", x, w, segments=segments, n=n)

    def mean(self, x, segments=None, n=None):
        return self.apply("mean", x, segments=segments, n=n)

    def sum(self, x):
        return self.apply("sum", x)

    def rowdot(self, a, b):
        return self.apply("rowdot", a, b)

    def reshape(self, x, shape):
        return self.apply("reshape", x, shape=tuple(shape))

    def bce(self, p, labels):
        return self.apply("bce", p, labels=labels)

    def backward(self, loss: int) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every parameter in the store.

        Parameters the loss does not reach get zeros.  Per-node gradients stay
        available through :meth:`grad`.
        """
        if self.values[loss].shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {self.values[loss].shape}")
        grads: list[np.ndarray | None] = [None] * len(self.values)
        grads[loss] = np.ones(())
        for op, inputs, attrs, out in reversed(self.records):
            g = grads[out]
            if g is None:
                continue
            parts = OPS[op].vjp(g, self.values[out], *(self.values[i] for i in inputs), **attrs)
            for i, gi in zip(inputs, parts):
                grads[i] = gi if grads[i] is None else grads[i] + gi
        self._grads = grads
        if self.store is None:
            return {}
        return {name: (grads[self.param_nodes[name]] if name in self.param_nodes
                       and grads[self.param_nodes[name]] is not None
                       else np.zeros_like(self.store[name]))
                for name in self.store.names()}

    def grad(self, node: int) -> np.ndarray:
        g = self._grads[node]
        return np.zeros_like(self.values[node]) if g is None else g


def forward(tape: Tape, op: str, *inputs, **attrs) -> int:
    return tape.apply(op, *inputs, **attrs)


def backward(tape: Tape, loss: int) -> dict[str, np.ndarray]:
    return tape.backward(loss)


# parameters ------------------------------------------------------------------------

class ParameterStore:
    """Named float64 parameters with their Adagrad accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.accum: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ContractError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.accum[name] = np.zeros_like(value)
        return value

    def uniform(self, name, shape, rng: np.random.Generator, scale: float):
        return self.add(name, rng.uniform(-scale, scale, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def names(self):
        return list(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name in self.params:
            out.params[name] = self.params[name].copy()
            out.accum[name] = self.accum[name].copy()
        return out

    def to_json(self) -> dict:
        return {name: {"shape": list(v.shape),
                       "values": v.ravel().tolist(),
                       "accumulator": self.accum[name].ravel().tolist()}
                for name, v in self.params.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "ParameterStore":
        out = cls()
        for name, entry in obj.items():
            shape = tuple(entry["shape"])
            out.params[name] = np.array(entry["values"], dtype=np.float64).reshape(shape)
            out.accum[name] = np.array(entry["accumulator"], dtype=np.float64).reshape(shape)
        return out


def adagrad_step(store: ParameterStore, grads: dict[str, np.ndarray],
                 lr: float, eps: float = 1e-8) -> ParameterStore:
    """In place: ``acc += g**2; theta -= lr * g / (sqrt(acc) + eps)``."""
    for name, g in grads.items():
        theta = store.params[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {theta.shape}")
        acc = store.accum[name]
        acc += g * g
        theta -= lr * g / (np.sqrt(acc) + eps)
    return store


def save_checkpoint(path, store: ParameterStore, **extra) -> None:
    obj = dict(extra)
    obj["params"] = store.to_json()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    store = ParameterStore.from_json(obj.pop("params"))
    return store, obj


# gradient checking -------------------------------------------------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [n for n, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def relative_error(analytic, numeric, floor: float = 1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients sane."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(builder: Callable[[ParameterStore], tuple[Tape, int]], params: ParameterStore,
               tolerance: float = 1e-4, step: float = 1e-5, max_elements: int = 100,
               seed: int = 0, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients with central finite differences.

    ``builder(params)`` must rebuild the loss deterministically from the
    current parameter values.  Parameters with more than ``max_elements``
    entries are checked on a seeded random sample of that many entries.
    """
    tape, loss = builder(params)
    analytic = tape.backward(loss)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for name in params.names():
        theta = params[name]
        flat = theta.reshape(-1)
        if flat.size <= max_elements:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        worst = 0.0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            t, l = builder(params)
            up = float(t.value(l))
            flat[k] = orig - step
            t, l = builder(params)
            down = float(t.value(l))
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, float(relative_error(analytic[name].reshape(-1)[k], numeric, floor)))
        report.max_rel_error[name] = worst
        report.checked[name] = len(idx)
    return report
