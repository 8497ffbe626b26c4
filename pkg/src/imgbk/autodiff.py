"""Minimal reverse-mode differentiation over dense float64 matrices.

Values are 2-D numpy arrays wrapped in :class:`Tensor`. Primitive
functions in this module compute their forward value and, while a
:class:`Tape` is active and some input requires a gradient, append a
record holding a closed-form vector-Jacobian product. :func:`backward`
replays the tape in reverse and deposits parameter gradients into a
:class:`ParamStore`.

Only the primitives the models and losses need are provided; there is no
general broadcasting.
"""

from __future__ import annotations

import contextvars
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError

CHECKPOINT_FORMAT = "imgbk-params"
CHECKPOINT_VERSION = 1

_active_tape: contextvars.ContextVar = contextvars.ContextVar("imgbk_tape", default=None)


class Tensor:
    """A dense matrix, optionally tracked for gradients."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        if value.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    vjp: Callable
    op: str


class Tape:
    """Ordered log of primitive applications. Use as a context manager."""

    def __init__(self):
        self.records: list = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    # NaN and +-inf all propagate into the sum; one reduction instead of a mask
    if not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
        raise NumericalError(f"{op} produced non-finite values")
    return value


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    _check_finite(value, op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = _active_tape.get()
    if needs and tape is not None:
        tape.records.append(_Record(out, tuple(inputs), vjp, op))
    return out


def _shape_error(op, *shapes):
    raise ValueError(f"{op}: incompatible shapes {' , '.join(str(s) for s in shapes)}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _emit(
        "matmul",
        av @ bv,
        (a, b),
        lambda g: (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        _shape_error("add", a.shape, b.shape)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def add_row(a: Tensor, row) -> Tensor:
    """Add a ``1 x cols`` row to every row of ``a``."""
    row = constant(row)
    if row.shape != (1, a.shape[1]):
        _shape_error("add_row", a.shape, row.shape)
    return _emit(
        "add_row",
        a.value + row.value,
        (a, row),
        lambda g: (g, g.sum(axis=0, keepdims=True) if row.requires_grad else None),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.value * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        _shape_error("concat_cols", a.shape, b.shape)
    k = a.shape[1]
    return _emit(
        "concat_cols",
        np.concatenate([a.value, b.value], axis=1),
        (a, b),
        lambda g: (g[:, :k], g[:, k:]),
    )


def _scatter_rows(index: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum rows of ``g`` into ``n_rows`` buckets given by ``index``."""
    k = index.shape[0]
    s = sp.csr_matrix((np.ones(k), (index, np.arange(k))), shape=(n_rows, k))
    return np.asarray(s @ g)


def select_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= a.shape[0])):
        raise ValueError("select_rows: index out of range")
    n = a.shape[0]
    return _emit("select_rows", a.value[index], (a,), lambda g: (_scatter_rows(index, g, n),))


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _emit("log_softmax_rows", y, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def spmm(s, h: Tensor, s_t=None) -> Tensor:
    """Constant sparse matrix times dense tensor.

    ``s_t`` may carry a precomputed transpose for repeated use.
    """
    if s.shape[1] != h.shape[0]:
        _shape_error("spmm", s.shape, h.shape)
    st = s_t if s_t is not None else s.T.tocsr()
    return _emit("spmm", np.asarray(s @ h.value), (h,), lambda g: (np.asarray(st @ g),))


class Aggregator:
    """CSR layout for mean neighbourhood aggregation with per-slot weights.

    Slot ``e`` connects row ``src[e]`` to neighbour ``dst[e]``; the mean
    divides by the row degree, so isolated rows aggregate to zero.
    """

    def __init__(self, offsets: np.ndarray, neighbors: np.ndarray):
        self.n = int(offsets.shape[0] - 1)
        self.indptr = np.asarray(offsets, dtype=np.int64)
        self.indices = np.asarray(neighbors, dtype=np.int64)
        deg = np.diff(self.indptr)
        self.src = np.repeat(np.arange(self.n), deg)
        inv = np.zeros(self.n)
        inv[deg > 0] = 1.0 / deg[deg > 0]
        self.inv_deg = inv[self.src]

    @property
    def n_slots(self) -> int:
        return int(self.indices.shape[0])

    def matrix(self, weights: np.ndarray) -> sp.csr_matrix:
        """``diag(1/deg) * A`` with slot weights ``weights`` (length n_slots)."""
        data = np.asarray(weights, dtype=np.float64).reshape(-1) * self.inv_deg
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def gated_aggregate(ms: Tensor, md: Tensor, alpha: Tensor, agg: Aggregator) -> Tensor:
    """``out_i = mean_j [ a_ij * ms_j + (1 - a_ij) * md_j ]`` over neighbours j of i.

    ``alpha`` is an ``n_slots x 1`` tensor aligned with the CSR slots.
    """
    if ms.shape != md.shape or ms.shape[0] != agg.n or alpha.shape != (agg.n_slots, 1):
        _shape_error("gated_aggregate", ms.shape, md.shape, alpha.shape)
    a = alpha.value[:, 0]
    s_same = agg.matrix(a)
    s_diff = agg.matrix(1.0 - a)
    msv, mdv = ms.value, md.value
    out = np.asarray(s_same @ msv) + np.asarray(s_diff @ mdv)

    def vjp(g):
        g_ms = np.asarray(s_same.T @ g) if ms.requires_grad else None
        g_md = np.asarray(s_diff.T @ g) if md.requires_grad else None
        g_a = None
        if alpha.requires_grad:
            diff = msv - mdv
            g_a = np.einsum("ij,ij->i", g[agg.src], diff[agg.indices]) * agg.inv_deg
            g_a = g_a[:, None]
        return g_ms, g_md, g_a

    return _emit("gated_aggregate", out, (ms, md, alpha), vjp)


def nll(logp: Tensor, labels, weights=None) -> Tensor:
    """Weighted mean of ``-logp[i, labels[i]]``; returns a 1x1 tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logp.shape[0]
    if labels.shape != (n,) or n == 0:
        raise ValueError("nll: need one label per row and at least one row")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("nll: weights must have a positive sum")
    rows = np.arange(n)
    val = -(w * logp.value[rows, labels]).sum() / total

    def vjp(g):
        out = np.zeros_like(logp.value)
        out[rows, labels] = -w * (g[0, 0] / total)
        return (out,)

    return _emit("nll", np.array([[val]]), (logp,), vjp)


def bce_with_logits(z: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(z)`` against 0/1 targets (z is k x 1)."""
    t = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if z.shape != t.shape or z.shape[1] != 1:
        _shape_error("bce_with_logits", z.shape, t.shape)
    k = z.shape[0]
    if k == 0:
        return Tensor(np.zeros((1, 1)))
    x = z.value
    terms = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    p = _sigmoid(x)
    return _emit("bce_with_logits", np.array([[terms.mean()]]), (z,), lambda g: ((p - t) * (g[0, 0] / k),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum_all", np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def inner(a: Tensor, c) -> Tensor:
    """``sum(a * c)`` for a constant array ``c`` of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        _shape_error("inner", a.shape, c.shape)
    return _emit("inner", np.array([[np.sum(a.value * c)]]), (a,), lambda g: (c * g[0, 0],))


# ---------------------------------------------------------------------------
# parameters, backward, optimisation


class ParamStore:
    """Named parameters with gradient slots and Adam moments."""

    def __init__(self):
        self.params: dict = {}
        self.grads: dict = {}
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0

    def add(self, name: str, value) -> None:
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"parameter {name!r} must be 2-D")
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def tensor(self, name: str) -> Tensor:
        return Tensor(self.params[name], requires_grad=True, name=name)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def names(self) -> list:
        return list(self.params)

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, values: dict) -> None:
        for k, v in values.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k!r}: {self.params[k].shape} vs {v.shape}")
            self.params[k][...] = v


def backward(tape: Tape, root: Tensor, store: Optional[ParamStore] = None) -> dict:
    """Propagate d(root)/d(.) through ``tape``.

    Gradients of named leaf tensors are added into ``store.grads`` (uses of
    one parameter accumulate). Returns the gradient map keyed by tensor id.
    """
    if root.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) root, got {root.shape}")
    if not any(r.out is root for r in tape.records):
        raise RuntimeError("root was not produced on this tape; run the forward pass first")
    grads = {id(root): np.ones((1, 1))}
    leaves = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t.name is not None:
                leaves[key] = t
    if store is not None:
        for key, t in leaves.items():
            if key in grads and t.name in store.grads:
                store.grads[t.name] += grads[key]
    return grads


def adam_step(
    store: ParamStore,
    lr: float,
    weight_decay: float = 0.0,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction and coupled L2 weight decay."""
    b1, b2 = betas
    store.step += 1
    t = store.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.params.items():
        g = store.grads[name]
        if weight_decay:
            g = g + weight_decay * p
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        _check_finite(p, f"adam update of {name!r}")


def glorot_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ValueError("glorot_init needs positive dimensions")
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def evaluate(build: Callable[[ParamStore], Tensor], store: ParamStore) -> float:
    """Forward pass only, without recording."""
    token = _active_tape.set(None)
    try:
        return build(store).item()
    finally:
        _active_tape.reset(token)


def _central(build, store, flat, i, eps):
    orig = flat[i]
    flat[i] = orig + eps
    fp = evaluate(build, store)
    flat[i] = orig - eps
    fm = evaluate(build, store)
    flat[i] = orig
    return (fp - fm) / (2 * eps)


def grad_check(
    build: Callable[[ParamStore], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    richardson: bool = False,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``build`` maps the store to a 1x1 tensor. ``max_coords`` limits the
    number of coordinates probed per parameter (sampled with ``rng``).

    With ``richardson`` the estimate combines steps ``eps`` and ``eps/2``
    as ``(4 D(eps/2) - D(eps)) / 3``, cancelling the O(eps^2) term. That
    allows a larger step, so rounding in ``build`` no longer dominates
    coordinates whose true gradient is tiny.
    """
    store.zero_grad()
    with Tape() as tape:
        out = build(store)
    f0 = out.item()
    backward(tape, out, store)
    analytic = {k: g.copy() for k, g in store.grads.items()}
    store.zero_grad()
    if evaluate(build, store) != f0:
        raise NumericalError("build is not deterministic: two forward passes differ")

    worst = 0.0
    for name, p in store.params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            num = _central(build, store, flat, i, eps)
            if richardson:
                num = (4.0 * _central(build, store, flat, i, eps / 2) - num) / 3.0
            a = a_flat[i]
            rel = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def params_to_json(store: ParamStore, extra: Optional[dict] = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": [
            {"name": k, "shape": list(v.shape), "values": v.reshape(-1).tolist()}
            for k, v in store.params.items()
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def params_from_json(doc: dict) -> ParamStore:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an imgbk parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    store = ParamStore()
    for entry in doc["params"]:
        rows, cols = entry["shape"]
        vals = np.array(entry["values"], dtype=np.float64)
        if vals.size != rows * cols:
            raise ValueError(f"parameter {entry['name']!r}: {vals.size} values for shape {rows}x{cols}")
        store.add(entry["name"], vals.reshape(rows, cols))
    return store


def save_params(store: ParamStore, path, extra: Optional[dict] = None) -> None:
    Path(path).write_text(json.dumps(params_to_json(store, extra)) + "\n", encoding="utf-8")


def load_params(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return params_from_json(doc), doc
