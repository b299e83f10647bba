"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. Operations on tensors that require a
gradient record their parents and a closure mapping the upstream gradient to
per-parent gradients; ``Tensor.backward`` walks that graph in reverse
topological order. Broadcasting follows numpy; gradients are summed back to
each operand's shape.
"""
from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import GraphConsumed, NonFiniteValue, NonScalarOutput, ShapeMismatch

_GRAD_ENABLED = True
_CHECK_FINITE = True


@contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_check_finite(flag: bool) -> bool:
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    return prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _is_basic_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in idx)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    # -- construction -------------------------------------------------
    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Build a graph node.

        ``backward(g)`` must return one gradient (or None) per parent, each
        already shaped like that parent.
        """
        out = Tensor(data)
        if _CHECK_FINITE and not np.isfinite(out.data).all():
            raise NonFiniteValue("non-finite value produced in forward pass")
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff -----------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise NonScalarOutput(f"backward needs a scalar output, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumed("backward already ran through this graph; rebuild the forward pass")
        if not self.requires_grad:
            return
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._consumed:
                raise GraphConsumed("graph shares nodes with an already-consumed graph")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64)
                else:
                    node.grad = node.grad + g
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = pg
        for node in order:
            if node._backward is not None:
                node._consumed = True
                node._backward = None
                node._parents = ()

    # -- operator sugar -----------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# -- elementwise binary --------------------------------------------------

def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = _unbroadcast(bwd_a(g, a.data, b.data, out), sa) if a.requires_grad else None
        gb = _unbroadcast(bwd_b(g, a.data, b.data, out), sb) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, np.divide, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    if B.ndim == 2:
        # stacked rows times one matrix: a single GEMM both ways
        A2 = A.reshape(-1, A.shape[-1])
        out = (A2 @ B).reshape(A.shape[:-1] + (B.shape[1],))

        def backward(g):
            g2 = g.reshape(-1, B.shape[1])
            ga = (g2 @ B.T).reshape(A.shape) if a.requires_grad else None
            gb = A2.T @ g2 if b.requires_grad else None
            return ga, gb

        return Tensor.from_op(out, (a, b), backward)
    try:
        out = np.matmul(A, B)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(B, -1, -2)), A.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(A, -1, -2), g), B.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


# -- elementwise unary ---------------------------------------------------

def _unary(a, out: np.ndarray, dfn) -> Tensor:
    a = as_tensor(a)
    x = a.data

    def backward(g):
        return (dfn(g, x, out),)

    return Tensor.from_op(out, (a,), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, -a.data, lambda g, x, o: -g)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data ** p, lambda g, x, o: g * p * x ** (p - 1))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data * a.data, lambda g, x, o: 2.0 * g * x)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.sqrt(a.data), lambda g, x, o: g * 0.5 / o)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.abs(a.data), lambda g, x, o: g * np.sign(x))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.tanh(a.data), lambda g, x, o: g * (1.0 - o * o))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, _sigmoid(a.data), lambda g, x, o: g * o * (1.0 - o))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.logaddexp(0.0, a.data), lambda g, x, o: g * _sigmoid(x))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda g, x, o: g * (x > 0))


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.exp(a.data), lambda g, x, o: g * o)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda g, x, o: g / x)


# -- reductions and shape ops ---------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    ax = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=ax, keepdims=keepdims)

    def backward(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape),)

    return Tensor.from_op(np.asarray(out, dtype=np.float64), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    return mul(sum_(a, ax, keepdims), 1.0 / count)


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``. ``mask`` marks positions forced to zero weight.

    Each row is shifted by its first entry when that keeps every exponent
    below overflow (cheaper than a row maximum over a short axis), else by
    its maximum. Rows never share a shift, so they stay bitwise independent.
    """
    a = as_tensor(a)
    x = np.array(a.data, dtype=np.float64)
    if mask is not None:
        x[np.broadcast_to(mask, x.shape)] = -np.inf
    first = np.take(x, [0], axis=axis)
    if np.all(np.isfinite(first)):
        x -= first
        if x.size and float(x.max()) > 600.0:
            x -= np.max(x, axis=axis, keepdims=True)
    else:
        x -= np.max(x, axis=axis, keepdims=True)
    np.exp(x, out=x)
    x /= np.sum(x, axis=axis, keepdims=True)
    out = x

    def backward(g):
        gx = g * out
        gx -= out * np.sum(gx, axis=axis, keepdims=True)
        return (gx,)

    return Tensor.from_op(out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch("concat shapes incompatible") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor.from_op(out, ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return Tensor.from_op(out, ts, backward)


def slice_(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(np.array(out, dtype=np.float64), (a,), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` (embedding lookup); repeated indices accumulate."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)
    shape = a.shape
    ax = axis % a.ndim

    def backward(g):
        full = np.zeros(shape)
        if ax == 0:
            flat_idx = idx.reshape(-1)
            flat = g.reshape((idx.size,) + shape[1:])
            if flat_idx.size:
                order = np.argsort(flat_idx, kind="stable")
                si = flat_idx[order]
                starts = np.flatnonzero(np.r_[True, si[1:] != si[:-1]])
                full[si[starts]] = np.add.reduceat(flat[order], starts, axis=0)
        else:
            gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
            fm = np.moveaxis(full, ax, 0)
            np.add.at(fm, idx.reshape(-1), gm.reshape((idx.size,) + fm.shape[1:]))
        return (full,)

    return Tensor.from_op(out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return Tensor.from_op(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {old} to {shape}") from exc

    def backward(g):
        return (g.reshape(old),)

    return Tensor.from_op(out, (a,), backward)


def l2norm(a, axis=-1, keepdims=False, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (gg * x / np.maximum(out, eps),)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return Tensor.from_op(res, (a,), backward)


def where(cond: np.ndarray, a, b) -> Tensor:
    return add(mul(a, cond.astype(np.float64)), mul(b, 1.0 - cond.astype(np.float64)))


# -- gradient checking ----------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    step: float
    worst: tuple[str, tuple] | None = None
    details: dict[str, tuple] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], step: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-6, max_elems: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``; the
    report keeps the maximum per parameter. ``max_elems`` caps the number of
    probed entries per parameter (sampled with ``rng``).
    """
    for p in params.values():
        p.zero_grad()
    f().backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    errors, details = {}, {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idxs = np.arange(flat.size)
            if max_elems is not None and flat.size > max_elems:
                idxs = rng.choice(flat.size, size=max_elems, replace=False)
            worst = 0.0
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + step
                fp = f().item()
                flat[i] = orig - step
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * step)
                an = analytic[name].reshape(-1)[i]
                err = abs(an - num) / max(abs(an), abs(num), floor)
                if err > worst:
                    worst = err
                    details[name] = (int(i), float(an), float(num))
            errors[name] = worst
    for p in params.values():
        p.zero_grad()
    worst_name = max(errors, key=errors.get) if errors else None
    return GradCheckReport(errors, tol, step,
                           (worst_name, details.get(worst_name)) if worst_name else None, details)


# -- optimisation -----------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None], state: AdamState,
              lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied in place to ``params``."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adam_step_rows(p: np.ndarray, m: np.ndarray, v: np.ndarray, rows: np.ndarray, g: np.ndarray, t: int,
                   lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Lazy Adam on selected rows only; ``t`` is the global step count (>= 1).

    ``rows`` must be unique. Untouched rows keep their parameters and moments.
    """
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    mr = b1 * m[rows] + (1.0 - b1) * g
    vr = b2 * v[rows] + (1.0 - b2) * (g * g)
    m[rows] = mr
    v[rows] = vr
    p[rows] -= lr * (mr / c1) / (np.sqrt(vr / c2) + eps)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step({k: p.data for k, p in self.params.items()},
                  {k: p.grad for k, p in self.params.items()},
                  self.state, self.lr, self.betas, self.eps)


def multistep_lr(base_lr: float, epoch: int, milestones: Iterable[int] = (150, 250, 350, 450),
                 gamma: float = 0.5) -> float:
    """Learning rate for ``epoch`` (0-based) under a milestone decay table."""
    n = sum(1 for m in milestones if epoch >= m)
    return base_lr * gamma ** n


# -- checkpoints ------------------------------------------------------------

_BIN_MAGIC = b"CKGPARAM1\n"


def _as_arrays(params: Mapping[str, "Tensor | np.ndarray"]) -> dict[str, np.ndarray]:
    out = {}
    for name in params:
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name], dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"parameter {name} is not finite")
        out[name] = arr
    return out


def params_to_records(params: Mapping[str, "Tensor | np.ndarray"]) -> list[dict]:
    return [{"name": k, "shape": list(a.shape), "values": [float(v) for v in a.reshape(-1)]}
            for k, a in _as_arrays(params).items()]


def records_to_params(records: list[dict]) -> dict[str, np.ndarray]:
    return {r["name"]: np.array(r["values"], dtype=np.float64).reshape(r["shape"]) for r in records}


def save_params(path: str | Path, params: Mapping[str, "Tensor | np.ndarray"], meta: dict | None = None) -> None:
    """Write parameters as JSON records (``.json``) or as a binary block.

    The binary layout is a magic line, one JSON header line listing
    ``{name, shape}`` records plus ``meta``, then the little-endian float64
    values of every array in header order.
    """
    path = Path(path)
    if path.suffix == ".json":
        doc = params_to_records(params)
        if meta is not None:
            doc = {"meta": meta, "params": doc}
        path.write_text(json.dumps(doc, separators=(",", ":")))
        return
    arrays = _as_arrays(params)
    header = {"params": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()], "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params_with_meta(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(_BIN_MAGIC):
        doc = json.loads(raw)
        if isinstance(doc, dict):
            return records_to_params(doc["params"]), doc.get("meta", {})
        return records_to_params(doc), {}
    nl = raw.index(b"\n", len(_BIN_MAGIC))
    header = json.loads(raw[len(_BIN_MAGIC):nl])
    off = nl + 1
    out = {}
    for rec in header["params"]:
        n = int(np.prod(rec["shape"], dtype=np.int64))
        out[rec["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(rec["shape"])
        off += 8 * n
    return out, header.get("meta", {})


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    return load_params_with_meta(path)[0]


def glorot(rng: np.random.Generator, shape: tuple, fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    fan_in = fan_in if fan_in is not None else shape[-2] if len(shape) > 1 else shape[0]
    fan_out = fan_out if fan_out is not None else shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
