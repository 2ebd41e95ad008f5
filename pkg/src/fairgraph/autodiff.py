"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps an ndarray; each operation records its parents and a
vector-Jacobian product, and `grad` accumulates gradients in reverse
creation order, so accumulation order is fixed and repeated runs are
bit-identical. `grad_check` verifies analytic gradients against central
differences, skipping coordinates whose perturbation crosses a
ReLU/abs/clamp/row-max kink (the activation pattern is compared between the
two probe evaluations).
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NumericError, ShapeError, TapeError

_COUNTER = itertools.count()


class _KinkRecorder:
    """Collects activation patterns of kinked ops during a forward pass."""

    active = None

    @classmethod
    def record(cls, arr):
        if cls.active is not None:
            cls.active.append(np.asarray(arr).copy())


class _capture_patterns:
    def __enter__(self):
        self.prev = _KinkRecorder.active
        _KinkRecorder.active = []
        return _KinkRecorder.active

    def __exit__(self, *exc):
        _KinkRecorder.active = self.prev
        return False


class Tensor:
    """Node in the computation graph. Leaves with requires_grad=True are the
    trainable parameters; everything else is treated as a constant."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_id")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._id = next(_COUNTER)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are coerced to constant tensors
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor):
    return t.requires_grad or bool(t._parents)


def _make(value, parents):
    """New graph node; parents is a list of (tensor, vjp) pairs."""
    kept = tuple((p, f) for p, f in parents if _tracked(p))
    out = Tensor(value)
    out._parents = kept
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def transpose(a):
    a = as_tensor(a)
    return _make(a.value.T, [(a, lambda g: g.T)])


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.value.shape, b.value.shape
    return _make(a.value + b.value,
                 [(a, lambda g: _unbroadcast(g, ash)), (b, lambda g: _unbroadcast(g, bsh))])


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.value.shape, b.value.shape
    return _make(a.value - b.value,
                 [(a, lambda g: _unbroadcast(g, ash)), (b, lambda g: _unbroadcast(-g, bsh))])


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                           (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise NumericError("division by zero")
    return _make(av / bv, [(a, lambda g: _unbroadcast(g / bv, av.shape)),
                           (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape))])


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, [(a, lambda g: -g)])


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    av = a.value

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _make(av.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    _KinkRecorder.record(mask)
    return _make(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a):
    a = as_tensor(a)
    av = a.value
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def tlog(a):
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NumericError("log of non-positive value")
    av = a.value
    return _make(np.log(av), [(a, lambda g: g / av)])


def texp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp overflow; use exp_stable for wide ranges")
    return _make(out, [(a, lambda g: g * out)])


def exp_stable(a):
    """Row-stabilized exponential: exp(x - rowmax(x)) for a 2-D input.

    The max path is differentiated too (subtract the out-row sum at the
    argmax column), so the standalone primitive gradient-checks cleanly.
    """
    a = as_tensor(a)
    av = a.value
    if av.ndim != 2:
        raise ShapeError("exp_stable expects a 2-D input")
    arg = np.argmax(av, axis=1)
    _KinkRecorder.record(arg)
    out = np.exp(av - av[np.arange(av.shape[0]), arg][:, None])

    def vjp(g):
        gx = g * out
        rowsum = gx.sum(axis=1)
        gx[np.arange(av.shape[0]), arg] -= rowsum
        return gx

    return _make(out, [(a, vjp)])


def tabs(a):
    a = as_tensor(a)
    sign = np.where(a.value >= 0, 1.0, -1.0)
    _KinkRecorder.record(sign)
    return _make(np.abs(a.value), [(a, lambda g: g * sign)])


def clamp(a, lo, hi):
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    _KinkRecorder.record(inside)
    return _make(np.clip(a.value, lo, hi), [(a, lambda g: g * inside)])


def hstack(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"hstack: {a.value.shape} vs {b.value.shape}")
    ka = a.value.shape[1]
    return _make(np.concatenate([a.value, b.value], axis=1),
                 [(a, lambda g: g[:, :ka]), (b, lambda g: g[:, ka:])])


def slice_cols(a, start, stop):
    a = as_tensor(a)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        out[:, start:stop] = g
        return out

    # copy so the slice never aliases the parent's storage
    return _make(av[:, start:stop].copy(), [(a, vjp)])


def gather_rows(a, idx):
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _make(av[idx], [(a, vjp)])


def row_l2_normalize(a):
    """Rows scaled to unit L2 norm; all-zero rows stay zero."""
    a = as_tensor(a)
    av = a.value
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    out = av / safe

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        res = (g - out * dot) / safe
        return np.where(norms > 0, res, 0.0)

    return _make(out, [(a, vjp)])


def row_l2_norm(a):
    """Per-row Euclidean norm as an (n, 1) column; zero rows get zero grad."""
    a = as_tensor(a)
    av = a.value
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)

    def vjp(g):
        return np.where(norms > 0, g * av / safe, 0.0)

    return _make(norms, [(a, vjp)])


class NeighborAggregator:
    """Index arrays for per-node neighbor means over a fixed graph."""

    def __init__(self, graph):
        rows = []
        cols = []
        deg = np.zeros(graph.n, dtype=np.int64)
        for v, nbrs in enumerate(graph.adjacency):
            deg[v] = len(nbrs)
            rows.extend([v] * len(nbrs))
            cols.extend(nbrs)
        self.n = graph.n
        self.row = np.asarray(rows, dtype=np.int64)
        self.col = np.asarray(cols, dtype=np.int64)
        inv = np.zeros(graph.n, dtype=np.float64)
        nz = deg > 0
        inv[nz] = 1.0 / deg[nz]
        self.inv_deg = inv


def row_mean_neighbors(a, agg):
    """Mean of neighbor rows per node; isolated nodes get a zero row.

    `agg` is a NeighborAggregator (or a Graph, from which one is built).
    """
    if not isinstance(agg, NeighborAggregator):
        agg = NeighborAggregator(agg)
    a = as_tensor(a)
    av = a.value
    if av.shape[0] != agg.n:
        raise ShapeError(f"row count {av.shape[0]} != node count {agg.n}")
    sums = np.zeros_like(av)
    np.add.at(sums, agg.row, av[agg.col])
    out = sums * agg.inv_deg[:, None]

    def vjp(g):
        gw = g * agg.inv_deg[:, None]
        back = np.zeros_like(av)
        np.add.at(back, agg.col, gw[agg.row])
        return back

    return _make(out, [(a, vjp)])


def cosine_matrix(a, b):
    """Pairwise cosine similarities between rows of a and rows of b.

    Zero rows behave as cosine 0 against everything.
    """
    return matmul(row_l2_normalize(a), transpose(row_l2_normalize(b)))


def rowwise_cosine(a, b):
    """Per-row cosine between matching rows, as an (n, 1) column."""
    return tsum(mul(row_l2_normalize(a), row_l2_normalize(b)), axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# reverse pass

def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for parent, _ in node._parents:
            if parent._id not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate .grad on every tensor reachable from the scalar loss."""
    loss = as_tensor(loss)
    if loss.value.shape != ():
        raise TapeError(f"backward needs a scalar, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node._parents:
            contribution = vjp(node.grad)
            parent.grad = contribution if parent.grad is None \
                else parent.grad + contribution


def grad(loss, params):
    """Gradients of a scalar loss with respect to parameter tensors.

    Raises TapeError when a parameter never entered the recorded computation
    (zero would silently hide an unrecorded dependency).
    """
    for p in params:
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise TapeError("parameters must be Tensors with requires_grad=True")
        p.grad = None  # drop leftovers from earlier reverse passes
    backward(loss)
    out = []
    for p in params:
        if p.grad is None:
            raise TapeError("parameter never entered the recorded computation")
        out.append(p.grad)
    return out


def grad_check(loss_fn, params, eps=1e-5, max_coords=24, seed=0):
    """Max relative error between analytic gradients and central differences.

    loss_fn() must rebuild the scalar loss from the current parameter values.
    Coordinates whose +/-eps probes land on different activation patterns
    (ReLU/abs/clamp masks, row-max argmax) are skipped: subgradients
    legitimately disagree across a kink.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    analytic = grad(loss_fn(), params)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def probe():
        with _capture_patterns() as pattern:
            val = loss_fn().value
        if not np.isfinite(val):
            raise NumericError("non-finite loss during finite-difference probe")
        return float(val), pattern

    for p, g in zip(params, analytic):
        size = p.value.size
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords, replace=False)
        flat = p.value.reshape(-1)
        for i in coords:
            x0 = flat[i]
            flat[i] = x0 + eps
            f_plus, pat_plus = probe()
            flat[i] = x0 - eps
            f_minus, pat_minus = probe()
            flat[i] = x0
            if len(pat_plus) != len(pat_minus) or any(
                    a.shape != b.shape or not np.array_equal(a, b)
                    for a, b in zip(pat_plus, pat_minus)):
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(g.reshape(-1)[i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
    return worst
