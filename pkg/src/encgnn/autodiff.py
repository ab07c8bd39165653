"""Dense 2-D tensors with a replayable operation tape for reverse-mode autodiff.

Every operation records a backward closure that is itself written in terms of
the public taped primitives. Running ``backward`` in higher-order mode replays
those closures with recording enabled, so the produced gradient tensors carry
their own tape entries and can be differentiated again. This is what makes the
gradient-of-gradient losses in this package possible without a second engine.

Only 2-D shapes are supported; scalars are 1x1 tensors and broadcasting is
limited to row vectors, column vectors and 1x1 against a full matrix.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager, nullcontext

import numpy as np
import scipy.sparse as sp

LOG_EPS = 1e-12

_default_dtype = np.float64

_state = threading.local()


def set_default_dtype(dtype) -> None:
    """Switch numeric precision (float64 by default, float32 for speed)."""
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = None
        _state.grad_enabled = True
    return _state


class Tensor:
    """A 2-D value, optionally tracked on the active tape.

    ``tape``/``tape_id`` identify the record that produced this tensor. A
    tensor with no tape id behaves as a constant for differentiation.
    """

    __slots__ = ("data", "tape", "tape_id")

    def __init__(self, data):
        arr = np.asarray(data, dtype=_default_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = None
        self.tape_id = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a 1x1 tensor")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tracked = "" if self.tape_id is None else f", tape_id={self.tape_id}"
        return f"Tensor(shape={self.shape}{tracked})"


class Tape:
    """Append-only log of op records for one training step.

    records[i] = (backward_fn | None, parent_ids). Leaves carry no backward
    function. Parents always precede children, so a single reverse sweep
    performs backpropagation.
    """

    def __init__(self):
        self.records: list[tuple] = []

    def __len__(self) -> int:
        return len(self.records)

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf (parameter) on this tape."""
        t.tape = self
        t.tape_id = len(self.records)
        self.records.append((None, ()))
        return t

    def _record(self, out: Tensor, backward_fn, parent_ids) -> None:
        out.tape = self
        out.tape_id = len(self.records)
        self.records.append((backward_fn, parent_ids))


@contextmanager
def active_tape(tape: Tape):
    tls = _tls()
    prev = tls.tape
    tls.tape = tape
    try:
        yield tape
    finally:
        tls.tape = prev


@contextmanager
def no_grad():
    tls = _tls()
    prev = tls.grad_enabled
    tls.grad_enabled = False
    try:
        yield
    finally:
        tls.grad_enabled = prev


class KinkTrace:
    """Smallest nonzero distance of any relu/leaky_relu/abs input to its kink.

    Finite-difference gradient checks resample their inputs until this margin
    is comfortable; exact zeros are ignored since they stay pinned under the
    probe perturbations.
    """

    def __init__(self):
        self.margin = np.inf

    def observe(self, data: np.ndarray) -> None:
        nz = np.abs(data[data != 0.0])
        if nz.size:
            self.margin = min(self.margin, float(nz.min()))


@contextmanager
def kink_trace():
    tls = _tls()
    prev = getattr(tls, "kinks", None)
    tls.kinks = trace = KinkTrace()
    try:
        yield trace
    finally:
        tls.kinks = prev


def _observe_kinks(data: np.ndarray) -> None:
    kinks = getattr(_tls(), "kinks", None)
    if kinks is not None:
        kinks.observe(data)


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.tape is tape and t.tape_id is not None


def _result(data, parents, backward_fn) -> Tensor:
    """Create the output tensor, recording it when any parent is tracked."""
    tls = _tls()
    out = Tensor(data)
    tape = tls.tape
    if tape is not None and tls.grad_enabled:
        ids = tuple(p.tape_id if _tracked(p, tape) else None for p in parents)
        if any(i is not None for i in ids):
            tape._record(out, backward_fn, ids)
    return out


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# broadcasting helpers

def _check_broadcast(a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.rows != 1:
        g = sum_axis(g, axis=0)
    if shape[1] == 1 and g.cols != 1:
        g = sum_axis(g, axis=1)
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives

def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product with row/col/1x1 broadcasting."""
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b)
    out_data = a.data / b.data

    def bw(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(neg(div(mul(g, out), b)), b.shape)
        return ga, gb

    out = _result(out_data, (a, b), bw)
    return out


def neg(a) -> Tensor:
    a = astensor(a)

    def bw(g):
        return (neg(g),)

    return _result(-a.data, (a,), bw)


def scalar_mul(a, c: float) -> Tensor:
    a = astensor(a)
    c = float(c)

    def bw(g):
        return (scalar_mul(g, c),)

    return _result(a.data * c, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul shapes {a.shape} x {b.shape}")

    def bw(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _result(a.data @ b.data, (a, b), bw)


def transpose(a) -> Tensor:
    a = astensor(a)

    def bw(g):
        return (transpose(g),)

    return _result(a.data.T.copy(), (a,), bw)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a) -> Tensor:
    a = astensor(a)
    ones = Tensor(np.ones(a.shape))

    def bw(g):
        return (mul(g, ones),)

    return _result(a.data.sum(keepdims=True).reshape(1, 1), (a,), bw)


def sum_axis(a, axis: int) -> Tensor:
    """Sum over one axis, keeping it as size 1."""
    a = astensor(a)
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    ones = Tensor(np.ones(a.shape))

    def bw(g):
        return (mul(g, ones),)

    return _result(a.data.sum(axis=axis, keepdims=True), (a,), bw)


def mean_all(a) -> Tensor:
    a = astensor(a)
    return scalar_mul(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def relu(a) -> Tensor:
    a = astensor(a)
    _observe_kinks(a.data)
    mask = Tensor((a.data > 0).astype(_default_dtype))

    def bw(g):
        return (mul(g, mask),)

    return _result(np.maximum(a.data, 0.0), (a,), bw)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = astensor(a)
    _observe_kinks(a.data)
    factor = Tensor(np.where(a.data > 0, 1.0, slope))

    def bw(g):
        return (mul(g, factor),)

    return _result(np.where(a.data > 0, a.data, slope * a.data), (a,), bw)


def abs_(a) -> Tensor:
    """|x| with subgradient 0 at x = 0."""
    a = astensor(a)
    _observe_kinks(a.data)
    sgn = Tensor(np.sign(a.data))

    def bw(g):
        return (mul(g, sgn),)

    return _result(np.abs(a.data), (a,), bw)


def exp(a) -> Tensor:
    a = astensor(a)

    def bw(g):
        return (mul(g, out),)

    out = _result(np.exp(a.data), (a,), bw)
    return out


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient is zero in the clamped region."""
    a = astensor(a)
    mask = Tensor((a.data >= floor).astype(_default_dtype))

    def bw(g):
        return (mul(g, mask),)

    return _result(np.maximum(a.data, floor), (a,), bw)


def _log_core(a: Tensor) -> Tensor:
    def bw(g):
        return (div(g, a),)

    return _result(np.log(a.data), (a,), bw)


def log(a, eps: float = LOG_EPS) -> Tensor:
    """Natural log clamped below at eps so 0*log(0) terms evaluate to 0."""
    a = astensor(a)
    if np.any(a.data < 0):
        raise ValueError("log of negative input")
    return _log_core(clamp_min(a, eps))


def sqrt(a) -> Tensor:
    a = astensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")

    def bw(g):
        return (div(g, scalar_mul(out, 2.0)),)

    out = _result(np.sqrt(a.data), (a,), bw)
    return out


# ---------------------------------------------------------------------------
# shape / indexing primitives

def gather_rows(a, index) -> Tensor:
    """Select rows a[index]; dual of scatter_add_rows."""
    a = astensor(a)
    idx = np.asarray(index, dtype=np.int64).ravel()

    def bw(g):
        return (scatter_add_rows(g, idx, a.rows),)

    return _result(a.data[idx], (a,), bw)


def scatter_add_rows(a, index, num_rows: int) -> Tensor:
    """Accumulate rows of a into num_rows buckets given by index."""
    a = astensor(a)
    idx = np.asarray(index, dtype=np.int64).ravel()
    if idx.shape[0] != a.rows:
        raise ValueError("index length must match row count")
    out_data = np.zeros((num_rows, a.cols), dtype=_default_dtype)
    np.add.at(out_data, idx, a.data)

    def bw(g):
        return (gather_rows(g, idx),)

    return _result(out_data, (a,), bw)


def concat_cols(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.rows != b.rows:
        raise ValueError("concat_cols needs equal row counts")
    ca = a.cols

    def bw(g):
        return slice_cols(g, 0, ca), slice_cols(g, ca, ca + b.cols)

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), bw)


def slice_cols(a, lo: int, hi: int) -> Tensor:
    a = astensor(a)
    total = a.cols

    def bw(g):
        return (_pad_cols(g, lo, total),)

    return _result(a.data[:, lo:hi].copy(), (a,), bw)


def _pad_cols(a: Tensor, lo: int, total: int) -> Tensor:
    a = astensor(a)
    hi = lo + a.cols
    out_data = np.zeros((a.rows, total), dtype=_default_dtype)
    out_data[:, lo:hi] = a.data

    def bw(g):
        return (slice_cols(g, lo, hi),)

    return _result(out_data, (a,), bw)


def dropout(a, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: train-mode output is scaled by 1/(1-p)."""
    a = astensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout p must be in [0, 1)")
    if not train or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(_default_dtype) / (1.0 - p)
    mask = Tensor(keep)

    def bw(g):
        return (mul(g, mask),)

    return _result(a.data * keep, (a,), bw)


# ---------------------------------------------------------------------------
# composites

def row_softmax(a) -> Tensor:
    """Row-stochastic softmax, stable via a detached per-row max shift."""
    a = astensor(a)
    shift = Tensor(a.data.max(axis=1, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, sum_axis(e, axis=1))


def row_log_softmax(a) -> Tensor:
    a = astensor(a)
    shift = Tensor(a.data.max(axis=1, keepdims=True))
    centered = sub(a, shift)
    # log-sum-exp of centered logits is >= 1, no clamp needed
    return sub(centered, _log_core(sum_axis(exp(centered), axis=1)))


def segment_softmax(scores, segments, num_segments: int) -> Tensor:
    """Softmax of an m x 1 score column within groups given by segments.

    Stabilized by a detached per-segment max shift; segments without entries
    never appear in the output.
    """
    scores = astensor(scores)
    if scores.cols != 1:
        raise ValueError("segment_softmax expects an m x 1 score column")
    seg = np.asarray(segments, dtype=np.int64).ravel()
    seg_max = np.full((num_segments, 1), -np.inf)
    np.maximum.at(seg_max, seg, scores.data)
    shifted = sub(scores, Tensor(seg_max[seg, 0].reshape(-1, 1)))
    e = exp(shifted)
    denom = scatter_add_rows(e, seg, num_segments)
    return div(e, gather_rows(denom, seg))


def dot(a, b) -> Tensor:
    """Sum of the elementwise product; operands must share a shape."""
    a, b = astensor(a), astensor(b)
    if a.shape != b.shape:
        raise ValueError("dot needs equal shapes")
    return sum_all(mul(a, b))


def l2_norm(a) -> Tensor:
    a = astensor(a)
    return sqrt(sum_all(mul(a, a)))


# ---------------------------------------------------------------------------
# sparse operator

class SparseOperator:
    """CSR sparsity pattern with constant or tape-tracked values.

    Constant values (normalized propagation, row-stochastic smoothing) use
    scipy's CSR product. Tracked values (attention weights) route through the
    gather/scatter primitives so gradients flow into the values tensor.
    """

    def __init__(self, csr: sp.spmatrix | None = None, *, pattern=None, values=None, shape=None):
        if csr is not None:
            self.csr = sp.csr_matrix(csr)
            self.csr_t = self.csr.T.tocsr()
            self.pattern = None
            self.values = None
            self.shape = self.csr.shape
        else:
            dst, src = pattern
            self.csr = None
            self.csr_t = None
            self.pattern = (np.asarray(dst, dtype=np.int64), np.asarray(src, dtype=np.int64))
            self.values = values
            self.shape = shape

    @classmethod
    def from_edges(cls, dst, src, values: Tensor, n: int) -> "SparseOperator":
        """Operator out[i] = sum over entries e with dst[e]=i of values[e] * x[src[e]]."""
        return cls(pattern=(dst, src), values=values, shape=(n, n))

    def apply(self, x: Tensor) -> Tensor:
        x = astensor(x)
        if self.csr is not None:
            return spmm(self, x)
        dst, src = self.pattern
        return scatter_add_rows(mul(self.values, gather_rows(x, src)), dst, self.shape[0])

    def to_dense(self) -> np.ndarray:
        if self.csr is not None:
            return self.csr.toarray()
        dense = np.zeros(self.shape)
        dst, src = self.pattern
        vals = self.values.data if isinstance(self.values, Tensor) else self.values
        np.add.at(dense, (dst, src), np.ravel(vals))
        return dense


def spmm(op: SparseOperator, x) -> Tensor:
    """Constant sparse matrix times dense tensor."""
    x = astensor(x)
    if op.csr is None:
        raise ValueError("spmm requires constant values; use SparseOperator.apply")
    if op.shape[1] != x.rows:
        raise ValueError(f"spmm shapes {op.shape} x {x.shape}")

    def bw(g):
        return (_spmm_t(op, g),)

    return _result(op.csr @ x.data, (x,), bw)


def _spmm_t(op: SparseOperator, g: Tensor) -> Tensor:
    def bw(gg):
        return (spmm(op, gg),)

    return _result(op.csr_t @ g.data, (g,), bw)


# ---------------------------------------------------------------------------
# backward

def backward(tape: Tape, loss: Tensor, wrt, higher_order: bool = False) -> dict[int, Tensor]:
    """Reverse sweep from loss to the watched leaves in wrt.

    Returns a map tape_id -> gradient tensor for every tensor in wrt. With
    higher_order=True the sweep records its own operations on the tape, so
    the returned gradients are differentiable; otherwise recording is
    suppressed for speed.
    """
    if loss.data.shape != (1, 1):
        raise ValueError("backward requires a 1x1 scalar loss")
    if not _tracked(loss, tape):
        raise ValueError("loss is not tracked on this tape")
    for t in wrt:
        if not _tracked(t, tape):
            raise ValueError("a requested tensor is detached from this tape")

    grads: dict[int, Tensor] = {loss.tape_id: Tensor(np.ones((1, 1)))}
    leaf_grads: dict[int, Tensor] = {}
    ctx = nullcontext() if higher_order else no_grad()
    with ctx, active_tape(tape):
        for rid in range(loss.tape_id, -1, -1):
            g = grads.pop(rid, None)
            if g is None:
                continue
            backward_fn, parent_ids = tape.records[rid]
            if backward_fn is None:
                leaf_grads[rid] = g
                continue
            parent_grads = backward_fn(g)
            for pid, pg in zip(parent_ids, parent_grads):
                if pid is None or pg is None:
                    continue
                acc = grads.get(pid)
                grads[pid] = pg if acc is None else add(acc, pg)

    out: dict[int, Tensor] = {}
    for t in wrt:
        g = leaf_grads.get(t.tape_id)
        if g is None:
            g = Tensor(np.zeros(t.shape))
        out[t.tape_id] = g
    return out


# ---------------------------------------------------------------------------
# initializers

def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise ValueError("dimensions must be positive")
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)))


def identity_init(c: int) -> Tensor:
    if c <= 0:
        raise ValueError("dimension must be positive")
    return Tensor(np.eye(c))
