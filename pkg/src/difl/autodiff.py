"""Reverse-mode automatic differentiation over dense float64 tensors.

The graph is an explicit tape: every operation appends a record holding the
operation kind, input node ids, output node id, and whatever small state the
backward pass needs. Gradients come from a single reverse sweep over the
tape. Forward values are kept per node, so a tape can be replayed to check
that recomputation from the leaves reproduces every activation bit for bit.

Scope is deliberately narrow: exactly the operations needed to express small
convolutional classifiers with sigmoid heads and their cross-entropy style
losses. Everything is float64 with a fixed summation order per backend, so
repeated runs give bit-identical values and gradients.

Operations applied to constants only (no operand registered in a graph)
evaluate eagerly and return another constant; that is the inference path.
When at least one operand lives in a graph, constant operands are absorbed
into that graph as no-grad leaves so the tape stays self-contained.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor", "Graph", "tensor", "backward", "grad_check",
    "add", "bias_add", "clamp", "conv2d", "dense", "flatten", "log",
    "max_pool2", "mean", "mul_const", "neg", "relu", "reshape", "rsub_const",
    "sigmoid",
]


class Tensor:
    """A dense float64 array, optionally bound to a node of a Graph."""

    __slots__ = ("data", "node", "graph")

    def __init__(self, data, node=None, graph=None):
        self.data = data
        self.node = node
        self.graph = graph

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor(shape={self.data.shape}, {tag})"


def tensor(data, shape=None):
    """Build a constant tensor. ``data`` is copied, never aliased.

    When ``shape`` is given, ``data`` is read as a flat element list in
    row-major order and must fill the shape exactly.
    """
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(e) for e in shape)
        if any(e < 1 for e in shape):
            raise ShapeError(f"tensor extents must be >= 1, got {shape}")
        want = 1
        for e in shape:
            want *= e
        if arr.size != want:
            raise ShapeError(
                f"{arr.size} elements cannot fill shape {shape} ({want} elements)")
        arr = arr.reshape(shape)
    # np.array already yielded a fresh C-order array; ascontiguousarray would
    # promote 0-d to 1-d, which we do not want
    return Tensor(arr)


class _Record:
    __slots__ = ("kind", "inputs", "out", "ctx", "saved")

    def __init__(self, kind, inputs, out, ctx, saved):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.ctx = ctx
        self.saved = saved


class Graph:
    """Tape of operation records plus per-node values and gradient flags.

    Construction is single-threaded per instance; distinct graphs are
    independent and may be used concurrently.
    """

    def __init__(self):
        self._values = []      # node id -> ndarray
        self._grad_flags = []  # node id -> participates in gradients
        self._leaves = []      # node ids registered via leaf()
        self._records = []

    def leaf(self, value, needs_grad=True):
        """Register ``value`` (copied) as a leaf node of this graph."""
        if isinstance(value, Tensor):
            value = value.data
        arr = np.array(value, dtype=np.float64, order="C")
        nid = self._new_node(arr, needs_grad)
        self._leaves.append(nid)
        return Tensor(arr, nid, self)

    def _new_node(self, arr, needs_grad):
        self._values.append(arr)
        self._grad_flags.append(needs_grad)
        return len(self._values) - 1

    def value(self, node):
        return self._values[node]

    @property
    def num_records(self):
        return len(self._records)

    @property
    def records(self):
        """Read-only view of the tape, in execution order."""
        return tuple(self._records)

    def replay(self):
        """Recompute every record from current leaf values and verify that
        all stored activations are reproduced bit for bit."""
        for idx, rec in enumerate(self._records):
            vals = [self._values[i] for i in rec.inputs]
            out, _ = _forward(rec.kind, vals, rec.ctx)
            stored = self._values[rec.out]
            if out.shape != stored.shape or out.tobytes() != stored.tobytes():
                raise ContractError(f"replay mismatch at record {idx} ({rec.kind})")


def _forward(kind, vals, ctx):
    """Compute one operation. Returns (output array, saved state)."""
    if kind == "dense":
        x, w, b = vals
        return x @ w + b, None
    if kind == "conv2d":
        return kernels.conv2d_forward(vals[0], vals[1], ctx), None
    if kind == "bias_add":
        x, b = vals
        return x + b[None, :, None, None], None
    if kind == "relu":
        return np.maximum(vals[0], 0.0), None
    if kind == "sigmoid":
        # exp of a non-positive argument in both branches, so no overflow
        t = np.exp(-np.abs(vals[0]))
        return np.where(vals[0] >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t)), None
    if kind == "log":
        if np.any(vals[0] <= 0.0):
            raise DomainError("log requires strictly positive inputs")
        return np.log(vals[0]), None
    if kind == "mean":
        return np.asarray(np.mean(vals[0])), None
    if kind == "row_l2norm":
        x = vals[0]
        # smooth epsilon keeps all-zero rows finite and the op C-infinity
        r = 1.0 / np.sqrt((x * x).sum(axis=1, keepdims=True) + 1e-6)
        return math.sqrt(x.shape[1]) * x * r, r
    if kind == "max_pool2":
        return kernels.maxpool2_forward(vals[0])
    if kind == "reshape":
        return np.ascontiguousarray(vals[0]).reshape(ctx), None
    if kind == "clamp":
        lo, hi = ctx
        return np.clip(vals[0], lo, hi), None
    if kind == "add":
        return vals[0] + vals[1], None
    if kind == "mul_const":
        return vals[0] * ctx, None
    if kind == "rsub_const":
        return ctx - vals[0], None
    raise AssertionError(f"unknown operation kind {kind!r}")


def _vjp(kind, g, vals, out, ctx, saved, need):
    """Vector-Jacobian product: gradients of the inputs given the output
    gradient ``g``. Entries for inputs with need[i] false may be None."""
    if kind == "dense":
        x, w, _ = vals
        return [
            g @ w.T if need[0] else None,
            x.T @ g if need[1] else None,
            g.sum(axis=0) if need[2] else None,
        ]
    if kind == "conv2d":
        gx, gk = kernels.conv2d_backward(vals[0], vals[1], ctx, g, need[0])
        return [gx, gk if need[1] else None]
    if kind == "bias_add":
        return [g if need[0] else None,
                g.sum(axis=(0, 2, 3)) if need[1] else None]
    if kind == "relu":
        return [g * (vals[0] > 0.0)]  # subgradient 0 at exactly 0
    if kind == "sigmoid":
        return [g * out * (1.0 - out)]
    if kind == "log":
        return [g / vals[0]]
    if kind == "mean":
        return [np.full(vals[0].shape, float(g) / vals[0].size)]
    if kind == "row_l2norm":
        x, r = vals[0], saved
        dot = (g * x).sum(axis=1, keepdims=True)
        return [math.sqrt(x.shape[1]) * (g * r - x * dot * r ** 3)]
    if kind == "max_pool2":
        return [kernels.maxpool2_backward(vals[0].shape, saved, g)]
    if kind == "reshape":
        return [np.ascontiguousarray(g).reshape(vals[0].shape)]
    if kind == "clamp":
        lo, hi = ctx
        return [g * ((vals[0] >= lo) & (vals[0] <= hi))]
    if kind == "add":
        return [g if need[0] else None, g if need[1] else None]
    if kind == "mul_const":
        return [g * ctx]
    if kind == "rsub_const":
        return [-g]
    raise AssertionError(f"unknown operation kind {kind!r}")


def _graph_of(tensors):
    g = None
    for t in tensors:
        if t.graph is not None:
            if g is None:
                g = t.graph
            elif g is not t.graph:
                raise ContractError("operands belong to different graphs")
    return g


def _apply(kind, tensors, ctx):
    g = _graph_of(tensors)
    out, saved = _forward(kind, [t.data for t in tensors], ctx)
    if g is None:
        return Tensor(out)
    ids = []
    needs = False
    for t in tensors:
        if t.node is None:
            # absorb constants as no-grad leaves so the tape is replayable
            ids.append(g.leaf(t.data, needs_grad=False).node)
        else:
            ids.append(t.node)
            needs = needs or g._grad_flags[t.node]
    out_id = g._new_node(out, needs)
    g._records.append(_Record(kind, tuple(ids), out_id, ctx, saved))
    return Tensor(out, out_id, g)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else tensor(x)


def _require_ndim(t, n, what):
    if t.data.ndim != n:
        raise ShapeError(f"{what} must be {n}-d, got shape {t.data.shape}")


def dense(x, w, b):
    """Affine map: x @ w + b with x (B, I), w (I, O), b (O,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    _require_ndim(x, 2, "dense input")
    _require_ndim(w, 2, "dense weight")
    _require_ndim(b, 1, "dense bias")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"dense shapes do not chain: x {x.shape}, w {w.shape}, b {b.shape}")
    return _apply("dense", (x, w, b), None)


def conv2d(x, k, stride=1):
    """Valid-padding 2-d cross-correlation.

    x is (B, Cin, H, W), k is (Cout, Cin, Kh, Kw); output extent per spatial
    axis is floor((in - kernel) / stride) + 1.
    """
    x, k = _as_tensor(x), _as_tensor(k)
    stride = int(stride)
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    _require_ndim(x, 4, "conv2d input")
    _require_ndim(k, 4, "conv2d kernel")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if k.shape[2] > x.shape[2] or k.shape[3] > x.shape[3]:
        raise ShapeError(
            f"conv2d kernel {k.shape} larger than input {x.shape}")
    return _apply("conv2d", (x, k), stride)


def bias_add(x, b):
    """Add a per-channel bias b (C,) to a feature map x (B, C, H, W)."""
    x, b = _as_tensor(x), _as_tensor(b)
    _require_ndim(x, 4, "bias_add input")
    _require_ndim(b, 1, "bias_add bias")
    if b.shape[0] != x.shape[1]:
        raise ShapeError(f"bias {b.shape} does not match channels of {x.shape}")
    return _apply("bias_add", (x, b), None)


def relu(x):
    return _apply("relu", (_as_tensor(x),), None)


def sigmoid(x):
    return _apply("sigmoid", (_as_tensor(x),), None)


def log(x):
    """Natural log; raises DomainError on any element <= 0."""
    return _apply("log", (_as_tensor(x),), None)


def mean(x):
    """Mean over all elements; returns a scalar (0-d) tensor."""
    return _apply("mean", (_as_tensor(x),), None)


def row_l2norm(x):
    """Scale each row of x (B, F) to L2 norm sqrt(F).

    A smooth epsilon under the square root keeps all-zero rows at zero with
    a finite gradient. Normalizing the feature vectors bounds what the
    heads see, so their sigmoids stay out of the clamped zero-gradient
    region no matter how the upstream feature scale drifts.
    """
    x = _as_tensor(x)
    _require_ndim(x, 2, "row_l2norm input")
    return _apply("row_l2norm", (x,), None)


def max_pool2(x):
    """2x2 max pooling with stride 2 on (B, C, H, W); odd remainders drop."""
    x = _as_tensor(x)
    _require_ndim(x, 4, "max_pool2 input")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"max_pool2 needs spatial extents >= 2, got {x.shape}")
    return _apply("max_pool2", (x,), None)


def reshape(x, shape):
    x = _as_tensor(x)
    shape = tuple(int(e) for e in shape)
    want = 1
    for e in shape:
        want *= e
    if want != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return _apply("reshape", (x,), shape)


def flatten(x):
    """Collapse all but the leading axis: (B, ...) -> (B, prod(...))."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"flatten needs at least 2 axes, got shape {x.shape}")
    return reshape(x, (x.shape[0], x.size // x.shape[0]))


def clamp(x, lo, hi):
    """Clip elements to [lo, hi]; gradient passes only inside the interval."""
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ContractError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    return _apply("clamp", (_as_tensor(x),), (lo, hi))


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _apply("add", (a, b), None)


def mul_const(x, c):
    """Elementwise product with a constant scalar or array (not a graph node)."""
    x = _as_tensor(x)
    c = np.array(c, dtype=np.float64)
    try:
        np.broadcast_shapes(c.shape, x.data.shape)
    except ValueError:
        raise ShapeError(
            f"constant of shape {c.shape} does not broadcast to {x.shape}") from None
    if c.shape != ():
        c = np.ascontiguousarray(c)
    return _apply("mul_const", (x,), c)


def rsub_const(x, c):
    """Constant-minus-tensor: c - x, with c a scalar or broadcastable array."""
    x = _as_tensor(x)
    c = np.array(c, dtype=np.float64)
    try:
        np.broadcast_shapes(c.shape, x.data.shape)
    except ValueError:
        raise ShapeError(
            f"constant of shape {c.shape} does not broadcast to {x.shape}") from None
    if c.shape != ():
        c = np.ascontiguousarray(c)
    return _apply("rsub_const", (x,), c)


def neg(x):
    return mul_const(x, -1.0)


def backward(scalar):
    """Reverse sweep from a one-element tensor.

    Returns a gradient map: node id -> gradient array, with an entry for
    every needs-grad leaf reachable from ``scalar``. Unreachable leaves are
    absent (callers treat them as zero). The gradient of ``scalar`` with
    respect to itself is 1.
    """
    g = scalar.graph
    if g is None or scalar.node is None:
        raise ContractError("backward requires a tensor recorded in a graph")
    if scalar.data.size != 1:
        raise ContractError(
            f"backward requires a one-element tensor, got shape {scalar.data.shape}")
    grads = {scalar.node: np.ones_like(scalar.data)}
    for rec in reversed(g._records):
        gout = grads.get(rec.out)
        if gout is None:
            continue
        need = [g._grad_flags[i] for i in rec.inputs]
        if not any(need):
            continue
        vals = [g._values[i] for i in rec.inputs]
        contribs = _vjp(rec.kind, gout, vals, g._values[rec.out], rec.ctx, rec.saved, need)
        for nid, gi, ok in zip(rec.inputs, contribs, need):
            if not ok or gi is None:
                continue
            prev = grads.get(nid)
            # out-of-place add: vjp outputs may alias gout (e.g. "add")
            grads[nid] = gi if prev is None else prev + gi
    return {nid: grads[nid] for nid in g._leaves
            if g._grad_flags[nid] and nid in grads}


def grad_check(build, params, h=1e-5):
    """Compare analytic gradients against central finite differences.

    ``build(graph, leaves)`` must construct a scalar output from the given
    leaf tensors; ``params`` maps names to arrays. Returns the maximum over
    all parameter elements of |analytic - numeric| / max(1, |numeric|).
    """
    if h <= 0:
        raise ContractError(f"step size must be positive, got {h}")
    work = {name: np.array(v, dtype=np.float64) for name, v in params.items()}

    g = Graph()
    leaves = {name: g.leaf(v) for name, v in work.items()}
    out = build(g, leaves)
    if out.data.size != 1:
        raise ContractError("grad_check requires build() to return a scalar")
    gm = backward(out)

    def value():
        gg = Graph()
        lv = {name: gg.leaf(v) for name, v in work.items()}
        return float(np.asarray(build(gg, lv).data))

    worst = 0.0
    for name, v in work.items():
        analytic = gm.get(leaves[name].node)
        aflat = None if analytic is None else analytic.reshape(-1)
        flat = v.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = 0.0 if aflat is None else aflat[i]
            err = abs(a - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
