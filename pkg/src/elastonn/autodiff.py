"""Reverse-mode automatic differentiation on a replayable tape.

Values are eagerly computed float64 numpy arrays; every operation appends a
node to a :class:`Tape`. The backward pass is itself expressed in recorded
operations, so gradients can be differentiated again (second derivatives of
network outputs w.r.t. inputs, Hessian-vector products, ...). A tape is meant
to be rebuilt per loss evaluation and discarded.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import os

import numpy as np
from scipy.special import erf as _np_erf

__all__ = ["AdError", "Tape", "Var", "gradient", "check_gradient_fd"]


def _tune_allocator():
    """Keep freed tape blocks in the process heap instead of munmap'ing them.

    A tape allocates one array per node and frees them all between loss
    evaluations; with glibc defaults every large block goes through
    mmap/munmap, so each evaluation re-faults zeroed pages and runs an order
    of magnitude slower. Raising the mmap/trim thresholds makes the heap
    reusable across evaluations. Set ELASTONN_NO_MALLOPT=1 to skip.
    """
    if os.environ.get("ELASTONN_NO_MALLOPT") == "1" or os.name != "posix":
        return
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)
        libc.mallopt(ctypes.c_int(-3), ctypes.c_int(1 << 30))  # M_MMAP_THRESHOLD
        libc.mallopt(ctypes.c_int(-1), ctypes.c_int(2**31 - 1))  # M_TRIM_THRESHOLD
    except (OSError, AttributeError, TypeError):
        pass


_tune_allocator()


class AdError(Exception):
    """Shape or domain error raised while recording, with node provenance."""


def _f64(value):
    a = np.asarray(value, dtype=np.float64)
    return a


class Var:
    """Handle to one tape node: an op kind, parent nodes and a cached value."""

    __slots__ = ("tape", "idx", "op", "parents", "value", "ctx", "requires_grad")

    def __init__(self, tape, idx, op, parents, value, ctx, requires_grad):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.parents = parents
        self.value = value
        self.ctx = ctx
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Var(#{self.idx} {self.op}, shape={self.value.shape})"


class Tape:
    """Computation graph: append-only node list in topological order.

    While ``no_record`` is set (the non-create-graph backward pass), new Vars
    are not appended, so they are garbage-collected as soon as they go out of
    scope; a recorded backward would otherwise pin every adjoint until the
    tape dies.
    """

    __slots__ = ("nodes", "no_record")

    def __init__(self):
        self.nodes = []
        self.no_record = False

    def _record(self, op, parents, value, ctx=None, requires_grad=None):
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        if self.no_record:
            # parents dropped: free Vars are never differentiated through, and
            # keeping them would pin the whole backward chain in memory
            return Var(self, -1, op, (), value, ctx, requires_grad)
        v = Var(self, len(self.nodes), op, parents, value, ctx, requires_grad)
        self.nodes.append(v)
        return v

    def var(self, value, requires_grad=True):
        """New leaf holding ``value``."""
        return self._record("leaf", (), _f64(value), requires_grad=requires_grad)

    def const(self, value):
        return self._record("const", (), _f64(value), requires_grad=False)

    def __len__(self):
        return len(self.nodes)


def _lift(tape, x):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise AdError("operands belong to different tapes")
        return x
    return tape.const(x)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise AdError("at least one operand must be a Var")


# ---------------------------------------------------------------------------
# elementwise ops (numpy broadcasting; backward sums gradients back to shape)
# ---------------------------------------------------------------------------


def add(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._record("add", (a, b), a.value + b.value)


def sub(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._record("sub", (a, b), a.value - b.value)


def mul(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._record("mul", (a, b), a.value * b.value)


def div(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._record("div", (a, b), a.value / b.value)


def neg(a):
    return a.tape._record("neg", (a,), -a.value)


def pow_const(a, p):
    p = float(p)
    if p != round(p) and np.any(a.value < 0):
        raise AdError(f"pow: negative base with fractional exponent {p} (node #{len(a.tape)})")
    return a.tape._record("pow", (a,), a.value**p, ctx=p)


def exp(a):
    return a.tape._record("exp", (a,), np.exp(a.value))


def log(a):
    if np.any(a.value <= 0.0):
        raise AdError(f"log: non-positive input (node #{len(a.tape)})")
    return a.tape._record("log", (a,), np.log(a.value))


def sqrt(a):
    if np.any(a.value < 0.0):
        raise AdError(f"sqrt: negative input (node #{len(a.tape)})")
    return a.tape._record("sqrt", (a,), np.sqrt(a.value))


def tanh(a):
    return a.tape._record("tanh", (a,), np.tanh(a.value))


def erf(a):
    return a.tape._record("erf", (a,), _np_erf(a.value))


def sin(a):
    return a.tape._record("sin", (a,), np.sin(a.value))


def cos(a):
    return a.tape._record("cos", (a,), np.cos(a.value))


def relu(a):
    mask = (a.value > 0.0).astype(np.float64)
    return a.tape._record("relu", (a,), a.value * mask, ctx=mask)


def gelu(a):
    """x * Phi(x), fused into one node (the erf/mul chain costs four large
    intermediates per activation otherwise)."""
    cdf = 0.5 * (1.0 + _np_erf(a.value * (1.0 / np.sqrt(2.0))))
    return a.tape._record("gelu", (a,), a.value * cdf, ctx=cdf)


def _vjp_gelu(n, g):
    x = n.parents[0]
    pdf = (1.0 / np.sqrt(2.0 * np.pi)) * exp(mul(mul(x, x), -0.5))
    return (mul(g, add(n.tape.const(n.ctx), mul(x, pdf))),)


def gelu_sum(a, b, bias):
    """gelu(a + b + bias) in one node; bias broadcasts over leading axes.

    Fusing the two adds and the activation keeps the per-block traffic of
    wide intermediate arrays down; the pre-activation is recomputed from the
    parents in the backward pass instead of being stored.
    """
    t = _tape_of(a, b, bias)
    a, b, bias = _lift(t, a), _lift(t, b), _lift(t, bias)
    z = a.value + b.value + bias.value
    cdf = 0.5 * (1.0 + _np_erf(z * (1.0 / np.sqrt(2.0))))
    return t._record("gelu_sum", (a, b, bias), z * cdf, ctx=cdf)


def _vjp_gelu_sum(n, g):
    a, b, bias = n.parents
    if n.tape.no_record:
        z = a.value + b.value + bias.value
        pdf = (1.0 / np.sqrt(2.0 * np.pi)) * np.exp(-0.5 * z * z)
        gz_val = g.value * (n.ctx + z * pdf)
        gz = n.tape.const(gz_val)
        return gz, gz, sum_to_shape(gz, bias.value.shape)
    z = add(add(a, b), bias)
    pdf = (1.0 / np.sqrt(2.0 * np.pi)) * exp(mul(mul(z, z), -0.5))
    gz = mul(g, add(n.tape.const(n.ctx), mul(z, pdf)))
    return gz, gz, sum_to_shape(gz, bias.value.shape)


def elu(a, alpha=1.0):
    neg_part = alpha * np.expm1(np.minimum(a.value, 0.0))
    out = np.where(a.value > 0.0, a.value, neg_part)
    return a.tape._record("elu", (a,), out, ctx=alpha)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise AdError(f"matmul expects 2-d operands, got {a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise AdError(f"matmul shape mismatch {a.value.shape} @ {b.value.shape}")
    return t._record("matmul", (a, b), a.value @ b.value)


def transpose(a):
    return a.tape._record("transpose", (a,), a.value.T.copy())


def reshape(a, shape):
    shape = tuple(shape)
    return a.tape._record("reshape", (a,), a.value.reshape(shape), ctx=a.value.shape)


def getitem(a, key):
    return a.tape._record("getitem", (a,), np.ascontiguousarray(a.value[key]), ctx=(key, a.value.shape))


def scatter(g, key, shape):
    out = np.zeros(shape)
    out[key] = g.value
    return g.tape._record("scatter", (g,), out, ctx=key)


def concat(parts, axis=0):
    t = _tape_of(*parts)
    parts = tuple(_lift(t, p) for p in parts)
    value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = tuple(p.value.shape[axis] for p in parts)
    return t._record("concat", parts, value, ctx=(axis, sizes))


def pad_end(a, n, axis):
    """Append ``n`` zeros along ``axis``."""
    width = [(0, 0)] * a.value.ndim
    width[axis] = (0, n)
    return a.tape._record("pad_end", (a,), np.pad(a.value, width), ctx=(n, axis))


def sum_all(a):
    return a.tape._record("sum", (a,), np.asarray(a.value.sum()))


def sum_axis(a, axis, keepdims=False):
    return a.tape._record(
        "sum_axis", (a,), a.value.sum(axis=axis, keepdims=keepdims), ctx=(axis, keepdims, a.value.shape)
    )


def mean_all(a):
    return sum_all(a) / float(a.value.size)


def broadcast_to(a, shape):
    return a.tape._record("broadcast", (a,), np.broadcast_to(a.value, shape).copy(), ctx=a.value.shape)


def sum_to_shape(g, shape):
    """Reduce ``g`` back to ``shape`` by summing broadcast axes."""
    if g.value.shape == tuple(shape):
        return g
    ndim = len(shape)
    extra = g.value.ndim - ndim
    if extra:
        g = sum_axis(g, tuple(range(extra)))
    axes = tuple(i for i in range(ndim) if shape[i] == 1 and g.value.shape[i] != 1)
    if axes:
        g = sum_axis(g, axes, keepdims=True)
    return g


def axis_matmul(v, basis):
    """Contract axis 1 of ``v`` (B, N, C) with a constant (N, K) matrix -> (B, K, C)."""
    t = v.tape
    basis = _lift(t, basis)
    if basis.requires_grad:
        raise AdError("axis_matmul basis must be constant")
    value = np.matmul(v.value.transpose(0, 2, 1), basis.value).transpose(0, 2, 1)
    return t._record("axis_matmul", (v, basis), value)


def mode_matmul(x, r):
    """Per-slice matmul: (B, K, C) x (K, C, O) -> (B, K, O)."""
    t = _tape_of(x, r)
    x, r = _lift(t, x), _lift(t, r)
    value = np.matmul(x.value.transpose(1, 0, 2), r.value).transpose(1, 0, 2)
    return t._record("mode_matmul", (x, r), np.ascontiguousarray(value))


def mode_outer(x, g):
    """Accumulate (B, K, C) x (B, K, O) -> (K, C, O); adjoint partner of mode_matmul."""
    t = _tape_of(x, g)
    x, g = _lift(t, x), _lift(t, g)
    value = np.matmul(x.value.transpose(1, 2, 0), g.value.transpose(1, 0, 2))
    return t._record("mode_outer", (x, g), np.ascontiguousarray(value))


def central_diff(u, dx):
    """Second-order finite-difference derivative along the last axis.

    Interior points use the centered stencil, endpoints the one-sided
    three-point stencil of the same order.
    """
    if u.value.shape[-1] < 3:
        raise AdError("central_diff needs at least 3 samples")
    return u.tape._record("central_diff", (u,), _cd_apply(u.value, dx), ctx=dx)


def central_diff_adj(g, dx):
    return g.tape._record("central_diff_adj", (g,), _cd_adjoint(g.value, dx), ctx=dx)


def _cd_apply(u, dx):
    d = np.empty_like(u)
    d[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dx)
    d[..., 0] = (-3.0 * u[..., 0] + 4.0 * u[..., 1] - u[..., 2]) / (2.0 * dx)
    d[..., -1] = (3.0 * u[..., -1] - 4.0 * u[..., -2] + u[..., -3]) / (2.0 * dx)
    return d


def _cd_adjoint(g, dx):
    out = np.zeros_like(g)
    out[..., 2:] += g[..., 1:-1]
    out[..., :-2] -= g[..., 1:-1]
    out[..., 0] += -3.0 * g[..., 0]
    out[..., 1] += 4.0 * g[..., 0]
    out[..., 2] += -g[..., 0]
    out[..., -1] += 3.0 * g[..., -1]
    out[..., -2] += -4.0 * g[..., -1]
    out[..., -3] += g[..., -1]
    return out / (2.0 * dx)


# ---------------------------------------------------------------------------
# backward rules: vjp(node, g) -> per-parent gradient Vars (None = skip)
# ---------------------------------------------------------------------------


def _unb(g, parent):
    return sum_to_shape(g, parent.value.shape)


def _vjp_add(n, g):
    return _unb(g, n.parents[0]), _unb(g, n.parents[1])


def _vjp_sub(n, g):
    return _unb(g, n.parents[0]), _unb(neg(g), n.parents[1])


def _vjp_mul(n, g):
    a, b = n.parents
    return _unb(mul(g, b), a), _unb(mul(g, a), b)


def _vjp_div(n, g):
    a, b = n.parents
    ga = _unb(div(g, b), a)
    gb = _unb(neg(div(mul(g, n), b)), b)  # -g * (a/b) / b
    return ga, gb


def _elu_slope(n):
    # d/dx elu = 1 (x>0) else elu(x)+alpha
    mask = n.tape.const((n.parents[0].value > 0.0).astype(np.float64))
    return add(mask, mul(sub(1.0, mask), add(n, n.ctx)))


def _mode_t(r):
    return r.tape._record("mode_t", (r,), np.ascontiguousarray(r.value.transpose(0, 2, 1)))


def _vjp_concat(n, g):
    axis, sizes = n.ctx
    grads, off = [], 0
    for s in sizes:
        key = [slice(None)] * g.value.ndim
        key[axis] = slice(off, off + s)
        grads.append(getitem(g, tuple(key)))
        off += s
    return tuple(grads)


def _slice_off_pad(g, ctx):
    n, axis = ctx
    key = [slice(None)] * g.value.ndim
    key[axis] = slice(0, g.value.shape[axis] - n)
    return getitem(g, tuple(key))


def _vjp_sum_axis(n, g):
    axis, keepdims, shape = n.ctx
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kshape)
    return (broadcast_to(g, shape),)


_VJPS = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": lambda n, g: (neg(g),),
    "pow": lambda n, g: (
        (n.tape.const(np.zeros_like(n.parents[0].value)),)
        if n.ctx == 0.0
        else (mul(g, mul(n.ctx, pow_const(n.parents[0], n.ctx - 1.0))),)
    ),
    "exp": lambda n, g: (mul(g, n),),
    "log": lambda n, g: (div(g, n.parents[0]),),
    "sqrt": lambda n, g: (div(g, mul(2.0, n)),),
    "tanh": lambda n, g: (mul(g, sub(1.0, mul(n, n))),),
    "erf": lambda n, g: (mul(g, mul(2.0 / np.sqrt(np.pi), exp(neg(mul(n.parents[0], n.parents[0]))))),),
    "sin": lambda n, g: (mul(g, cos(n.parents[0])),),
    "cos": lambda n, g: (neg(mul(g, sin(n.parents[0]))),),
    "relu": lambda n, g: (mul(g, n.tape.const(n.ctx)),),
    "gelu": _vjp_gelu,
    "gelu_sum": _vjp_gelu_sum,
    "elu": lambda n, g: (mul(g, _elu_slope(n)),),
    "matmul": lambda n, g: (matmul(g, transpose(n.parents[1])), matmul(transpose(n.parents[0]), g)),
    "transpose": lambda n, g: (transpose(g),),
    "reshape": lambda n, g: (reshape(g, n.ctx),),
    "getitem": lambda n, g: (scatter(g, n.ctx[0], n.ctx[1]),),
    "scatter": lambda n, g: (getitem(g, n.ctx),),
    "concat": _vjp_concat,
    "pad_end": lambda n, g: (_slice_off_pad(g, n.ctx),),
    "sum": lambda n, g: (broadcast_to(g, n.parents[0].value.shape),),
    "sum_axis": _vjp_sum_axis,
    "broadcast": lambda n, g: (sum_to_shape(g, n.ctx),),
    "axis_matmul": lambda n, g: (axis_matmul(g, transpose(n.parents[1])), None),
    "mode_matmul": lambda n, g: (
        mode_matmul(g, _mode_t(n.parents[1])),
        mode_outer(n.parents[0], g),
    ),
    "mode_outer": lambda n, g: (
        mode_matmul(n.parents[1], _mode_t(g)),
        mode_matmul(n.parents[0], g),
    ),
    "mode_t": lambda n, g: (_mode_t(g),),
    "central_diff": lambda n, g: (central_diff_adj(g, n.ctx),),
    "central_diff_adj": lambda n, g: (central_diff(g, n.ctx),),
}


# ---------------------------------------------------------------------------
# gradient driver
# ---------------------------------------------------------------------------


def gradient(output, wrt, create_graph=False):
    """Return d(output)/d(w) for each w in ``wrt``.

    ``output`` must be scalar. With ``create_graph`` the backward arithmetic
    is recorded on the same tape, so results can be differentiated again;
    without it the backward runs detached and its intermediates are freed as
    the sweep proceeds. Vars not reachable from ``output`` get a zero
    gradient.
    """
    single = isinstance(wrt, Var)
    wrt_list = [wrt] if single else list(wrt)
    if output.value.size != 1:
        raise AdError(f"gradient needs a scalar output, got shape {output.value.shape}")
    if output.idx < 0:
        raise AdError("cannot differentiate a detached backward value (use create_graph=True upstream)")
    tape = output.tape

    # reachable requires-grad ancestors of the output
    needed = set()
    stack = [output]
    while stack:
        node = stack.pop()
        if node.idx in needed or not node.requires_grad:
            continue
        needed.add(node.idx)
        stack.extend(node.parents)

    keep = {w.idx for w in wrt_list}
    prev_mode = tape.no_record
    tape.no_record = not create_graph
    try:
        adjoint = {output.idx: tape.const(np.ones_like(output.value))}
        for idx in sorted(needed, reverse=True):
            g = adjoint.get(idx)
            if g is None:
                continue
            node = tape.nodes[idx]
            if node.op in ("leaf", "const"):
                continue
            grads = _VJPS[node.op](node, g)
            if idx not in keep:
                del adjoint[idx]
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = adjoint.get(parent.idx)
                adjoint[parent.idx] = pg if acc is None else add(acc, pg)
    finally:
        tape.no_record = prev_mode

    out = []
    for w in wrt_list:
        g = adjoint.get(w.idx)
        out.append(g if g is not None else tape.const(np.zeros_like(w.value)))
    return out[0] if single else out


def check_gradient_fd(fn, point, h=1e-6):
    """Max relative discrepancy between the AD gradient of ``fn`` and central
    finite differences at ``point``.

    ``fn`` maps a leaf vector Var to a scalar Var. Relative is measured
    against max(1, |fd|) componentwise so zero gradients compare exactly.
    """
    point = _f64(point)

    tape = Tape()
    x = tape.var(point)
    g_ad = gradient(fn(x), x).value

    flat = point.ravel()
    g_fd = np.zeros_like(flat)
    for i in range(flat.size):
        for s, sign in ((h, 1.0), (-h, -1.0)):
            p = flat.copy()
            p[i] += s
            t2 = Tape()
            g_fd[i] += sign * float(fn(t2.var(p.reshape(point.shape))).value)
    g_fd /= 2.0 * h
    g_fd = g_fd.reshape(point.shape)
    return float(np.max(np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))))
