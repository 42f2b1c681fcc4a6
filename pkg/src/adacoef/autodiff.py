"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tape records primitive operations as they execute; backward() replays them
in reverse node order with a fixed accumulation order, so adjoints are
bit-reproducible. Values are NumPy float64 arrays of rank <= 2 (scalars are
rank-0). Elementwise primitives accept equal shapes, a rank-1 row vector
broadcast over a rank-2 matrix, or a scalar on either side.

The hot primitives (linear, silu, tanh, leaky_relu, matmul) are routed
through adacoef._kernels, which selects the compiled core or the NumPy
fallback at import time.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K


class TapeError(RuntimeError):
    """Raised for shape mismatches, domain errors and non-finite results."""


def as_array(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array of rank <= 2 (0-d preserved)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 2:
        raise TapeError(f"rank {a.ndim} array not supported (max rank 2)")
    if a.ndim and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


def _check_finite(value, op, index):
    # summing first is much cheaper than isfinite over the array; any
    # NaN/Inf propagates into the sum (values here are far from overflow)
    if not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
        raise TapeError(f"non-finite output of '{op}' at node {index}")


class Node:
    __slots__ = ("op", "parents", "value", "ctx")

    def __init__(self, op, parents, value, ctx=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.ctx = ctx


class Var:
    """Handle to a tape node. Supports arithmetic operators; the right-hand
    side may be a Var, an ndarray or a python scalar (treated as constants)."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.tape.nodes[self.index].value.shape

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape._binary("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape._binary("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape._binary("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape._binary("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape._binary("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape._binary("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.tape._binary("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape._binary("div", self._lift(other), self)

    def __neg__(self):
        return self.tape._binary("mul", self, self.tape.constant(-1.0))

    def __matmul__(self, other):
        return self.tape.matmul(self, self._lift(other))

    def __abs__(self):
        return self.tape._unary("abs", self)


def _broadcast_ok(sa, sb):
    """Shapes combinable under the supported elementwise broadcasting."""
    if sa == sb:
        return True
    if sa == () or sb == ():
        return True
    # rank-1 row vector against rank-2 matrix columns
    if len(sa) == 2 and sb == (sa[1],):
        return True
    if len(sb) == 2 and sa == (sb[1],):
        return True
    return False


def _reduce_to(grad, shape):
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # parent was a rank-1 row vector broadcast over rows
    return grad.sum(axis=0)


class Tape:
    """Single-threaded record of primitive operations."""

    def __init__(self, check_finite=True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite
        self._leaf_ids: list[int] = []

    # -- node creation -----------------------------------------------------

    def _record(self, op, parents, value, ctx=None) -> Var:
        if self.check_finite:
            _check_finite(value, op, len(self.nodes))
        self.nodes.append(Node(op, parents, value, ctx))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Differentiable input. backward() reports gradients for leaves."""
        v = self._record("leaf", (), as_array(value))
        self._leaf_ids.append(v.index)
        return v

    def constant(self, value) -> Var:
        """Non-differentiable input (also used to detach values)."""
        return self._record("const", (), as_array(value))

    # -- elementwise and arithmetic ----------------------------------------

    def _binary(self, op, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        if not _broadcast_ok(va.shape, vb.shape):
            raise TapeError(f"shape mismatch in '{op}': {va.shape} vs {vb.shape}")
        # overflow/0-division surface as structured non-finite errors instead
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if op == "add":
                out = va + vb
            elif op == "sub":
                out = va - vb
            elif op == "mul":
                out = va * vb
            elif op == "div":
                out = va / vb
            else:  # pragma: no cover
                raise TapeError(f"unknown binary op '{op}'")
        return self._record(op, (a.index, b.index), out)

    def _unary(self, op, a: Var, ctx=None) -> Var:
        x = a.value
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._unary_inner(op, a, x, ctx)

    def _unary_inner(self, op, a: Var, x, ctx) -> Var:
        if op == "square":
            out = x * x
        elif op == "sqrt":
            if np.any(x < 0.0):
                raise TapeError("domain error in 'sqrt': negative argument")
            out = np.sqrt(x)
        elif op == "exp":
            out = np.exp(x)
        elif op == "log":
            if np.any(x <= 0.0):
                raise TapeError("domain error in 'log': non-positive argument")
            out = np.log(x)
        elif op == "sin":
            out = np.sin(x)
        elif op == "cos":
            out = np.cos(x)
        elif op == "tanh":
            out = K.tanh_fwd(x)
        elif op == "silu":
            out = K.silu_fwd(x)
        elif op == "abs":
            out = np.abs(x)
        elif op == "max0":
            out = np.maximum(x, 0.0)
        elif op == "leaky_relu":
            out = K.leaky_relu_fwd(x, ctx)
        else:  # pragma: no cover
            raise TapeError(f"unknown unary op '{op}'")
        return self._record(op, (a.index,), out, ctx)

    def square(self, a):
        return self._unary("square", a)

    def sqrt(self, a):
        return self._unary("sqrt", a)

    def exp(self, a):
        return self._unary("exp", a)

    def log(self, a):
        return self._unary("log", a)

    def sin(self, a):
        return self._unary("sin", a)

    def cos(self, a):
        return self._unary("cos", a)

    def tanh(self, a):
        return self._unary("tanh", a)

    def silu(self, a):
        return self._unary("silu", a)

    def abs(self, a):
        return self._unary("abs", a)

    def max0(self, a):
        return self._unary("max0", a)

    def leaky_relu(self, a, slope=0.2):
        return self._unary("leaky_relu", a, float(slope))

    # -- linear algebra ------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        if va.ndim != 2 or vb.ndim not in (1, 2):
            raise TapeError(
                f"shape mismatch in 'matmul': {va.shape} @ {vb.shape}"
            )
        if vb.ndim == 1:
            if va.shape[1] != vb.shape[0]:
                raise TapeError(
                    f"shape mismatch in 'matmul': {va.shape} @ {vb.shape}"
                )
            out = K.matmul(va, vb.reshape(-1, 1)).reshape(-1)
        else:
            if va.shape[1] != vb.shape[0]:
                raise TapeError(
                    f"shape mismatch in 'matmul': {va.shape} @ {vb.shape}"
                )
            out = K.matmul(va, vb)
        return self._record("matmul", (a.index, b.index), out)

    def linear(self, x: Var, w: Var, b: Var) -> Var:
        """Fused affine map x @ w + b with row-broadcast bias."""
        vx, vw, vb = x.value, w.value, b.value
        if vx.ndim != 2 or vw.ndim != 2 or vb.ndim != 1 \
                or vx.shape[1] != vw.shape[0] or vw.shape[1] != vb.shape[0]:
            raise TapeError(
                f"shape mismatch in 'linear': {vx.shape}, {vw.shape}, {vb.shape}"
            )
        out = K.linear_fwd(vx, vw, vb)
        return self._record("linear", (x.index, w.index, b.index), out)

    # -- reductions and shape ops -------------------------------------------

    def sum(self, a: Var, axis=None) -> Var:
        x = a.value
        if axis is None:
            out = np.asarray(x.sum())
        else:
            out = x.sum(axis=axis, keepdims=True)
        return self._record("sum", (a.index,), out, (axis, x.shape))

    def mean(self, a: Var, axis=None) -> Var:
        x = a.value
        if axis is None:
            out = np.asarray(x.mean())
        else:
            out = x.mean(axis=axis, keepdims=True)
        return self._record("mean", (a.index,), out, (axis, x.shape))

    def reshape(self, a: Var, shape) -> Var:
        x = a.value
        shape = tuple(shape)
        if math.prod(shape) != x.size:
            raise TapeError(f"shape mismatch in 'reshape': {x.shape} -> {shape}")
        return self._record("reshape", (a.index,), x.reshape(shape), x.shape)

    def slice1d(self, a: Var, start, stop) -> Var:
        x = a.value
        if x.ndim != 1 or not (0 <= start <= stop <= x.shape[0]):
            raise TapeError(f"shape mismatch in 'slice1d': {x.shape}[{start}:{stop}]")
        return self._record(
            "slice1d", (a.index,), x[start:stop].copy(), (start, stop, x.shape)
        )

    def slice_cols(self, a: Var, start, stop) -> Var:
        x = a.value
        if x.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
            raise TapeError(
                f"shape mismatch in 'slice_cols': {x.shape}[:, {start}:{stop}]"
            )
        return self._record(
            "slice_cols",
            (a.index,),
            np.ascontiguousarray(x[:, start:stop]),
            (start, stop, x.shape),
        )

    def concat_cols(self, parts) -> Var:
        parts = list(parts)
        vals = [p.value for p in parts]
        if any(v.ndim != 2 for v in vals) or len({v.shape[0] for v in vals}) != 1:
            raise TapeError(
                f"shape mismatch in 'concat_cols': {[v.shape for v in vals]}"
            )
        out = np.concatenate(vals, axis=1)
        widths = tuple(v.shape[1] for v in vals)
        return self._record(
            "concat_cols", tuple(p.index for p in parts), out, widths
        )

    # -- backward -------------------------------------------------------------

    def backward(self, root: Var) -> dict[int, np.ndarray]:
        """Gradients of a scalar root w.r.t. every leaf; tape is left intact.

        Subgraphs that cannot reach a leaf are skipped entirely (their
        adjoints can never flow into a reported gradient), which avoids
        weight-gradient work for frozen models; the surviving accumulation
        order is unchanged, so results are bit-identical with or without
        pruning."""
        rv = self.nodes[root.index].value
        if rv.shape != ():
            raise TapeError(f"backward root must be scalar, got shape {rv.shape}")
        n = root.index + 1
        needed = bytearray(n)
        for i in self._leaf_ids:
            if i < n:
                needed[i] = 1
        for idx in range(n):
            if needed[idx]:
                continue
            for p in self.nodes[idx].parents:
                if needed[p]:
                    needed[idx] = 1
                    break
        adjoints: dict[int, np.ndarray] = {root.index: np.asarray(1.0)}
        for idx in range(root.index, -1, -1):
            if not needed[idx]:
                continue
            g = adjoints.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            for pidx, contrib in self._vjp(node, g, needed):
                prev = adjoints.get(pidx)
                adjoints[pidx] = contrib if prev is None else prev + contrib
        return {
            i: adjoints.get(i, np.zeros_like(self.nodes[i].value))
            for i in self._leaf_ids
            if i <= root.index
        }

    def _vjp(self, node: Node, g, needed):
        op = node.op
        ps = node.parents
        nv = [self.nodes[p].value for p in ps]
        if op in ("leaf", "const"):
            return []
        out = []
        if op == "add":
            if needed[ps[0]]:
                gb = np.broadcast_to(g, node.value.shape)
                out.append((ps[0], _reduce_to(gb, nv[0].shape)))
            if needed[ps[1]]:
                gb = np.broadcast_to(g, node.value.shape)
                out.append((ps[1], _reduce_to(gb, nv[1].shape)))
            return out
        if op == "sub":
            gb = np.broadcast_to(g, node.value.shape)
            if needed[ps[0]]:
                out.append((ps[0], _reduce_to(gb, nv[0].shape)))
            if needed[ps[1]]:
                out.append((ps[1], _reduce_to(-gb, nv[1].shape)))
            return out
        if op == "mul":
            if needed[ps[0]]:
                out.append((ps[0], _reduce_to(g * nv[1], nv[0].shape)))
            if needed[ps[1]]:
                out.append((ps[1], _reduce_to(g * nv[0], nv[1].shape)))
            return out
        if op == "div":
            if needed[ps[0]]:
                out.append((ps[0], _reduce_to(g / nv[1], nv[0].shape)))
            if needed[ps[1]]:
                out.append(
                    (ps[1], _reduce_to(-g * nv[0] / (nv[1] * nv[1]), nv[1].shape))
                )
            return out
        if op == "matmul":
            a, b = nv
            if b.ndim == 1:
                g2 = np.ascontiguousarray(g.reshape(-1, 1))
                if needed[ps[0]]:
                    out.append((ps[0], K.matmul(g2, b.reshape(-1, 1), False, True)))
                if needed[ps[1]]:
                    out.append((ps[1], K.matmul(a, g2, True, False).reshape(-1)))
            else:
                g2 = np.ascontiguousarray(g)
                if needed[ps[0]]:
                    out.append((ps[0], K.matmul(g2, b, False, True)))
                if needed[ps[1]]:
                    out.append((ps[1], K.matmul(a, g2, True, False)))
            return out
        if op == "linear":
            x, w, _ = nv
            g2 = np.ascontiguousarray(g)
            if needed[ps[0]]:
                out.append((ps[0], K.matmul(g2, w, False, True)))
            if needed[ps[1]]:
                out.append((ps[1], K.matmul(x, g2, True, False)))
            if needed[ps[2]]:
                out.append((ps[2], g2.sum(axis=0)))
            return out
        if op == "sum":
            axis, shape = node.ctx
            return [(ps[0], np.broadcast_to(g, shape).copy())]
        if op == "mean":
            axis, shape = node.ctx
            count = math.prod(shape) if axis is None else shape[axis]
            return [(ps[0], np.broadcast_to(g / count, shape).copy())]
        if op == "reshape":
            return [(ps[0], g.reshape(node.ctx))]
        if op == "slice1d":
            start, stop, shape = node.ctx
            out = np.zeros(shape)
            out[start:stop] = g
            return [(ps[0], out)]
        if op == "slice_cols":
            start, stop, shape = node.ctx
            out = np.zeros(shape)
            out[:, start:stop] = g
            return [(ps[0], out)]
        if op == "concat_cols":
            widths = node.ctx
            offs = np.cumsum((0,) + widths)
            return [
                (p, np.ascontiguousarray(g[:, offs[i]:offs[i + 1]]))
                for i, p in enumerate(ps)
            ]
        x = nv[0]
        if op == "square":
            return [(ps[0], g * 2.0 * x)]
        if op == "sqrt":
            return [(ps[0], g / (2.0 * node.value))]
        if op == "exp":
            return [(ps[0], g * node.value)]
        if op == "log":
            return [(ps[0], g / x)]
        if op == "sin":
            return [(ps[0], g * np.cos(x))]
        if op == "cos":
            return [(ps[0], -g * np.sin(x))]
        if op == "tanh":
            return [(ps[0], K.tanh_bwd(node.value, np.ascontiguousarray(g)))]
        if op == "silu":
            return [(ps[0], K.silu_bwd(x, np.ascontiguousarray(g)))]
        if op == "abs":
            return [(ps[0], g * np.sign(x))]
        if op == "max0":
            return [(ps[0], g * (x > 0.0))]
        if op == "leaky_relu":
            return [
                (ps[0], K.leaky_relu_bwd(x, np.ascontiguousarray(g), node.ctx))
            ]
        raise TapeError(f"no vjp for op '{op}'")  # pragma: no cover

    # -- inspection -----------------------------------------------------------

    def reachable_leaves(self, root: Var) -> set[int]:
        """Leaf node ids with a path to root (gradient-routing inspection)."""
        seen = set()
        stack = [root.index]
        while stack:
            idx = stack.pop()
            if idx in seen:
                continue
            seen.add(idx)
            stack.extend(self.nodes[idx].parents)
        return {i for i in self._leaf_ids if i in seen}


# -- generic helpers usable on Vars and ndarrays -------------------------------


def sqrt(x):
    return x.tape.sqrt(x) if isinstance(x, Var) else np.sqrt(x)


def log(x):
    return x.tape.log(x) if isinstance(x, Var) else np.log(x)


def square(x):
    return x.tape.square(x) if isinstance(x, Var) else x * x


def finite_diff_gradient(f, x, h=1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("finite_diff_gradient requires h > 0")
    x = as_array(x)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
