"""Reverse-mode automatic differentiation on an append-only tape.

Every value is a dense float64 matrix; vectors are stored as ``(n, 1)``
columns and scalars as ``(1, 1)``.  A :class:`Tape` records nodes in
creation order and :meth:`Tape.backward` walks them in exact reverse
order, so the recorded order is always a valid topological order.

Example::

    tape = Tape()
    c = tape.leaf([1.0, 2.0], requires_grad=True)
    x = tape.leaf([3.0, 4.0], requires_grad=True)
    loss = tape.apply("dot", c, x)
    grads = tape.backward(loss)
    grads[c]   # -> x.value
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.lapack import dgetrf, dgetrs

__all__ = [
    "Var",
    "Tape",
    "TapeError",
    "SingularSystemError",
    "OP_KINDS",
    "as_tensor",
    "grad_check",
]


class TapeError(ValueError):
    """Invalid tape construction: bad shapes, non-finite leaves, dangling handles."""


class SingularSystemError(ArithmeticError):
    """``linear_solve`` met a matrix whose LU factorization has a (near) zero pivot."""


# Pivot ratio below which a factorization is treated as singular.
_SINGULAR_RCOND = 1e-14


def as_tensor(value) -> np.ndarray:
    """Coerce scalars, flat sequences and matrices to a float64 2-D array.

    Flat input becomes a column vector.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise TapeError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Var:
    """Handle to one node of a tape.

    ``value`` holds the forward result.  ``grad`` is filled by
    :meth:`Tape.backward` for leaves that require a gradient.
    """

    __slots__ = ("tape", "index", "kind", "inputs", "value", "saved", "params",
                 "requires_grad", "grad")

    def __init__(self, tape, index, kind, inputs, value, saved, params, requires_grad):
        self.tape = tape
        self.index = index
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.saved = saved
        self.params = params
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self.kind == "leaf"

    def item(self) -> float:
        if self.value.size != 1:
            raise TapeError(f"item() needs a scalar, got shape {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Var(#{self.index} {self.kind} shape={self.value.shape})"

    # Sugar; everything routes through Tape.apply.
    def __add__(self, other):
        return self.tape.apply("add", self, other)

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __mul__(self, other):
        if isinstance(other, Var):
            return self.tape.apply("mul", self, other)
        return self.tape.apply("scale", self, scalar=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.apply("div", self, other)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, other)

    @property
    def T(self):
        return self.tape.apply("transpose", self)


# ---------------------------------------------------------------------------
# Primitive registry.  Each entry is (forward, backward, flops).
#   forward(vals, **params) -> (out, saved)
#   backward(g, vals, out, saved, **params) -> tuple of input gradients
#   flops(vals, out) -> (forward_flops, backward_flops)  rough operation counts
# ---------------------------------------------------------------------------

def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise TapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def _fw_add(vals):
    _same_shape("add", *vals)
    return vals[0] + vals[1], None


def _fw_sub(vals):
    _same_shape("sub", *vals)
    return vals[0] - vals[1], None


def _fw_mul(vals):
    _same_shape("mul", *vals)
    return vals[0] * vals[1], None


def _fw_div(vals):
    _same_shape("div", *vals)
    return vals[0] / vals[1], None


def _fw_matmul(vals, ta=False):
    a, b = vals
    if ta:
        if a.shape[0] != b.shape[0]:
            raise TapeError(f"matmul: cannot contract {a.shape}' with {b.shape}")
        return a.T @ b, None
    if a.shape[1] != b.shape[0]:
        raise TapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, None


def _bw_matmul(g, vals, out, saved, ta=False):
    a, b = vals
    if ta:
        return b @ g.T, a @ g
    return g @ b.T, a.T @ g


def _fw_matvec(vals, ta=False):
    if vals[1].shape[1] != 1:
        raise TapeError(f"matvec: right operand must be a column, got {vals[1].shape}")
    return _fw_matmul(vals, ta)


def _fw_dot(vals):
    a, b = vals
    if a.shape != b.shape or a.shape[1] != 1:
        raise TapeError(f"dot: need equal column vectors, got {a.shape} and {b.shape}")
    return a.T @ b, None


def _fw_concat(vals, axis=0):
    other = 1 - axis
    if len({v.shape[other] for v in vals}) != 1:
        raise TapeError(f"concat: mismatched shapes {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=axis), None


def _bw_concat(g, vals, out, saved, axis=0):
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _fw_slice(vals, start, stop):
    (a,) = vals
    if not 0 <= start < stop <= a.shape[0]:
        raise TapeError(f"slice: rows [{start}, {stop}) out of range for {a.shape}")
    return a[start:stop], None


def _bw_slice(g, vals, out, saved, start, stop):
    full = np.zeros_like(vals[0])
    full[start:stop] = g
    return (full,)


def _fw_reshape(vals, shape):
    (a,) = vals
    if a.size != shape[0] * shape[1]:
        raise TapeError(f"reshape: cannot view {a.shape} as {shape}")
    return a.reshape(shape), None


def _fw_scale_rows(vals):
    v, m = vals
    if v.shape != (m.shape[0], 1):
        raise TapeError(f"scale_rows: weights {v.shape} do not match rows of {m.shape}")
    return v * m, None


def _fw_linear_solve(vals):
    m, r = vals
    n = m.shape[0]
    if m.shape != (n, n) or r.shape[0] != n:
        raise TapeError(f"linear_solve: need square system, got {m.shape} and {r.shape}")
    lu, piv, info = dgetrf(m)
    diag = np.abs(lu.diagonal())
    if info < 0 or not diag.max() < np.inf or diag.min() <= _SINGULAR_RCOND * max(diag.max(), 1e-300):
        raise SingularSystemError("linear_solve: matrix is singular to working precision")
    y, _ = dgetrs(lu, piv, r)
    return y, (lu, piv)


def _bw_linear_solve(g, vals, out, saved):
    # One factorization serves both directions: M' z = g via trans=1.
    g_r, _ = dgetrs(saved[0], saved[1], g, trans=1)
    return -g_r @ out.T, g_r


def _fw_unary(fn):
    return lambda vals: (fn(vals[0]), None)


def _n(vals):
    return vals[0].size


_OPS = {
    "add": (_fw_add, lambda g, v, o, s: (g, g),
            lambda v, o: (o.size, 2 * o.size)),
    "sub": (_fw_sub, lambda g, v, o, s: (g, -g),
            lambda v, o: (o.size, 2 * o.size)),
    "neg": (_fw_unary(np.negative), lambda g, v, o, s: (-g,),
            lambda v, o: (o.size, o.size)),
    "mul": (_fw_mul, lambda g, v, o, s: (g * v[1], g * v[0]),
            lambda v, o: (o.size, 2 * o.size)),
    "div": (_fw_div, lambda g, v, o, s: (g / v[1], -g * o / v[1]),
            lambda v, o: (o.size, 4 * o.size)),
    "scale": (lambda vals, scalar: (vals[0] * scalar, None),
              lambda g, v, o, s, scalar: (g * scalar,),
              lambda v, o: (o.size, o.size)),
    "matmul": (_fw_matmul, _bw_matmul,
               lambda v, o: (2 * v[0].size * v[1].shape[1], 4 * v[0].size * v[1].shape[1])),
    "matvec": (_fw_matvec, _bw_matmul,
               lambda v, o: (2 * v[0].size, 4 * v[0].size)),
    "dot": (_fw_dot, lambda g, v, o, s: (g[0, 0] * v[1], g[0, 0] * v[0]),
            lambda v, o: (2 * _n(v), 2 * _n(v))),
    "sum": (lambda vals: (np.sum(vals[0]).reshape(1, 1), None),
            lambda g, v, o, s: (np.full_like(v[0], g[0, 0]),),
            lambda v, o: (_n(v), _n(v))),
    "log": (_fw_unary(np.log), lambda g, v, o, s: (g / v[0],),
            lambda v, o: (_n(v), _n(v))),
    "exp": (_fw_unary(np.exp), lambda g, v, o, s: (g * o,),
            lambda v, o: (_n(v), _n(v))),
    "cos": (_fw_unary(np.cos), lambda g, v, o, s: (-g * np.sin(v[0]),),
            lambda v, o: (_n(v), 2 * _n(v))),
    "sin": (_fw_unary(np.sin), lambda g, v, o, s: (g * np.cos(v[0]),),
            lambda v, o: (_n(v), 2 * _n(v))),
    # Subgradient 0 at the kink.
    "abs": (_fw_unary(np.abs), lambda g, v, o, s: (g * np.sign(v[0]),),
            lambda v, o: (_n(v), 2 * _n(v))),
    "square": (_fw_unary(np.square), lambda g, v, o, s: (2.0 * g * v[0],),
               lambda v, o: (_n(v), 2 * _n(v))),
    "sqnorm": (lambda vals: (np.sum(vals[0] * vals[0]).reshape(1, 1), None),
               lambda g, v, o, s: (2.0 * g[0, 0] * v[0],),
               lambda v, o: (2 * _n(v), 2 * _n(v))),
    "concat": (_fw_concat, _bw_concat, lambda v, o: (o.size, o.size)),
    "slice": (_fw_slice, _bw_slice, lambda v, o: (o.size, _n(v))),
    "reshape": (_fw_reshape, lambda g, v, o, s, shape: (g.reshape(v[0].shape),),
                lambda v, o: (0, 0)),
    "transpose": (lambda vals: (vals[0].T, None), lambda g, v, o, s: (g.T,),
                  lambda v, o: (0, 0)),
    "scale_rows": (_fw_scale_rows,
                   lambda g, v, o, s: (np.sum(g * v[1], axis=1, keepdims=True), g * v[0]),
                   lambda v, o: (o.size, 3 * o.size)),
    "linear_solve": (_fw_linear_solve, _bw_linear_solve,
                     lambda v, o: (2 * v[0].shape[0] ** 3 // 3 + 2 * v[0].size * o.shape[1],
                                   2 * v[0].size * o.shape[1] + v[0].size * o.shape[1])),
}

OP_KINDS = frozenset(_OPS)


class Tape:
    """Append-only record of differentiable operations.

    ``truncation_depth`` limits :meth:`backward` to the trailing nodes of
    the tape; gradients stop at the boundary as if earlier results were
    constants.  With ``grad_enabled=False`` nothing is recorded and values
    are computed eagerly, which is what forward-only solves use.
    """

    def __init__(self, truncation_depth: int | None = None, grad_enabled: bool = True,
                 count_ops: bool = False):
        if truncation_depth is not None and truncation_depth < 0:
            raise TapeError("truncation_depth must be non-negative")
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []
        self.truncation_depth = truncation_depth
        self.grad_enabled = grad_enabled
        self.count_ops = count_ops
        self.forward_flops = 0
        self.backward_flops = 0

    def __len__(self):
        return len(self.nodes)

    def _push(self, kind, inputs, value, saved, params, requires_grad):
        index = len(self.nodes) if self.grad_enabled else -1
        var = Var(self, index, kind, inputs, value, saved, params, requires_grad)
        if self.grad_enabled:
            self.nodes.append(var)
        return var

    def leaf(self, value, requires_grad: bool = False) -> Var:
        t = as_tensor(value)
        if not np.all(np.isfinite(t)):
            raise TapeError("leaf values must be finite")
        t = t.copy()
        t.flags.writeable = False
        var = self._push("leaf", (), t, None, None, requires_grad and self.grad_enabled)
        if var.requires_grad:
            self.leaves.append(var)
        return var

    def const(self, value) -> Var:
        return self.leaf(value, requires_grad=False)

    def apply(self, kind: str, *inputs: Var, **params) -> Var:
        """Record ``kind`` applied to ``inputs`` and return the result node."""
        try:
            forward = _OPS[kind][0]
        except KeyError:
            raise TapeError(f"unknown op kind {kind!r}") from None
        requires_grad = False
        for v in inputs:
            if getattr(v, "tape", None) is not self:
                raise TapeError(f"{kind}: input {v!r} does not belong to this tape")
            requires_grad = requires_grad or v.requires_grad
        vals = [v.value for v in inputs]
        out, saved = forward(vals, **params)
        if not requires_grad:
            saved = None
        elif self.count_ops:
            self.forward_flops += _OPS[kind][2](vals, out)[0]
        return self._push(kind, inputs, out, saved, params, requires_grad)

    def backward(self, loss: Var) -> dict[Var, np.ndarray]:
        """Gradients of the scalar ``loss`` for every leaf with ``requires_grad``.

        The result maps each such leaf to its gradient; the same array is
        stored on ``leaf.grad``.
        """
        if not self.grad_enabled:
            raise TapeError("backward on a tape with gradients disabled")
        if loss.tape is not self or loss.index < 0:
            raise TapeError("loss does not belong to this tape")
        if loss.value.shape != (1, 1):
            raise TapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")

        n = len(self.nodes)
        stop = 0 if self.truncation_depth is None else max(0, n - self.truncation_depth)
        grads: list = [None] * n
        if loss.index >= stop:
            grads[loss.index] = np.ones((1, 1))
        for i in range(n - 1, stop - 1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.kind == "leaf" or not node.requires_grad:
                continue
            _, bw, flops = _OPS[node.kind]
            vals = [v.value for v in node.inputs]
            in_grads = bw(g, vals, node.value, node.saved, **node.params)
            if self.count_ops:
                self.backward_flops += flops(vals, node.value)[1]
            for inp, ig in zip(node.inputs, in_grads):
                if not inp.requires_grad:
                    continue
                j = inp.index
                grads[j] = ig if grads[j] is None else grads[j] + ig

        result = {}
        for node in self.leaves:
            g = grads[node.index]
            node.grad = np.zeros_like(node.value) if g is None else g
            result[node] = node.grad
        return result


def grad_check(f, x0, h: float = 1e-6) -> float:
    """Largest relative gap between autodiff and central differences.

    ``f(tape, x)`` must build a scalar from the leaf ``x`` on ``tape``.  The
    error per coordinate is ``|auto - fd| / max(1, |fd|)``.
    """
    x0 = as_tensor(x0)
    tape = Tape()
    x = tape.leaf(x0, requires_grad=True)
    auto = tape.backward(f(tape, x))[x]

    def evaluate(value):
        t = Tape(grad_enabled=False)
        return f(t, t.leaf(value)).item()

    worst = 0.0
    for idx in np.ndindex(x0.shape):
        plus, minus = x0.copy(), x0.copy()
        plus[idx] += h
        minus[idx] -= h
        try:
            fd = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
        except Exception as exc:
            raise ArithmeticError(f"grad_check: f failed at coordinate {idx}: {exc}") from exc
        worst = max(worst, abs(auto[idx] - fd) / max(1.0, abs(fd)))
    return worst
