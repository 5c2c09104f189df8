"""Model families mapping a feature ``u`` and weights ``w`` to LP data ``(c, A, b)``.

Three closed families:

``direct``
    ``w`` is the flat concatenation of ``c``, row-major ``A`` and ``b``
    (or just ``c`` when only the cost is learned); ``u`` is ignored.
``linear_shift``
    Six weights shifting a base LP linearly in ``u``: every ``c_i`` by
    ``w1 + w2 u``, one masked entry per row of ``A`` by ``w3 + w4 u`` and
    every ``b_i`` by ``w5 + w6 u``.
``trig_demo``
    The two-weight trigonometric example::

        min  cos(w0 + w1 u) x1 + sin(w0 + w1 u) x2
        s.t. -x1 <= 0.2 w0 u
             -x2 <= -0.2 w1 u
             w0 x1 + (1 + w1 u / 3) x2 <= w0 + 0.1 u
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .ipm import LinearProgram
from .tape import Tape, Var

__all__ = [
    "Family",
    "ParametricModel",
    "direct_model",
    "linear_shift_model",
    "trig_demo_model",
    "instantiate",
    "gradient_wrt_w",
    "pullback",
    "TRIG_DEMO_W_TRUE",
    "TRIG_DEMO_W_INI",
    "TRIG_DEMO_U",
]

TRIG_DEMO_W_TRUE = (1.0, 1.0)
TRIG_DEMO_W_INI = (0.2, 0.4)
TRIG_DEMO_U = (-1.5, -0.5, 0.5, 1.5)


class Family(str, enum.Enum):
    DIRECT = "direct"
    LINEAR_SHIFT = "linear_shift"
    TRIG_DEMO = "trig_demo"


@dataclass(frozen=True)
class ParametricModel:
    """Immutable description of a family plus its constant base data.

    ``c_group`` flags the weights that drive the cost vector; the rest
    drive the constraints.  Learning rates are assigned per group.
    """

    family: Family
    d: int
    m: int
    base_c: np.ndarray | None = None
    base_A: np.ndarray | None = None
    base_b: np.ndarray | None = None
    masks: tuple = ()
    learn: str = "cab"
    c_group: np.ndarray = field(default=None, repr=False)

    @property
    def n_weights(self) -> int:
        return len(self.c_group)

    def alpha_vector(self, alpha_c: float, alpha_ab: float) -> np.ndarray:
        return np.where(self.c_group, alpha_c, alpha_ab).astype(float)

    def pack(self, c, A=None, b=None) -> np.ndarray:
        """Flatten LP data into a ``direct`` weight vector."""
        if self.family is not Family.DIRECT:
            raise ValueError("pack applies to the direct family only")
        parts = [np.ravel(c)]
        if self.learn == "cab":
            parts += [np.ravel(A), np.ravel(b)]
        return np.concatenate(parts).astype(float)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "learn": self.learn, "masks": list(self.masks)}


def direct_model(d: int, m: int, learn: str = "cab", A=None, b=None) -> ParametricModel:
    if learn not in ("c", "cab"):
        raise ValueError(f"learn must be 'c' or 'cab', got {learn!r}")
    if learn == "c":
        if A is None or b is None:
            raise ValueError("learning c alone needs fixed A and b")
        n, group = d, np.ones(d, bool)
        A, b = np.asarray(A, float).reshape(m, d), np.asarray(b, float).reshape(m, 1)
    else:
        n = d + m * d + m
        group = np.zeros(n, bool)
        group[:d] = True
        A = b = None
    return ParametricModel(Family.DIRECT, d, m, base_A=A, base_b=b, learn=learn, c_group=group)


def linear_shift_model(c, A, b, masks) -> ParametricModel:
    A = np.asarray(A, float)
    m, d = A.shape
    masks = tuple(int(j) for j in masks)
    if len(masks) != m or not all(0 <= j < d for j in masks):
        raise ValueError(f"need one column index in [0, {d}) per row, got {masks}")
    return ParametricModel(Family.LINEAR_SHIFT, d, m,
                           base_c=np.asarray(c, float).reshape(d, 1), base_A=A,
                           base_b=np.asarray(b, float).reshape(m, 1), masks=masks,
                           c_group=np.array([True, True, False, False, False, False]))


def trig_demo_model() -> ParametricModel:
    return ParametricModel(Family.TRIG_DEMO, 2, 3, c_group=np.array([True, True]))


def _linear_shift(model, w, u, tape):
    d, m = model.d, model.m
    pc = np.zeros((d, 6))
    pc[:, 0], pc[:, 1] = 1.0, u
    pa = np.zeros((m * d, 6))
    rows = np.arange(m) * d + np.asarray(model.masks)
    pa[rows, 2], pa[rows, 3] = 1.0, u
    pb = np.zeros((m, 6))
    pb[:, 4], pb[:, 5] = 1.0, u
    c = tape.const(model.base_c) + tape.const(pc) @ w
    A = tape.const(model.base_A) + tape.apply("reshape", tape.const(pa) @ w, shape=(m, d))
    b = tape.const(model.base_b) + tape.const(pb) @ w
    return c, A, b


def _trig_demo(model, w, u, tape):
    theta = tape.const([[1.0, u]]) @ w
    c = tape.apply("concat", tape.apply("cos", theta), tape.apply("sin", theta))
    a0 = np.array([[-1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
    pa = np.zeros((6, 2))
    pa[4, 0] = 1.0
    pa[5, 1] = u / 3.0
    b0 = np.array([[0.0], [0.0], [0.1 * u]])
    pb = np.array([[0.2 * u, 0.0], [0.0, -0.2 * u], [1.0, 0.0]])
    A = tape.const(a0) + tape.apply("reshape", tape.const(pa) @ w, shape=(3, 2))
    b = tape.const(b0) + tape.const(pb) @ w
    return c, A, b


def _direct(model, w, u, tape):
    d, m = model.d, model.m
    c = tape.apply("slice", w, start=0, stop=d)
    if model.learn == "c":
        return c, tape.const(model.base_A), tape.const(model.base_b)
    A = tape.apply("reshape", tape.apply("slice", w, start=d, stop=d + m * d), shape=(m, d))
    b = tape.apply("slice", w, start=d + m * d, stop=d + m * d + m)
    return c, A, b


_BUILDERS = {
    Family.DIRECT: _direct,
    Family.LINEAR_SHIFT: _linear_shift,
    Family.TRIG_DEMO: _trig_demo,
}


def instantiate(model: ParametricModel, u: float, tape: Tape, w) -> tuple[LinearProgram, Var]:
    """Build ``(c, A, b)`` on ``tape``; returns the LP and the weight leaf.

    ``w`` may be an array (a new gradient-tracking leaf is created) or a
    leaf already on ``tape``.
    """
    if not isinstance(w, Var):
        w = tape.leaf(np.asarray(w, float).reshape(-1, 1), requires_grad=True)
    if w.shape != (model.n_weights, 1):
        raise ValueError(f"{model.family.value} expects {model.n_weights} weights, got {w.shape[0]}")
    c, A, b = _BUILDERS[model.family](model, w, float(u), tape)
    return LinearProgram(c, A, b), w


def gradient_wrt_w(w: Var, loss: Var) -> np.ndarray:
    """Gradient of ``loss`` with respect to the weight leaf, both on one tape."""
    return w.tape.backward(loss)[w]


def pullback(model: ParametricModel, u: float, w, g_c, g_A, g_b) -> np.ndarray:
    """Chain LP-data gradients ``(dL/dc, dL/dA, dL/db)`` back to ``w``.

    Lets the solver run on its own tape (with its own truncation) while the
    parameterization is differentiated separately.
    """
    tape = Tape()
    lp, wv = instantiate(model, u, tape, w)
    total = tape.apply("sum", tape.apply("concat",
                                         tape.apply("dot", lp.c, tape.const(g_c)),
                                         tape.apply("sum", lp.A * tape.const(g_A)),
                                         tape.apply("dot", lp.b, tape.const(g_b))))
    return tape.backward(total)[wv].ravel()
