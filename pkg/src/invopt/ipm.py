"""Barrier interior-point solver for ``min c'x  s.t.  Ax <= b``, recorded on a tape.

Each Newton step of each centering stage is built from tape primitives,
so ``backward`` on any function of the returned ``x`` differentiates
through the whole solve back to ``c``, ``A`` and ``b``.  Step sizes and
stopping decisions are taken on plain floats and act as constants.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from scipy.linalg.lapack import dgetrf, dgetrs

from .tape import _SINGULAR_RCOND, SingularSystemError, Tape, TapeError, Var

__all__ = [
    "Status",
    "IpmSettings",
    "LinearProgram",
    "SolveResult",
    "InfeasibleError",
    "UnboundedError",
    "SingularSystemError",
    "solve_lp",
    "solve_arrays",
    "solve_batch",
    "phase_one",
    "newton_centering",
    "central_path_trace",
    "barrier_objective",
    "expected_stages",
    "truncation_for_newton_steps",
]

ARMIJO_ALPHA = 0.25
BACKTRACK_BETA = 0.5
RIDGE = 1e-10
MAX_FULL_STEPS = 50
PHASE_ONE_T0 = 1.0
PHASE_ONE_MU = 10.0
PHASE_ONE_MARGIN = 1e-9


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    SINGULAR = "singular_system"


class InfeasibleError(ArithmeticError):
    pass


class UnboundedError(ArithmeticError):
    pass


class _NewtonLimit(ArithmeticError):
    pass


@dataclass
class IpmSettings:
    t0: float = 1.0
    mu: float = 10.0
    eps: float = 1e-5
    newton_tol: float = 1e-8
    max_newton: int = 100
    max_outer: int = 200
    unbounded_norm: float = 1e8
    freeze_phase_one: bool = False

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if not self.mu > 1:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def with_eps(self, eps: float) -> "IpmSettings":
        return IpmSettings(self.t0, self.mu, eps, self.newton_tol, self.max_newton,
                           self.max_outer, self.unbounded_norm, self.freeze_phase_one)


@dataclass
class LinearProgram:
    """Inequality-form LP whose data live on a tape."""

    c: Var
    A: Var
    b: Var

    def __post_init__(self):
        m, d = self.A.shape
        if d < 1 or m < 1:
            raise TapeError(f"LP needs d >= 1 and m >= 1, got A of shape {self.A.shape}")
        if self.c.shape != (d, 1) or self.b.shape != (m, 1):
            raise TapeError(f"inconsistent LP shapes c{self.c.shape} A{self.A.shape} b{self.b.shape}")
        if not (self.c.tape is self.A.tape is self.b.tape):
            raise TapeError("c, A and b must share a tape")

    @classmethod
    def from_arrays(cls, tape: Tape, c, A, b, requires_grad: bool = False) -> "LinearProgram":
        return cls(tape.leaf(c, requires_grad), tape.leaf(A, requires_grad),
                   tape.leaf(b, requires_grad))

    @property
    def tape(self) -> Tape:
        return self.c.tape

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class SolveResult:
    x: Var | None
    status: Status
    stages: int = 0
    newton_steps: int = 0
    centers: list = field(default_factory=list)
    # Tape length at the start of every main-phase Newton step.
    newton_marks: list = field(default_factory=list)
    t_final: float = float("nan")
    warning: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def barrier_objective(x, t, c, A, b) -> float:
    """``t c'x - sum(log(b - Ax))`` on plain arrays; ``inf`` outside the domain."""
    slack = b - A @ x
    if slack.min() <= 0:
        return math.inf
    return float(t * (c.T @ x)[0, 0] - np.log(slack).sum())


def newton_centering(x: Var, t: float, lp: LinearProgram, settings: IpmSettings,
                     marks: list | None = None, f_values: list | None = None):
    """Damped Newton minimization of the barrier objective at sharpness ``t``.

    Returns ``(x_center, steps)``.  ``marks`` collects the tape length at
    the start of each step; ``f_values`` the objective before each step.
    """
    tape = lp.tape
    c, A, b = lp.c, lp.A, lp.b
    cv, Av, bv = c.value, A.value, b.value
    d = lp.d
    ones = tape.const(np.ones((lp.m, 1)))
    full_steps = 0
    for step in range(settings.max_newton):
        xv = x.value
        if marks is not None:
            marks.append(len(tape))
        slack = b - tape.apply("matvec", A, x)
        delta = ones / slack
        grad = t * c + tape.apply("matvec", A, delta, ta=True)
        scaled = tape.apply("scale_rows", delta, A)
        hess = tape.apply("matmul", scaled, scaled, ta=True)
        try:
            dx = tape.apply("linear_solve", hess, grad)
        except SingularSystemError:
            hess = hess + tape.const(RIDGE * np.eye(d))
            dx = tape.apply("linear_solve", hess, grad)

        gv, dxv = grad.value, dx.value
        lam2 = float((gv.T @ dxv)[0, 0])
        if not math.isfinite(lam2) or lam2 < -1e-12:
            raise SingularSystemError("Newton system produced a non-descent direction")
        f0 = barrier_objective(xv, t, cv, Av, bv)
        if f_values is not None:
            f_values.append(f0)
        if lam2 / 2.0 <= settings.newton_tol:
            if marks is not None:
                marks.pop()
            return x, step

        s = 1.0
        while (bv - Av @ (xv - s * dxv)).min() <= 0:
            s *= BACKTRACK_BETA
        while barrier_objective(xv - s * dxv, t, cv, Av, bv) > f0 - ARMIJO_ALPHA * s * lam2:
            s *= BACKTRACK_BETA
            if s < 1e-14:
                # Rounding floor: the decrement is as small as arithmetic allows.
                if marks is not None:
                    marks.pop()
                return x, step
        x = x - s * dx

        full_steps = full_steps + 1 if s == 1.0 else 0
        if full_steps >= MAX_FULL_STEPS or np.max(np.abs(x.value)) > settings.unbounded_norm:
            raise UnboundedError("centering diverged")
    raise _NewtonLimit(f"no convergence in {settings.max_newton} Newton steps")


def phase_one(A: Var, b: Var, settings: IpmSettings) -> Var:
    """Strictly feasible start point for ``Ax < b`` or :class:`InfeasibleError`.

    Minimizes the auxiliary slack ``s`` subject to ``Ax - b <= s`` with the
    same barrier machinery, starting at ``x = 0``.  Stops at the first
    centered point whose constraint slack is at least ``PHASE_ONE_MARGIN``.
    """
    if settings.freeze_phase_one and A.tape.grad_enabled:
        scratch = Tape(grad_enabled=False)
        x0 = phase_one(scratch.const(A.value), scratch.const(b.value), settings)
        return A.tape.const(x0.value)

    tape = A.tape
    m, d = A.shape
    Av, bv = A.value, b.value
    A1 = tape.apply("concat", A, tape.const(-np.ones((m, 1))), axis=1)
    c1 = np.zeros((d + 1, 1))
    c1[d] = 1.0
    z0 = np.zeros((d + 1, 1))
    z0[d] = np.max(-bv) + 1.0
    lp1 = LinearProgram(tape.const(c1), A1, b)
    z = tape.const(z0)
    t = PHASE_ONE_T0
    for _ in range(settings.max_outer):
        try:
            z, _ = newton_centering(z, t, lp1, settings)
        except _NewtonLimit:
            pass
        xv = z.value[:d]
        if np.max(Av @ xv - bv) <= -PHASE_ONE_MARGIN:
            return tape.apply("slice", z, start=0, stop=d)
        s = float(z.value[d, 0])
        gap = m / t
        if s - gap > 0 or (gap < PHASE_ONE_MARGIN and s > -PHASE_ONE_MARGIN):
            raise InfeasibleError(f"auxiliary slack bounded below by {s - gap:.3g}")
        t *= PHASE_ONE_MU
    raise InfeasibleError("phase one did not reach a strictly feasible point")


def expected_stages(m: int, settings: IpmSettings) -> int:
    """Centering stages implied by the ``m / t <= eps`` termination rule."""
    ratio = m / (settings.eps * settings.t0)
    if ratio <= 1.0:
        return 1
    return math.ceil(math.log(ratio) / math.log(settings.mu)) + 1


def solve_lp(lp: LinearProgram, settings: IpmSettings | None = None,
             trace_f: list | None = None) -> SolveResult:
    """Solve ``lp`` on its tape.

    Failures (infeasible, unbounded, singular Newton system) come back as a
    status rather than an exception.
    """
    settings = settings or IpmSettings()
    result = SolveResult(x=None, status=Status.OPTIMAL)
    t = settings.t0
    try:
        x = phase_one(lp.A, lp.b, settings)
        for stage in range(settings.max_outer):
            x, steps = newton_centering(x, t, lp, settings, result.newton_marks, trace_f)
            result.stages += 1
            result.newton_steps += steps
            result.centers.append(x.value.copy())
            if lp.m / t <= settings.eps:
                result.x, result.t_final = x, t
                return result
            t *= settings.mu
        raise _NewtonLimit(f"no certificate after {settings.max_outer} stages")
    except InfeasibleError:
        result.status = Status.INFEASIBLE
    except UnboundedError:
        result.status = Status.UNBOUNDED
    except SingularSystemError:
        result.status = Status.SINGULAR
    except _NewtonLimit as exc:
        if lp.m / t <= settings.eps and result.centers:
            result.x, result.t_final = x, t
            result.warning = str(exc)
            warnings.warn(f"solve_lp: {exc}; gap certificate holds", RuntimeWarning)
            return result
        result.status = Status.SINGULAR
        result.warning = str(exc)
    return result


# ---------------------------------------------------------------------------
# Tape-free forward path: the same iteration on plain arrays
# ---------------------------------------------------------------------------

def _solve_dense(hess, grad):
    lu, piv, info = dgetrf(hess)
    diag = np.abs(lu.diagonal())
    if info < 0 or not diag.max() < np.inf or diag.min() <= _SINGULAR_RCOND * max(diag.max(), 1e-300):
        raise SingularSystemError("Newton system is singular to working precision")
    return dgetrs(lu, piv, grad)[0]


def _center_arrays(x, t, c, A, b, settings):
    d = A.shape[1]
    full_steps = 0
    for step in range(settings.max_newton):
        delta = 1.0 / (b - A @ x)
        grad = t * c + A.T @ delta
        scaled = delta * A
        hess = scaled.T @ scaled
        try:
            dx = _solve_dense(hess, grad)
        except SingularSystemError:
            dx = _solve_dense(hess + RIDGE * np.eye(d), grad)
        lam2 = float((grad.T @ dx)[0, 0])
        if not math.isfinite(lam2) or lam2 < -1e-12:
            raise SingularSystemError("Newton system produced a non-descent direction")
        if lam2 / 2.0 <= settings.newton_tol:
            return x, step
        f0 = barrier_objective(x, t, c, A, b)
        s = 1.0
        while (b - A @ (x - s * dx)).min() <= 0:
            s *= BACKTRACK_BETA
        while barrier_objective(x - s * dx, t, c, A, b) > f0 - ARMIJO_ALPHA * s * lam2:
            s *= BACKTRACK_BETA
            if s < 1e-14:
                return x, step
        x = x - s * dx
        full_steps = full_steps + 1 if s == 1.0 else 0
        if full_steps >= MAX_FULL_STEPS or np.max(np.abs(x)) > settings.unbounded_norm:
            raise UnboundedError("centering diverged")
    raise _NewtonLimit(f"no convergence in {settings.max_newton} Newton steps")


def _phase_one_arrays(A, b, settings):
    m, d = A.shape
    A1 = np.hstack([A, -np.ones((m, 1))])
    c1 = np.zeros((d + 1, 1))
    c1[d] = 1.0
    z = np.zeros((d + 1, 1))
    z[d] = np.max(-b) + 1.0
    t = PHASE_ONE_T0
    for _ in range(settings.max_outer):
        try:
            z, _ = _center_arrays(z, t, c1, A1, b, settings)
        except _NewtonLimit:
            pass
        if np.max(A @ z[:d] - b) <= -PHASE_ONE_MARGIN:
            return z[:d]
        s, gap = float(z[d, 0]), m / t
        if s - gap > 0 or (gap < PHASE_ONE_MARGIN and s > -PHASE_ONE_MARGIN):
            raise InfeasibleError(f"auxiliary slack bounded below by {s - gap:.3g}")
        t *= PHASE_ONE_MU
    raise InfeasibleError("phase one did not reach a strictly feasible point")


def solve_arrays(c, A, b, settings: IpmSettings | None = None):
    """Forward-only :func:`solve_lp` on plain arrays, returning ``(status, x)``.

    Runs the same iteration without recording anything, for loss
    evaluations that need no gradient.  ``x`` is ``None`` unless optimal.
    """
    settings = settings or IpmSettings()
    c = np.asarray(c, float).reshape(-1, 1)
    A = np.asarray(A, float)
    b = np.asarray(b, float).reshape(-1, 1)
    m = A.shape[0]
    t, x, centered = settings.t0, None, False
    try:
        x = _phase_one_arrays(A, b, settings)
        for _ in range(settings.max_outer):
            x, _ = _center_arrays(x, t, c, A, b, settings)
            centered = True
            if m / t <= settings.eps:
                return Status.OPTIMAL, x
            t *= settings.mu
        raise _NewtonLimit(f"no certificate after {settings.max_outer} stages")
    except InfeasibleError:
        return Status.INFEASIBLE, None
    except UnboundedError:
        return Status.UNBOUNDED, None
    except SingularSystemError:
        return Status.SINGULAR, None
    except _NewtonLimit as exc:
        if m / t <= settings.eps and centered:
            warnings.warn(f"solve_lp: {exc}; gap certificate holds", RuntimeWarning)
            return Status.OPTIMAL, x
        return Status.SINGULAR, None


_LIMIT = "newton_limit"


def _barrier_batch(x, t, c, A, b):
    slack = b - A @ x
    f = t * (c.transpose(0, 2, 1) @ x)[:, 0, 0] - np.log(np.where(slack > 0, slack, 1.0)).sum(axis=(1, 2))
    return np.where(slack.min(axis=(1, 2)) > 0, f, math.inf)


def _center_batch(x, t, c, A, b, settings, live):
    """Newton centering of the problems flagged in ``live``, all at sharpness ``t``.

    Returns ``(x, failed)``; ``failed`` maps an index to a :class:`Status`
    or ``_LIMIT``.  Problems that hit the Newton limit keep their start point.
    """
    x = x.copy()
    start = x.copy()
    d = A.shape[2]
    failed = {}
    pending = live.copy()
    full = np.zeros(len(x), dtype=int)
    for _ in range(settings.max_newton):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            return x, failed
        Ai, bi, ci, xi = A[idx], b[idx], c[idx], x[idx]
        delta = 1.0 / (bi - Ai @ xi)
        grad = t * ci + Ai.transpose(0, 2, 1) @ delta
        scaled = delta * Ai
        hess = scaled.transpose(0, 2, 1) @ scaled
        dx = np.zeros_like(grad)
        ok = np.ones(idx.size, dtype=bool)
        for j in range(idx.size):
            try:
                dx[j] = _solve_dense(hess[j], grad[j])
            except SingularSystemError:
                try:
                    dx[j] = _solve_dense(hess[j] + RIDGE * np.eye(d), grad[j])
                except SingularSystemError:
                    ok[j] = False
        lam2 = (grad * dx).sum(axis=(1, 2))
        ok &= np.isfinite(lam2) & (lam2 >= -1e-12)
        for i in idx[~ok]:
            failed[i] = Status.SINGULAR
            pending[i] = False
        move = ok & (lam2 / 2.0 > settings.newton_tol)
        pending[idx[~move]] = False
        if not move.any():
            continue
        idx, Ai, bi, ci, xi, dx, lam2 = (idx[move], Ai[move], bi[move], ci[move], xi[move],
                                         dx[move], lam2[move])
        f0 = _barrier_batch(xi, t, ci, Ai, bi)
        s = np.ones(idx.size)
        while True:
            out = (bi - Ai @ (xi - s[:, None, None] * dx)).min(axis=(1, 2)) <= 0
            if not out.any():
                break
            s[out] *= BACKTRACK_BETA
        stalled = np.zeros(idx.size, dtype=bool)
        while True:
            f = _barrier_batch(xi - s[:, None, None] * dx, t, ci, Ai, bi)
            need = ~stalled & (f > f0 - ARMIJO_ALPHA * s * lam2)
            if not need.any():
                break
            s[need] *= BACKTRACK_BETA
            stalled |= need & (s < 1e-14)
        # A stalled Armijo search means the decrement is at the rounding floor: centered.
        pending[idx[stalled]] = False
        step = ~stalled
        idx, xi, dx, s = idx[step], xi[step], dx[step], s[step]
        x[idx] = xi - s[:, None, None] * dx
        full[idx] = np.where(s == 1.0, full[idx] + 1, 0)
        diverged = (full[idx] >= MAX_FULL_STEPS) | (np.abs(x[idx]).max(axis=(1, 2)) > settings.unbounded_norm)
        for i in idx[diverged]:
            failed[i] = Status.UNBOUNDED
            pending[i] = False
    for i in np.flatnonzero(pending):
        failed[i] = _LIMIT
        x[i] = start[i]
    return x, failed


def _phase_one_batch(A, b, settings):
    n, m, d = A.shape
    A1 = np.concatenate([A, -np.ones((n, m, 1))], axis=2)
    c1 = np.zeros((n, d + 1, 1))
    c1[:, d] = 1.0
    z = np.zeros((n, d + 1, 1))
    z[:, d, 0] = np.max(-b, axis=(1, 2)) + 1.0
    status = [Status.INFEASIBLE] * n
    live = np.ones(n, dtype=bool)
    t = PHASE_ONE_T0
    for _ in range(settings.max_outer):
        if not live.any():
            break
        z, failed = _center_batch(z, t, c1, A1, b, settings, live)
        for i, why in failed.items():
            if why is not _LIMIT:
                status[i], live[i] = why, False
        gap = m / t
        for i in np.flatnonzero(live):
            if np.max(A[i] @ z[i, :d] - b[i]) <= -PHASE_ONE_MARGIN:
                status[i], live[i] = Status.OPTIMAL, False
                continue
            slack = float(z[i, d, 0])
            if slack - gap > 0 or (gap < PHASE_ONE_MARGIN and slack > -PHASE_ONE_MARGIN):
                live[i] = False
        t *= PHASE_ONE_MU
    return z[:, :d].copy(), status


def solve_batch(c, A, b, settings: IpmSettings | None = None):
    """Forward-only solve of many same-shape LPs at once.

    ``c`` is ``(n, d, 1)``, ``A`` is ``(n, m, d)`` and ``b`` is ``(n, m, 1)``.
    Runs the iteration of :func:`solve_arrays` on every problem in lockstep
    and returns ``(statuses, x)`` with ``x`` of shape ``(n, d, 1)``; rows of
    failed problems are NaN.
    """
    settings = settings or IpmSettings()
    c, A, b = (np.asarray(v, float) for v in (c, A, b))
    n, m, _ = A.shape
    x, status = _phase_one_batch(A, b, settings)
    live = np.array([s is Status.OPTIMAL for s in status])
    centered = np.zeros(n, dtype=bool)
    t = settings.t0
    for _ in range(settings.max_outer):
        if not live.any():
            break
        x, failed = _center_batch(x, t, c, A, b, settings, live)
        final = m / t <= settings.eps
        for i, why in failed.items():
            if why is _LIMIT and final and centered[i]:
                warnings.warn("solve_batch: Newton limit; gap certificate holds", RuntimeWarning)
                continue
            status[i] = Status.SINGULAR if why is _LIMIT else why
            live[i] = False
        centered |= live
        if final:
            break
        t *= settings.mu
    else:
        for i in np.flatnonzero(live):
            status[i] = Status.SINGULAR
    x[[s is not Status.OPTIMAL for s in status]] = np.nan
    return status, x


def central_path_trace(lp: LinearProgram, settings: IpmSettings | None = None) -> list:
    """Centers of every stage; the last one is the solver output."""
    res = solve_lp(lp, settings)
    if not res.ok:
        raise ArithmeticError(f"solve failed: {res.status.value}")
    return res.centers


def truncation_for_newton_steps(result: SolveResult, k: int, tape: Tape) -> int | None:
    """``truncation_depth`` that keeps the last ``k`` Newton steps and everything after."""
    if k <= 0 or k >= len(result.newton_marks):
        return None
    return len(tape) - result.newton_marks[-k]
