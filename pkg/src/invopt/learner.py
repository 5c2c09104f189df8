"""Gradient-descent inverse optimization through the unrolled barrier solver.

Each step solves the forward LP for every observation on a fresh tape,
backpropagates the loss to the model weights, and moves along the
averaged gradient scaled by per-weight learning rates.  A halving line
search picks a step that keeps every forward problem solvable and lowers
the mean loss.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ipm import (IpmSettings, LinearProgram, Status, solve_arrays, solve_batch, solve_lp,
                  truncation_for_newton_steps)
from .losses import LossKind, loss_fn
from .models import ParametricModel, instantiate, pullback
from .tape import Tape

__all__ = [
    "Constant",
    "ExpDecay",
    "eps_at",
    "LearnSettings",
    "StepRecord",
    "LearnResult",
    "Termination",
    "ForwardSolveError",
    "Problem",
    "evaluate",
    "lp_arrays",
    "line_search",
    "learn",
    "HyperParams",
    "hyper_grid",
    "hyper_search",
    "GRAD_CLIP",
]

log = logging.getLogger(__name__)

GRAD_CLIP = 1e6
BATCH_MIN = 4
T0_GRID = (0.5, 1.0, 5.0, 10.0)
MU_GRID = (1.5, 2.0, 5.0, 10.0, 20.0)


class ForwardSolveError(RuntimeError):
    """The forward problem cannot be solved at the initial weights."""


@dataclass(frozen=True)
class Constant:
    value: float = 1e-5

    def at(self, step: int, max_steps: int) -> float:
        return self.value


@dataclass(frozen=True)
class ExpDecay:
    start: float = 0.1
    end: float = 1e-5

    def at(self, step: int, max_steps: int) -> float:
        if max_steps <= 1:
            return self.end
        frac = step / (max_steps - 1)
        return self.start * (self.end / self.start) ** frac


def eps_at(step: int, schedule, max_steps: int = 200) -> float:
    return schedule.at(step, max_steps)


def _next_decade(step: int, eps: float, settings: "LearnSettings") -> int:
    """First later step whose eps is at most a tenth of ``eps`` (else the last step)."""
    last = settings.max_steps - 1
    for later in range(step + 1, last):
        if eps_at(later, settings.eps_schedule, settings.max_steps) <= 0.1 * eps:
            return later
    return max(last, step + 1)


class Termination:
    MAX_STEPS = "max_steps"
    BETA_UNDERFLOW = "early_beta_underflow"
    ZERO_LOSS = "zero_loss"
    SOLVE_FAILURE = "solve_failure"


@dataclass
class LearnSettings:
    max_steps: int = 200
    alpha_c: float = 1.0
    alpha_ab: float = 1.0
    eps_schedule: object = None
    loss: LossKind = LossKind.SE
    beta_min: float = 1e-8
    ipm: IpmSettings = field(default_factory=IpmSettings)
    truncate: int | None = None
    loss_tol: float = 1e-12
    report_eps: float = 1e-5

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if self.eps_schedule is None:
            self.eps_schedule = Constant(1e-5) if self.loss is LossKind.ADG else ExpDecay()
        if not (self.alpha_c > 0 and self.alpha_ab > 0):
            raise ValueError("learning rates must be positive")
        if not self.beta_min > 0:
            raise ValueError("beta_min must be positive")


@dataclass
class StepRecord:
    step: int
    loss: float
    beta: float
    step_norm: float
    accepted_loss: float
    eps: float


@dataclass
class LearnResult:
    w_lrn: np.ndarray
    trajectory: list
    termination: str
    initial_loss: float
    final_loss: float
    steps_used: int
    test_loss: float | None = None
    warnings: list = field(default_factory=list)
    wall_ms: float = 0.0


@dataclass
class Problem:
    """Everything one learning run needs besides its settings."""

    model: ParametricModel
    w_ini: np.ndarray
    observations: list
    test_observations: list = field(default_factory=list)
    label: str = ""


def lp_arrays(model, w, u):
    """Numeric (c, A, b) of the model at feature ``u`` and weights ``w``."""
    tape = Tape(grad_enabled=False)
    lp, _ = instantiate(model, u, tape, w)
    return lp.c.value, lp.A.value, lp.b.value


def _losses_batch(model, w, observations, kind, ipm):
    data = [lp_arrays(model, w, obs.u) for obs in observations]
    if len(data) < BATCH_MIN:
        # Lockstep bookkeeping only pays off with several problems.
        status, xs = zip(*(solve_arrays(c, A, b, ipm) for c, A, b in data))
    else:
        status, xs = solve_batch(*(np.stack(v) for v in zip(*data)), ipm)
    if any(s is not Status.OPTIMAL for s in status):
        return None
    tape = Tape(grad_enabled=False)
    f = loss_fn(kind)
    return [f(tape.const(c), tape.const(x), obs.x).item()
            for (c, _, _), x, obs in zip(data, xs, observations)]


def _solve_one(model, w, obs, kind, ipm, truncate):
    c, A, b = lp_arrays(model, w, obs.u)
    tape = Tape()
    lp = LinearProgram.from_arrays(tape, c, A, b, requires_grad=True)
    res = solve_lp(lp, ipm)
    if not res.ok:
        return None, None
    loss = loss_fn(kind)(lp.c, res.x, obs.x)
    if truncate:
        tape.truncation_depth = truncation_for_newton_steps(res, truncate, tape)
    g = tape.backward(loss)
    return loss.item(), pullback(model, obs.u, w, g[lp.c], g[lp.A], g[lp.b])


def evaluate(model, w, observations, kind, ipm, with_grad=False, truncate=None):
    """Mean loss (and mean gradient) over ``observations``; ``(None, None)`` if any solve fails."""
    if not with_grad:
        losses = _losses_batch(model, w, observations, kind, ipm)
        if losses is None or not all(math.isfinite(v) for v in losses):
            return None, None
        return sum(losses) / len(losses), None
    total, grad = 0.0, np.zeros(model.n_weights)
    for obs in observations:
        loss, g = _solve_one(model, w, obs, kind, ipm, truncate)
        if loss is None or not math.isfinite(loss):
            return None, None
        total += loss
        grad += g
    n = len(observations)
    return total / n, grad / n


@dataclass
class LineSearchResult:
    beta: float | None
    loss: float | None
    trials: int

    @property
    def early_termination(self) -> bool:
        return self.beta is None


def line_search(trial_loss, w, g, current_loss, beta_min=1e-8) -> LineSearchResult:
    """Halve ``beta`` from 1 until ``w - beta g`` is solvable and lowers the mean loss.

    ``trial_loss(w)`` returns the mean loss or ``None`` when some forward
    solve fails.  ``beta`` dropping below ``beta_min`` means early
    termination.
    """
    beta, trials = 1.0, 0
    while beta >= beta_min:
        trials += 1
        val = trial_loss(w - beta * g)
        if val is not None and val < current_loss:
            return LineSearchResult(beta, val, trials)
        beta *= 0.5
    return LineSearchResult(None, None, trials)


def _sanitize(g, warnings):
    if not np.all(np.isfinite(g)) or np.max(np.abs(g)) > GRAD_CLIP:
        warnings.append("gradient clipped")
        g = np.clip(np.nan_to_num(g, nan=0.0, posinf=GRAD_CLIP, neginf=-GRAD_CLIP),
                    -GRAD_CLIP, GRAD_CLIP)
    return g


def learn(problem: Problem, settings: LearnSettings) -> LearnResult:
    """Run the descent loop; raises :class:`ForwardSolveError` if the start is unsolvable."""
    start = time.perf_counter()
    model, obs = problem.model, problem.observations
    if not obs:
        raise ValueError("learning needs at least one observation")
    kind = settings.loss
    alpha = model.alpha_vector(settings.alpha_c, settings.alpha_ab)
    report = settings.ipm.with_eps(settings.report_eps)
    w = np.asarray(problem.w_ini, float).ravel().copy()
    warnings = []

    initial, _ = evaluate(model, w, obs, kind, report)
    trajectory = []
    termination = Termination.MAX_STEPS
    final_eps = eps_at(settings.max_steps - 1, settings.eps_schedule, settings.max_steps)
    step = 0
    while step < settings.max_steps:
        eps = eps_at(step, settings.eps_schedule, settings.max_steps)
        ipm = settings.ipm.with_eps(eps)
        # While the precision is still tightening, a stall skips ahead one decade of eps.
        tightening = eps > final_eps * (1.0 + 1e-9)
        loss, grad = evaluate(model, w, obs, kind, ipm, with_grad=True, truncate=settings.truncate)
        if loss is None:
            if step == 0:
                raise ForwardSolveError("forward problem unsolvable at the initial weights")
            termination = Termination.SOLVE_FAILURE
            break
        if loss <= settings.loss_tol:
            if tightening:
                trajectory.append(StepRecord(step, loss, 0.0, 0.0, loss, eps))
                step = _next_decade(step, eps, settings)
                continue
            termination = Termination.ZERO_LOSS
            break
        direction = _sanitize(alpha * grad, warnings)
        ls = line_search(lambda wt: evaluate(model, wt, obs, kind, ipm)[0],
                         w, direction, loss, settings.beta_min)
        if ls.early_termination:
            trajectory.append(StepRecord(step, loss, 0.0, 0.0, loss, eps))
            if tightening:
                step = _next_decade(step, eps, settings)
                continue
            termination = Termination.BETA_UNDERFLOW
            break
        w = w - ls.beta * direction
        trajectory.append(StepRecord(step, loss, ls.beta,
                                     float(np.linalg.norm(ls.beta * direction)), ls.loss, eps))
        step += 1

    final, _ = evaluate(model, w, obs, kind, report)
    test = None
    if problem.test_observations:
        test, _ = evaluate(model, w, problem.test_observations, kind, report)
        test = math.inf if test is None else test
    if initial is None:
        initial = math.inf
    return LearnResult(
        w_lrn=w, trajectory=trajectory, termination=termination,
        initial_loss=initial, final_loss=math.inf if final is None else final,
        steps_used=len(trajectory), test_loss=test, warnings=sorted(set(warnings)),
        wall_ms=1000.0 * (time.perf_counter() - start))


# ---------------------------------------------------------------------------
# Randomized hyperparameter search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperParams:
    t0: float
    mu: float
    alpha_c: float
    alpha_ab: float

    def apply(self, settings: LearnSettings) -> LearnSettings:
        return replace(settings, alpha_c=self.alpha_c, alpha_ab=self.alpha_ab,
                       ipm=replace(settings.ipm, t0=self.t0, mu=self.mu))


def hyper_grid(task: str) -> list[HyperParams]:
    """Full grid of combinations for ``task``."""
    if task == "learn-c":
        return [HyperParams(t, mu, a, 1.0)
                for t, mu, a in itertools.product(T0_GRID, MU_GRID, (1.0, 10.0, 100.0, 1000.0))]
    if task == "learn-cab":
        rates = (0.1, 1.0, 10.0)
        return [HyperParams(t, mu, ac, aab)
                for t, mu, ac, aab in itertools.product(T0_GRID, MU_GRID, rates, rates)]
    if task in ("parametric", "trig-demo"):
        return [HyperParams(t, mu, f * aab, aab)
                for t, mu, aab, f in itertools.product(T0_GRID, MU_GRID, (1.0, 10.0),
                                                       (0.01, 1.0, 100.0))]
    raise ValueError(f"no hyperparameter grid for task {task!r}")


def sample_combos(grid: list, n: int, rng: np.random.Generator) -> list:
    if n >= len(grid):
        return list(grid)
    idx = rng.choice(len(grid), size=n, replace=False)
    return [grid[i] for i in sorted(idx)]


def _run_combo(args):
    problem, settings, hp = args
    try:
        return hp, learn(problem, hp.apply(settings)), None
    except ForwardSolveError as exc:
        return hp, None, str(exc)


def worker_count() -> int:
    cap = os.environ.get("INVOPT_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


@dataclass
class SearchOutcome:
    best: HyperParams | None
    result: LearnResult | None
    runs: list          # (HyperParams, LearnResult | None, error | None)

    @property
    def failed(self) -> bool:
        return self.result is None


def hyper_search(problem: Problem, settings: LearnSettings, task: str, n_combos: int = 20,
                 rng: np.random.Generator | None = None, target_loss: float | None = None,
                 workers: int | None = None) -> SearchOutcome:
    """Run sampled combinations and keep the lowest final training loss.

    With ``target_loss`` set, runs execute sequentially and stop at the first
    one reaching it; whether the best loss is below ``target_loss`` does not
    change, only the remaining combinations are skipped.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    combos = sample_combos(hyper_grid(task), n_combos, rng)
    jobs = [(problem, settings, hp) for hp in combos]
    workers = worker_count() if workers is None else workers
    runs = []
    if target_loss is None and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_combo, jobs))
    else:
        for job in jobs:
            runs.append(_run_combo(job))
            res = runs[-1][1]
            if target_loss is not None and res is not None and res.final_loss <= target_loss:
                break
    done = [(hp, res) for hp, res, _ in runs if res is not None]
    if not done:
        return SearchOutcome(None, None, runs)
    best_hp, best = min(done, key=lambda pair: pair[1].final_loss)
    return SearchOutcome(best_hp, best, runs)
