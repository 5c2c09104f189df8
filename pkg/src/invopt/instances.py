"""Random experiment instances: hull polytopes, targets and parametric PLPs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .ipm import IpmSettings, LinearProgram, solve_lp
from .models import ParametricModel, direct_model, instantiate, linear_shift_model
from .tape import Tape

__all__ = [
    "DegenerateHullError",
    "Observation",
    "BaselineInstance",
    "TaskInstance",
    "Task",
    "hull_facets",
    "baseline_lp",
    "make_learn_c",
    "make_learn_cab",
    "make_parametric",
    "make_task",
    "task_rng",
    "EXPERIMENT_SIZES",
    "SAFE_RANGE_STEPS",
]

log = logging.getLogger(__name__)

EXPERIMENT_SIZES = ((2, 4), (2, 8), (2, 16), (10, 20), (10, 36), (10, 80))
SAFE_RANGE_STEPS = (0.1, 0.2, 0.4, 0.8, 1.0)
N_TRAIN = N_TEST = 20
HULL_TOL = 1e-9
_MAX_SIZE_ATTEMPTS = 50
_MAX_INI_ATTEMPTS = 50
_SUBSET_CHUNK = 20000


class DegenerateHullError(ValueError):
    """Points are not full-dimensional (affinely dependent)."""


class Task:
    LEARN_C = "learn-c"
    LEARN_CAB = "learn-cab"
    PARAMETRIC = "parametric"
    TRIG_DEMO = "trig-demo"
    ALL = (LEARN_C, LEARN_CAB, PARAMETRIC, TRIG_DEMO)


@dataclass
class Observation:
    u: float
    x: np.ndarray
    label: str = ""


@dataclass
class BaselineInstance:
    d: int
    m: int
    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray
    seed: object = None
    warning: str | None = None


@dataclass
class TaskInstance:
    task: str
    d: int
    m: int
    A: np.ndarray
    b: np.ndarray
    model: ParametricModel
    w_ini: np.ndarray
    targets: list
    c_ini: np.ndarray | None = None
    c_tru: np.ndarray | None = None
    w_tru: np.ndarray | None = None
    u_range: tuple | None = None
    u_train: np.ndarray | None = None
    u_test: np.ndarray | None = None
    test_targets: list = field(default_factory=list)
    vertices: np.ndarray | None = None
    seed: object = None
    warnings: list = field(default_factory=list)


def task_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream per (seed, instance index)."""
    return np.random.default_rng([int(seed), int(index)])


def _hull_candidates_2d(points):
    """Indices of strict 2-D hull vertices (monotone chain)."""
    order = np.lexsort((points[:, 1], points[:, 0]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def chain(idx):
        out = []
        for i in idx:
            while len(out) >= 2 and cross(points[out[-2]], points[out[-1]], points[i]) <= 0:
                out.pop()
            out.append(i)
        return out

    lower, upper = chain(order), chain(order[::-1])
    return np.array(sorted(set(lower[:-1] + upper[:-1])))


def _discard_interior_2d(points, n_dirs: int = 32):
    """Indices of points not strictly inside the polygon of directional extremes."""
    angles = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    ext = np.argmax(points @ dirs.T, axis=0)
    ext = ext[np.r_[True, ext[1:] != ext[:-1]]]
    if len(ext) > 1 and ext[0] == ext[-1]:
        ext = ext[:-1]
    if len(ext) < 3:
        return np.arange(len(points))
    poly = points[ext]
    edge = np.roll(poly, -1, axis=0) - poly
    rel = points[:, None, :] - poly[None, :, :]
    cross = edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0]
    return np.flatnonzero(~np.all(cross > 1e-12, axis=1))


def hull_facets(points, tol: float = HULL_TOL):
    """Facets ``(A, b)`` with unit outward normals and the hull vertices.

    Every ``d``-subset of points spanning a hyperplane with all points on
    one side yields a facet; duplicates are merged.  Vertices are points
    lying on at least ``d`` facets.
    """
    P = np.asarray(points, float)
    k, d = P.shape
    if k < d + 1:
        raise DegenerateHullError(f"{k} points cannot span R^{d}")
    if d == 2:
        # Points off the hull cannot define or violate a facet.
        keep = _discard_interior_2d(P)
        P = P[keep[_hull_candidates_2d(P[keep])]]
    if len(P) < d + 1 or np.linalg.matrix_rank(P[1:] - P[0], tol=1e-10) < d:
        raise DegenerateHullError(f"{k} points do not span R^{d}")
    cand = np.arange(len(P))

    normals, offsets = [], []
    subsets = combinations(cand.tolist(), d)
    while True:
        chunk = np.array(list(_take(subsets, _SUBSET_CHUNK)), dtype=int)
        if chunk.size == 0:
            break
        Q = P[chunk]                                        # (n, d, d)
        M = np.concatenate([Q, -np.ones((len(chunk), d, 1))], axis=2)
        _, sv, vt = np.linalg.svd(M)
        spans = sv[:, d - 1] > 1e-10 * np.maximum(sv[:, 0], 1.0)
        nv = vt[:, -1, :]
        a, beta = nv[:, :d], nv[:, d]
        scale = np.linalg.norm(a, axis=1)
        ok = spans & (scale > 1e-12)
        a = a[ok] / scale[ok, None]
        beta = beta[ok] / scale[ok]
        side = P @ a.T - beta                               # (k, n)
        below = np.all(side <= tol, axis=0)
        above = np.all(side >= -tol, axis=0)
        sign = np.where(below, 1.0, -1.0)
        keep = below | above
        normals.append(a[keep] * sign[keep, None])
        offsets.append(beta[keep] * sign[keep])

    A = np.concatenate(normals) if normals else np.zeros((0, d))
    b = np.concatenate(offsets) if offsets else np.zeros(0)
    A, b = _dedupe(A, b)
    on = np.abs(P @ A.T - b) <= 1e-7
    vertices = P[on.sum(axis=1) >= d]
    return A, b.reshape(-1, 1), vertices


def _take(it, n):
    for _, item in zip(range(n), it):
        yield item


def _dedupe(A, b, tol=1e-8):
    keep_A, keep_b = [], []
    for a, beta in zip(A, b):
        if any(abs(beta - kb) <= tol and np.max(np.abs(a - ka)) <= tol
               for ka, kb in zip(keep_A, keep_b)):
            continue
        keep_A.append(a)
        keep_b.append(beta)
    if not keep_A:
        return np.zeros((0, A.shape[1])), np.zeros(0)
    order = np.lexsort(np.column_stack([keep_b, keep_A])[:, ::-1].T)
    return np.array(keep_A)[order], np.array(keep_b)[order]


def baseline_lp(d: int, m: int, rng: np.random.Generator, seed=None) -> BaselineInstance:
    """Hull of Gaussian points with (ideally) exactly ``m`` facets.

    The number of sampled points is searched: grown while the facet count
    is too small, bisected once it overshoots.  After the attempt budget
    the closest facet count wins and a warning is recorded.
    """
    if d < 1 or m < d + 1:
        raise ValueError(f"a bounded polytope in R^{d} needs at least {d + 1} facets, got m={m}")
    k = max(d + 1, m if d == 2 else d + 1)
    lo, hi = d + 1, None
    best = None
    for _ in range(_MAX_SIZE_ATTEMPTS):
        pts = rng.standard_normal((k, d))
        try:
            A, b, V = hull_facets(pts)
        except DegenerateHullError:
            continue
        got = len(A)
        if best is None or abs(got - m) < abs(best[0] - m):
            best = (got, A, b, V)
        if got == m:
            break
        # Facet counts are noisy in k; a contradicted bound is dropped.
        if got < m:
            lo = k
            if hi is not None and hi <= lo:
                hi = None
        else:
            hi = k
            if lo >= hi:
                lo = d + 1
        if hi is None:
            k = 2 * k if d == 2 else k + 1
        elif d == 2:
            k = int(round(math.sqrt(lo * hi)))
        else:
            k = (lo + hi) // 2
    got, A, b, V = best
    warning = None
    if got != m:
        warning = f"requested m={m} facets, nearest achieved m={got}"
        log.warning(warning)
    return BaselineInstance(d, got, A, b, V, seed=seed, warning=warning)


def make_learn_c(baseline: BaselineInstance, rng: np.random.Generator) -> TaskInstance:
    """Target is a uniformly chosen vertex; the initial cost is standard normal."""
    d = baseline.d
    x_tru = baseline.vertices[rng.integers(len(baseline.vertices))].reshape(d, 1)
    c_ini = rng.standard_normal((d, 1))
    model = direct_model(d, baseline.m, learn="c", A=baseline.A, b=baseline.b)
    return TaskInstance(Task.LEARN_C, d, baseline.m, baseline.A, baseline.b, model,
                        w_ini=c_ini.ravel(), targets=[Observation(0.0, x_tru, "vertex")],
                        c_ini=c_ini, vertices=baseline.vertices, seed=baseline.seed)


def make_learn_cab(baseline: BaselineInstance, rng: np.random.Generator) -> TaskInstance:
    """One strictly feasible and one infeasible target near the optimum of a random cost."""
    d, A, b, V = baseline.d, baseline.A, baseline.b, baseline.vertices
    c = rng.standard_normal((d, 1))
    x_star = V[np.argmin(V @ c)].reshape(d, 1)
    for _ in range(10000):
        infeasible = x_star + rng.uniform(-0.2, 0.2, (d, 1))
        if np.max(A @ infeasible - b) > 0:
            break
    else:
        raise RuntimeError("could not draw an infeasible target")
    weights = rng.dirichlet(np.ones(len(V)))
    feasible = 0.9 * x_star + 0.1 * (weights @ V).reshape(d, 1)
    if not np.max(A @ feasible - b) < 0:
        raise RuntimeError("feasible target is not strictly interior")
    c_ini = c + rng.uniform(-0.2, 0.2, (d, 1))
    model = direct_model(d, baseline.m, learn="cab")
    return TaskInstance(Task.LEARN_CAB, d, baseline.m, A, b, model,
                        w_ini=model.pack(c_ini, A, b),
                        targets=[Observation(0.0, feasible, "feasible"),
                                 Observation(0.0, infeasible, "infeasible")],
                        c_ini=c_ini, c_tru=c, vertices=V, seed=baseline.seed)


def _solve_at(model, w, u, eps):
    tape = Tape(grad_enabled=False)
    lp, _ = instantiate(model, u, tape, w)
    res = solve_lp(lp, IpmSettings(eps=eps))
    return res.x.value.copy() if res.ok else None


def make_parametric(baseline: BaselineInstance, rng: np.random.Generator,
                    target_eps: float = 1e-5) -> TaskInstance:
    """Linear-shift PLP around the baseline with a safe feature range and targets."""
    d, m = baseline.d, baseline.m
    c_bar = rng.standard_normal((d, 1))
    masks = rng.integers(0, d, size=m)
    model = linear_shift_model(c_bar, baseline.A, baseline.b, masks)
    if _solve_at(model, np.zeros(6), 0.0, target_eps) is None:
        raise DegenerateHullError("baseline LP is not solvable")

    for _ in range(20):
        w_tru = np.zeros(6)
        w_tru[[1, 3, 5]] = rng.normal(0.0, 0.2, 3)
        radius = 0.0
        for r in SAFE_RANGE_STEPS:
            if _solve_at(model, w_tru, -r, target_eps) is None or \
                    _solve_at(model, w_tru, r, target_eps) is None:
                break
            radius = r
        while radius > 0:
            u_train = np.linspace(-radius, radius, N_TRAIN)
            u_test = rng.uniform(-radius, radius, N_TEST)
            xs = [_solve_at(model, w_tru, u, target_eps) for u in np.concatenate([u_train, u_test])]
            if all(x is not None for x in xs):
                break
            smaller = [r for r in SAFE_RANGE_STEPS if r < radius]
            radius = smaller[-1] if smaller else 0.0
        if radius > 0:
            break
    else:
        raise RuntimeError("no safe feature range found for any sampled w_tru")

    # Learning needs every training problem solvable at the start.
    warnings = []
    for _ in range(_MAX_INI_ATTEMPTS):
        w_ini = w_tru + rng.uniform(-0.2, 0.2, 6)
        if all(_solve_at(model, w_ini, u, target_eps) is not None for u in u_train):
            break
    else:
        warnings.append("w_ini leaves some training problems unsolvable")
    train = [Observation(float(u), x, "train") for u, x in zip(u_train, xs[:N_TRAIN])]
    test = [Observation(float(u), x, "test") for u, x in zip(u_test, xs[N_TRAIN:])]
    return TaskInstance(Task.PARAMETRIC, d, m, baseline.A, baseline.b, model,
                        w_ini=w_ini, targets=train, c_ini=c_bar, c_tru=c_bar, w_tru=w_tru,
                        u_range=(-radius, radius), u_train=u_train, u_test=u_test,
                        test_targets=test, vertices=baseline.vertices, seed=baseline.seed,
                        warnings=warnings)


def make_trig_demo(target_eps: float = 1e-5) -> TaskInstance:
    from .models import TRIG_DEMO_U, TRIG_DEMO_W_INI, TRIG_DEMO_W_TRUE, trig_demo_model
    model = trig_demo_model()
    w_tru = np.array(TRIG_DEMO_W_TRUE)
    targets = [Observation(u, _solve_at(model, w_tru, u, target_eps), "train") for u in TRIG_DEMO_U]
    t = Tape(grad_enabled=False)
    lp, _ = instantiate(model, 0.0, t, w_tru)
    return TaskInstance(Task.TRIG_DEMO, 2, 3, lp.A.value.copy(), lp.b.value.copy(), model,
                        w_ini=np.array(TRIG_DEMO_W_INI), targets=targets, w_tru=w_tru,
                        u_range=(min(TRIG_DEMO_U), max(TRIG_DEMO_U)),
                        u_train=np.array(TRIG_DEMO_U), u_test=np.array([]))


def make_task(task: str, d: int, m: int, seed: int, index: int = 0) -> TaskInstance:
    """Deterministic instance for ``(task, d, m, seed, index)``."""
    if task == Task.TRIG_DEMO:
        return make_trig_demo()
    rng = task_rng(seed, index)
    base = baseline_lp(d, m, rng, seed=[int(seed), int(index)])
    builders = {Task.LEARN_C: make_learn_c, Task.LEARN_CAB: make_learn_cab,
                Task.PARAMETRIC: make_parametric}
    if task not in builders:
        raise ValueError(f"unknown task {task!r}; choose from {Task.ALL}")
    inst = builders[task](base, rng)
    if base.warning:
        inst.warnings.append(base.warning)
    inst.seed = [int(seed), int(index)]
    return inst
