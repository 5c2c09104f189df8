import numpy as np
import pytest

from invopt.instances import (N_TEST, N_TRAIN, DegenerateHullError, Task, baseline_lp,
                              hull_facets, make_task, task_rng)
from invopt.ipm import IpmSettings, LinearProgram, Status, solve_lp
from invopt.learner import lp_arrays
from invopt.tape import Tape

from oracles import hull_facets_qhull, vertices_2d


@pytest.mark.parametrize("d", [2, 3, 4])
def test_hull_matches_qhull(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        pts = rng.standard_normal((d + 8, d))
        A, b, V = hull_facets(pts)
        A_ref, b_ref = hull_facets_qhull(pts)
        assert len(A) == len(A_ref)
        got = np.unique(np.round(np.hstack([A, b]), 9), axis=0)
        np.testing.assert_allclose(got, np.hstack([A_ref, b_ref]), atol=1e-8)
        np.testing.assert_allclose(np.linalg.norm(A, axis=1), 1.0)
        assert np.all(A @ pts.T <= b + 1e-9)


@pytest.mark.parametrize("d", [2, 3])
def test_hull_order_invariant(d):
    rng = np.random.default_rng(10 + d)
    pts = rng.standard_normal((12, d))
    A, b, _ = hull_facets(pts)
    for _ in range(5):
        A2, b2, _ = hull_facets(pts[rng.permutation(len(pts))])
        np.testing.assert_allclose(A2, A, atol=1e-8)
        np.testing.assert_allclose(b2, b, atol=1e-8)


def test_hull_degenerate_input():
    with pytest.raises(DegenerateHullError):
        hull_facets(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(DegenerateHullError):
        hull_facets(np.zeros((2, 2)))


@pytest.mark.parametrize("d,m", [(2, 4), (2, 8), (2, 16), (3, 10)])
def test_baseline_has_requested_facets_and_is_bounded(d, m):
    base = baseline_lp(d, m, task_rng(0, 0))
    assert base.m == m and base.warning is None
    assert np.all(np.isfinite(base.vertices)) and len(base.vertices) >= d + 1
    rng = np.random.default_rng(1)
    for _ in range(20):
        lp = LinearProgram.from_arrays(Tape(grad_enabled=False), rng.standard_normal(d),
                                       base.A, base.b)
        assert solve_lp(lp).status is not Status.UNBOUNDED


def test_baseline_vertices_match_enumeration():
    base = baseline_lp(2, 8, task_rng(4, 2))
    ref = vertices_2d(base.A, base.b)
    assert len(ref) == len(base.vertices)
    dist = np.min(np.linalg.norm(ref[:, None, :] - base.vertices[None], axis=2), axis=1)
    assert np.max(dist) < 1e-8


def test_generation_is_pure_function_of_seed():
    a = make_task(Task.LEARN_CAB, 2, 8, seed=3, index=1)
    b = make_task(Task.LEARN_CAB, 2, 8, seed=3, index=1)
    c = make_task(Task.LEARN_CAB, 2, 8, seed=3, index=2)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.targets[1].x, b.targets[1].x)
    assert not np.array_equal(a.A, c.A) or a.A.shape != c.A.shape


def test_learn_c_target_is_vertex():
    inst = make_task(Task.LEARN_C, 2, 4, seed=1)
    x = inst.targets[0].x.ravel()
    assert np.min(np.linalg.norm(inst.vertices - x, axis=1)) < 1e-12
    assert inst.model.learn == "c" and inst.w_ini.shape == (2,)


def test_learn_cab_targets_feasibility():
    for i in range(5):
        inst = make_task(Task.LEARN_CAB, 2, 8, seed=0, index=i)
        by_label = {o.label: o.x.ravel() for o in inst.targets}
        assert set(by_label) == {"feasible", "infeasible"}
        assert np.max(inst.A @ by_label["feasible"] - inst.b.ravel()) < 0
        assert np.max(inst.A @ by_label["infeasible"] - inst.b.ravel()) > 0
        assert inst.model.learn == "cab"
        np.testing.assert_allclose(inst.w_ini[:2], inst.c_ini.ravel())


def test_parametric_targets():
    inst = make_task(Task.PARAMETRIC, 2, 8, seed=0)
    assert len(inst.targets) == N_TRAIN and len(inst.test_targets) == N_TEST
    np.testing.assert_allclose(np.diff(inst.u_train), np.diff(inst.u_train)[0])
    lo, hi = inst.u_range
    assert np.all((inst.u_test >= lo) & (inst.u_test <= hi))
    assert inst.w_tru[0] == inst.w_tru[2] == inst.w_tru[4] == 0
    assert np.max(np.abs(inst.w_ini - inst.w_tru)) <= 0.2
    # Targets are the true PLP's optima.
    for obs in inst.targets[::5]:
        c, A, b = lp_arrays(inst.model, inst.w_tru, obs.u)
        res = solve_lp(LinearProgram.from_arrays(Tape(grad_enabled=False), c, A, b))
        np.testing.assert_allclose(res.x.value, obs.x, atol=1e-8)
    # At u = 0 the true region is the baseline.
    _, A0, b0 = lp_arrays(inst.model, inst.w_tru, 0.0)
    np.testing.assert_allclose(A0, inst.A)
    np.testing.assert_allclose(b0, inst.b)


def test_trig_demo_instance():
    inst = make_task(Task.TRIG_DEMO, 2, 3, seed=0)
    assert [o.u for o in inst.targets] == [-1.5, -0.5, 0.5, 1.5]
    np.testing.assert_array_equal(inst.w_ini, [0.2, 0.4])


def test_unknown_task():
    with pytest.raises(ValueError):
        make_task("learn-x", 2, 4, 0)


def test_too_few_facets_rejected():
    with pytest.raises(ValueError):
        baseline_lp(2, 2, task_rng(0))
