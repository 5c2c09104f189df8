import math

import numpy as np
import pytest

from invopt.instances import baseline_lp
from invopt.ipm import (IpmSettings, LinearProgram, Status, barrier_objective, expected_stages,
                        solve_arrays, solve_batch, solve_lp, truncation_for_newton_steps)
from invopt.losses import se
from invopt.tape import Tape

from oracles import lp_opt_scipy, lp_opt_vertex

BOX = (np.vstack([np.eye(2), -np.eye(2)]), np.array([1.0, 1.0, 0.0, 0.0]))


def _solve(c, A, b, settings=None, grad=False, trace=None):
    tape = Tape(grad_enabled=grad)
    lp = LinearProgram.from_arrays(tape, c, A, b, requires_grad=grad)
    return lp, solve_lp(lp, settings or IpmSettings(), trace)


def test_unit_box_reaches_corner():
    _, res = _solve([1.0, 1.0], *BOX)
    assert res.ok
    assert np.all(res.x.value > 0) and np.all(res.x.value < 1e-5)


def test_stage_count_matches_certificate_rule():
    s = IpmSettings(t0=1.0, mu=10.0, eps=1e-5)
    _, res = _solve([1.0, 1.0], *BOX, s)
    assert res.stages == expected_stages(4, s) == 7
    assert 4 / res.t_final <= s.eps


def test_infeasible_status():
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([-1.0, -1.0, 1.0, 1.0])       # x <= -1 and x >= 1
    _, res = _solve([1.0, 0.0], A, b)
    assert res.status is Status.INFEASIBLE and res.x is None


def test_unbounded_status():
    A = np.array([[-1.0, 0.0], [0.0, -1.0]])
    _, res = _solve([-1.0, -1.0], A, np.zeros(2))
    assert res.status is Status.UNBOUNDED


def test_start_outside_region_uses_phase_one():
    A = np.vstack([np.eye(2), -np.eye(2)])
    b = np.array([6.0, 6.0, -4.0, -4.0])         # box [4, 6]^2 excludes the origin
    _, res = _solve([1.0, 2.0], A, b)
    assert res.ok
    np.testing.assert_allclose(res.x.value.ravel(), [4.0, 4.0], atol=1e-4)


@pytest.mark.parametrize("m", [4, 8, 16])
def test_matches_vertex_oracle(m):
    rng = np.random.default_rng(m)
    for i in range(8):
        base = baseline_lp(2, m, np.random.default_rng([m, i]))
        c = rng.standard_normal(2)
        s = IpmSettings()
        _, res = _solve(c, base.A, base.b, s)
        opt, _ = lp_opt_vertex(c, base.A, base.b)
        assert res.ok
        val = float(c @ res.x.value.ravel())
        assert 0 <= val - opt + 1e-12 <= s.eps * (1 + abs(opt))
        assert lp_opt_scipy(c, base.A, base.b).fun == pytest.approx(opt, abs=1e-7)


def test_iterates_strictly_feasible_and_objective_monotone():
    base = baseline_lp(2, 8, np.random.default_rng(3))
    c = np.array([0.4, -1.1])
    _, res = _solve(c, base.A, base.b, IpmSettings(mu=5.0))
    centers = np.hstack(res.centers)
    assert np.max(base.A @ centers - base.b) < 0
    objs = c @ centers
    assert np.all(np.diff(objs) <= 1e-8)


def test_newton_trace_is_feasible():
    base = baseline_lp(2, 4, np.random.default_rng(8))
    trace = []
    _solve([1.0, 0.3], base.A, base.b, trace=trace)
    assert trace and all(math.isfinite(f) for f in trace)


def test_barrier_objective_infinite_outside():
    A, b = BOX
    assert barrier_objective(np.array([[2.0], [0.5]]), 1.0, np.ones((2, 1)), A,
                             b.reshape(-1, 1)) == math.inf


def test_settings_validation():
    with pytest.raises(ValueError):
        IpmSettings(mu=1.0)
    with pytest.raises(ValueError):
        IpmSettings(eps=0.0)


def _nondegenerate_instance(rng, m=6):
    while True:
        base = baseline_lp(2, m, rng)
        c = rng.standard_normal(2)
        vals = np.sort(base.vertices @ c)
        if len(vals) > 1 and vals[1] - vals[0] > 1e-3:
            return c, base.A, base.b


def test_gradient_of_se_through_solver_matches_fd():
    rng = np.random.default_rng(11)
    s = IpmSettings(eps=0.1)
    for _ in range(5):
        c, A, b = _nondegenerate_instance(rng)
        target = rng.standard_normal(2) * 0.3
        lp, res = _solve(c, A, b, s, grad=True)
        g = lp.tape.backward(se(res.x, target))

        def f(cv):
            _, r = _solve(cv, A, b, s)
            return float(np.sum((r.x.value.ravel() - target) ** 2))

        h = 1e-6
        fd = np.array([(f(c + h * e) - f(c - h * e)) / (2 * h) for e in np.eye(2)])
        auto = g[lp.c].ravel()
        assert np.max(np.abs(auto - fd)) <= 1e-3 * max(np.max(np.abs(fd)), 1e-8)


def test_truncated_gradient_close_to_full():
    rng = np.random.default_rng(21)
    s = IpmSettings(eps=0.1)
    for _ in range(5):
        c, A, b = _nondegenerate_instance(rng)
        target = rng.standard_normal(2) * 0.3
        grads = []
        for k in (None, 10):
            lp, res = _solve(c, A, b, s, grad=True)
            if k:
                lp.tape.truncation_depth = truncation_for_newton_steps(res, k, lp.tape)
            grads.append(lp.tape.backward(se(res.x, target))[lp.c].ravel())
        full, trunc = grads
        assert np.linalg.norm(trunc - full) <= 0.05 * np.linalg.norm(full) + 1e-12


def _mixed_cases():
    rng = np.random.default_rng(11)
    base = baseline_lp(2, 8, np.random.default_rng(3))
    A0, b0 = base.A, base.b.reshape(-1, 1)
    cases = []
    for _ in range(12):
        cases.append((rng.standard_normal((2, 1)), A0 + 0.2 * rng.standard_normal(A0.shape),
                      b0 + 0.3 * rng.standard_normal(b0.shape)))
    # An empty region and an unbounded direction among the ordinary ones.
    cases.append((np.ones((2, 1)), A0, b0 - 10.0))
    A_open = np.column_stack([A0[:, 0], -np.abs(A0[:, 1])])    # every row admits x2 -> +inf
    cases.append((np.array([[0.0], [-1.0]]), A_open, b0))
    return cases


@pytest.mark.parametrize("eps", [0.1, 1e-5])
def test_array_paths_agree_with_tape_solver(eps):
    settings = IpmSettings(mu=2.0, eps=eps)
    cases = _mixed_cases()
    status, xs = solve_batch(*(np.stack(v) for v in zip(*cases)), settings)
    seen = set()
    for (c, A, b), s_batch, x_batch in zip(cases, status, xs):
        _, ref = _solve(c, A, b, settings)
        s_plain, x_plain = solve_arrays(c, A, b, settings)
        assert s_batch is s_plain is ref.status
        seen.add(ref.status)
        if ref.ok:
            np.testing.assert_allclose(x_plain, ref.x.value, rtol=0, atol=1e-12)
            np.testing.assert_allclose(x_batch, ref.x.value, rtol=0, atol=1e-12)
        else:
            assert x_plain is None and np.all(np.isnan(x_batch))
    assert {Status.OPTIMAL, Status.INFEASIBLE, Status.UNBOUNDED} <= seen
