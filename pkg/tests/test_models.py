import numpy as np
import pytest

from invopt.ipm import IpmSettings, solve_lp
from invopt.losses import mse, se
from invopt.models import (TRIG_DEMO_U, TRIG_DEMO_W_INI, TRIG_DEMO_W_TRUE, Family, direct_model,
                           instantiate, linear_shift_model, pullback, trig_demo_model)
from invopt.tape import Tape

rng = np.random.default_rng(3)


def _values(model, u, w):
    lp, _ = instantiate(model, u, Tape(grad_enabled=False), w)
    return lp.c.value, lp.A.value, lp.b.value


def _shift_model(d=2, m=5):
    A = rng.standard_normal((m, d))
    return linear_shift_model(rng.standard_normal(d), A, np.ones(m), rng.integers(0, d, m))


def test_trig_demo_structure():
    w = np.array([0.7, -0.3])
    for u in (-1.0, 0.0, 2.0):
        c, A, b = _values(trig_demo_model(), u, w)
        theta = w[0] + w[1] * u
        np.testing.assert_allclose(c.ravel(), [np.cos(theta), np.sin(theta)])
        np.testing.assert_allclose(A, [[-1, 0], [0, -1], [w[0], 1 + u * w[1] / 3]])
        np.testing.assert_allclose(b.ravel(), [0.2 * w[0] * u, -0.2 * w[1] * u, w[0] + 0.1 * u])


def test_direct_pack_roundtrip():
    d, m = 2, 3
    model = direct_model(d, m, "cab")
    c, A, b = rng.standard_normal(d), rng.standard_normal((m, d)), rng.standard_normal(m)
    cv, Av, bv = _values(model, 0.0, model.pack(c, A, b))
    np.testing.assert_array_equal(cv.ravel(), c)
    np.testing.assert_array_equal(Av, A)
    np.testing.assert_array_equal(bv.ravel(), b)
    assert model.n_weights == d + m * d + m


def test_direct_learn_c_keeps_constraints():
    A, b = rng.standard_normal((3, 2)), np.ones(3)
    model = direct_model(2, 3, "c", A, b)
    _, Av, bv = _values(model, 0.0, [1.0, 2.0])
    np.testing.assert_array_equal(Av, A)
    with pytest.raises(ValueError):
        direct_model(2, 3, "c")


def test_linear_shift_affine_in_u():
    model = _shift_model()
    w = rng.standard_normal(6)
    x = rng.standard_normal((2, 1))
    for _ in range(10):
        u1, u2 = rng.uniform(-1, 1, 2)
        lam = rng.uniform()
        um = lam * u1 + (1 - lam) * u2
        slack = lambda u: (lambda c, A, b: b - A @ x)(*_values(model, u, w))
        np.testing.assert_allclose(slack(um), lam * slack(u1) + (1 - lam) * slack(u2),
                                   atol=1e-12)


def test_linear_shift_masks_one_entry_per_row():
    model = _shift_model(d=3, m=4)
    w = np.array([0, 0, 1.0, 0, 0, 0])
    _, A, _ = _values(model, 0.0, w)
    diff = A - model.base_A
    assert np.all((diff != 0).sum(axis=1) == 1)
    assert [int(np.flatnonzero(r)[0]) for r in diff] == list(model.masks)


def test_instantiate_deterministic_and_pure():
    model = _shift_model()
    w = rng.standard_normal(6)
    first = _values(model, 0.3, w)
    second = _values(model, 0.3, w)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_wrong_weight_count():
    with pytest.raises(ValueError):
        instantiate(trig_demo_model(), 0.0, Tape(), [1.0, 2.0, 3.0])


def test_pullback_matches_single_tape_gradient():
    from invopt.instances import baseline_lp
    base = baseline_lp(2, 6, np.random.default_rng(4))
    model = linear_shift_model([0.3, -1.0], base.A, base.b, rng.integers(0, 2, base.m))
    w = rng.standard_normal(6) * 0.05
    x_tru = np.array([0.1, -0.2])
    s = IpmSettings(eps=0.1)
    tape = Tape()
    lp, wv = instantiate(model, 0.5, tape, w)
    res = solve_lp(lp, s)
    assert res.ok
    g_single = tape.backward(se(res.x, x_tru))[wv]

    from invopt.learner import lp_arrays
    from invopt.ipm import LinearProgram
    c, A, b = lp_arrays(model, w, 0.5)
    t2 = Tape()
    lp2 = LinearProgram.from_arrays(t2, c, A, b, requires_grad=True)
    res2 = solve_lp(lp2, s)
    g = t2.backward(se(res2.x, x_tru))
    g_pull = pullback(model, 0.5, w, g[lp2.c], g[lp2.A], g[lp2.b])
    np.testing.assert_allclose(g_pull, g_single.ravel(), rtol=1e-8, atol=1e-12)


def test_trig_demo_initial_mse():
    model = trig_demo_model()
    targets = {}
    for u in TRIG_DEMO_U:
        t = Tape(grad_enabled=False)
        lp, _ = instantiate(model, u, t, TRIG_DEMO_W_TRUE)
        targets[u] = solve_lp(lp).x.value
    t = Tape(grad_enabled=False)
    losses = []
    for u in TRIG_DEMO_U:
        lp, _ = instantiate(model, u, t, TRIG_DEMO_W_INI)
        losses.append(se(solve_lp(lp).x, targets[u]))
    assert mse(losses).item() == pytest.approx(0.45, abs=0.02)


def test_alpha_vector_groups():
    model = _shift_model()
    np.testing.assert_array_equal(model.alpha_vector(10.0, 1.0), [10, 10, 1, 1, 1, 1])
    assert model.family is Family.LINEAR_SHIFT
