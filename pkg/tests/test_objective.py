import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eeopt.errors import NumericError, ValidationError
from eeopt.objective import (
    LandscapeSpec,
    Objective,
    Quadratic,
    Saddle,
    TwoWell,
    builtin_landscape,
    fd_grad,
    fd_hvp,
    rayleigh,
    robust_directions,
    robust_objective_estimate,
)


def landscape(name, **params):
    return builtin_landscape(LandscapeSpec(name, params, seed=3))


BUILTINS = [
    ("quadratic", {"A": [[2.0, 0.5], [0.5, 1.0]], "b": [0.1, -0.2]}),
    ("saddle", {}),
    ("cubic", {"dim": 3}),
    ("two_well", {}),
    ("toy_linear", {}),
]


class Constant(Objective):
    dim = 3

    def loss(self, w, batch=None):
        return 4.0

    def grad(self, w, batch=None):
        return np.zeros(3)


@pytest.mark.parametrize("name,params", BUILTINS)
def test_fd_grad_matches_analytic_at_seeded_points(name, params):
    obj = landscape(name, **params)
    pts = np.random.default_rng(0).uniform(-1.5, 1.5, (20, obj.dim))
    for w in pts:
        g = obj.grad(w)
        assert np.linalg.norm(fd_grad(obj, w, h=1e-5) - g) / (1 + np.linalg.norm(g)) <= 1e-5


@pytest.mark.parametrize("name,params", BUILTINS)
def test_analytic_hessian_matches_fd_hvp(name, params):
    obj = landscape(name, **params)
    gen = np.random.default_rng(1)
    w, v = gen.uniform(-1, 1, obj.dim), gen.standard_normal(obj.dim)
    H = obj.hessian(w)
    np.testing.assert_allclose(fd_hvp(obj, w, v, alpha=1e-5), H @ v, rtol=1e-5, atol=1e-5)


def test_fd_grad_quadratic_and_constant():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    obj = Quadratic(A)
    w = np.array([0.3, -0.7])
    np.testing.assert_allclose(fd_grad(obj, w), A @ w, atol=1e-9)
    np.testing.assert_array_equal(fd_grad(Constant(), np.ones(3)), np.zeros(3))


def test_fd_grad_names_bad_coordinate():
    class Blowup(Objective):
        dim = 2

        def loss(self, w, batch=None):
            return np.inf if w[1] > 0.5 else 0.0

    with pytest.raises(NumericError, match="coordinate 1"):
        fd_grad(Blowup(), np.array([0.0, 0.5]), h=0.1)
    with pytest.raises(ValueError):
        fd_grad(Constant(), np.zeros(3), h=0.0)


def test_toy_linear_gradient_against_least_squares_formula():
    obj = landscape("toy_linear", n=32, lookback=4, horizon=2, sigma=0.1)
    W = obj.W_toy
    g = obj.grad(W.reshape(-1))
    R = obj.X @ W - obj.Y
    np.testing.assert_allclose(g, (2 * obj.X.T @ R / 32).reshape(-1), rtol=1e-14)
    np.testing.assert_allclose(fd_grad(obj, W.reshape(-1)), g, atol=1e-8)
    # at the generator the gradient only sees the noise: 2 X^T eps / n
    eps = obj.Y - obj.X @ W
    bound = 2 * np.linalg.norm(obj.X, 2) * np.linalg.norm(eps) / 32
    assert np.linalg.norm(g) <= bound


def test_toy_linear_noiseless_minimum():
    obj = landscape("toy_linear", sigma=0.0)
    w = obj.W_toy.reshape(-1)
    assert obj.loss(w) == 0.0
    assert np.linalg.norm(obj.grad(w)) <= 1e-10


def test_fd_hvp_exact_on_quadratic():
    A = np.array([[1.0, 2.0, 0.0], [2.0, -1.0, 0.5], [0.0, 0.5, 3.0]])
    obj = Quadratic(A)
    gen = np.random.default_rng(2)
    for alpha in (1e-1, 1e-3, 1.0):
        w, v = gen.standard_normal(3), gen.standard_normal(3)
        np.testing.assert_allclose(fd_hvp(obj, w, v, alpha), A @ v, rtol=1e-10)


def test_fd_hvp_lemma_bound_on_cubic():
    # error is within (rho_H / 6) alpha^2 ||v||^3; for this cubic it is zero up to rounding
    obj = landscape("cubic", dim=3)
    w, v = np.array([0.2, -0.4, 0.9]), np.array([1.0, 2.0, -1.0])
    for alpha in (0.1, 0.01):
        err = np.linalg.norm(fd_hvp(obj, w, v, alpha) - obj.hessian(w) @ v)
        assert err <= 6.0 / 6.0 * alpha**2 * np.linalg.norm(v) ** 3


def test_fd_hvp_rejects_tiny_direction():
    with pytest.raises(ValueError):
        fd_hvp(Saddle(), np.zeros(2), np.array([1e-13, 0.0]))


def test_rayleigh_examples():
    obj = Quadratic(np.diag([1.0, -1.0]))
    w = np.array([0.4, 0.1])
    assert rayleigh(obj, w, np.array([0.0, 1.0])) == pytest.approx(-1.0, rel=1e-10)
    assert rayleigh(obj, w, np.array([1.0, 0.0])) == pytest.approx(1.0, rel=1e-10)
    assert rayleigh(obj, w, np.array([1.0, 1.0]) / np.sqrt(2)) == pytest.approx(0.0, abs=1e-10)


def test_builtin_examples():
    q = landscape("quadratic", A=np.eye(2))
    w = np.array([0.3, -2.0])
    np.testing.assert_array_equal(q.grad(w), w)
    assert q.loss(np.zeros(2)) == 0.0
    s = landscape("saddle")
    np.testing.assert_allclose(s.grad(np.array([1e-3, 0.0])), [2e-3, 0.0])
    assert np.linalg.eigvalsh(s.hessian(np.zeros(2))).min() == -2.0
    assert landscape("cubic").hessian_lipschitz == 6.0
    assert q.hessian_lipschitz == 0.0


def test_two_well_shape():
    tw = TwoWell()
    H_sharp = tw.hessian(np.array([1.0]))[0, 0]
    H_flat = tw.hessian(np.array([-1.0]))[0, 0]
    assert tw.loss(np.array([1.0])) < tw.loss(np.array([-1.0]))
    assert H_sharp > 10 * H_flat > 0
    assert tw.in_flat_well(-0.2) and not tw.in_flat_well(0.2)


def test_builtin_validation():
    with pytest.raises(ValidationError):
        landscape("quadratic", A=[[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        landscape("toy_linear", sigma=-1.0)
    with pytest.raises(ValidationError):
        landscape("saddle", bogus=1.0)
    with pytest.raises(ValidationError):
        LandscapeSpec("rosenbrock")


def test_toy_linear_batches_are_seeded():
    obj = landscape("toy_linear", n=40, batch_size=8)
    b1, b2 = obj.sample_batch(5, 10), obj.sample_batch(5, 10)
    assert np.array_equal(b1, b2) and len(b1) == 8
    assert not np.array_equal(b1, obj.sample_batch(5, 11))


def test_robust_estimate_examples():
    obj = Quadratic(np.eye(3))
    w = np.array([0.5, -0.2, 0.1])
    assert robust_objective_estimate(obj, w, 0.0, 16, seed=0) == obj.loss(w)
    # max of 1/2 ||d||^2 over the unit sphere is 1/2, hit exactly by the axis directions
    assert robust_objective_estimate(obj, np.zeros(3), 1.0, 64, seed=0) == pytest.approx(0.5, rel=1e-12)


def test_robust_estimate_first_order_expansion():
    obj = Quadratic(np.diag([1.0, 10.0]))
    w = np.array([0.7, -0.3])
    gnorm = np.linalg.norm(obj.grad(w))
    for rho in (1e-2, 1e-3):
        gap = robust_objective_estimate(obj, w, rho, 256, seed=1) - obj.loss(w)
        assert gap / (rho * gnorm) == pytest.approx(1.0, abs=20 * rho)


def test_robust_directions_layout():
    obj = Quadratic(np.diag([1.0, 2.0]))
    w = np.array([1.0, 1.0])
    D = robust_directions(obj, w, 10, seed=0)
    g = obj.grad(w) / np.linalg.norm(obj.grad(w))
    assert D.shape == (10, 2)
    np.testing.assert_allclose(D[0], g)
    np.testing.assert_allclose(D[1], -g)
    np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=2, max_size=2),
    st.floats(0, 0.5),
    st.floats(0, 0.5),
    st.integers(0, 1000),
)
def test_robust_estimate_monotone_in_rho(w, r1, r2, seed):
    obj = Quadratic(np.diag([1.0, 10.0]))
    r1, r2 = sorted((r1, r2))
    w = np.array(w)
    lo = robust_objective_estimate(obj, w, r1, 32, seed)
    hi = robust_objective_estimate(obj, w, r2, 32, seed)
    assert obj.loss(w) <= lo <= hi + 1e-12
