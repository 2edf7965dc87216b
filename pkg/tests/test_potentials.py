import numpy as np
import pytest
from hypothesis import given, strategies as st

from sidlab import potentials as P
from sidlab.errors import ConfigurationError, NonFiniteInputError, UsageError


def test_eval_examples():
    assert P.evaluate(P.quadratic(1.0, [0.0]), [2.0]) == pytest.approx(2.0)
    V = P.quadratic(3.0, [0.7])
    assert P.evaluate(V, [0.7]) == 0.0
    assert P.evaluate(P.even_poly({2: 0.5, 4: 0.25}, [0.0]), [1.0]) == pytest.approx(0.75)


def test_gradient_examples():
    np.testing.assert_allclose(P.gradient(P.quadratic(1.0, [0.0, 0.0]), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_allclose(P.gradient(P.even_poly({2: 0.5, 4: 0.25}, [0.0]), [2.0]), [10.0])
    for V in (P.quadratic([1.0, 4.0], [1.0, -2.0]), P.even_poly({2: 1.0, 6: 0.1}, [0.5, 0.5], dim=2)):
        np.testing.assert_array_equal(P.gradient(V, V.minimizer), 0.0)


def test_non_finite_input():
    with pytest.raises(NonFiniteInputError):
        P.evaluate(P.quadratic(1.0, [0.0]), [np.nan])


def test_w_minimizer_pinned_to_zero():
    with pytest.raises(UsageError):
        P.quadratic(1.0, [1.0], role="W")
    with pytest.raises(UsageError):
        P.even_poly({2: 1.0}, [0.5], role="W")


def test_batch_shapes():
    V = P.quadratic([1.0, 2.0], [0.0, 0.0])
    x = np.ones((5, 2))
    assert V.value(x).shape == (5,)
    assert V.gradient(x).shape == (5, 2)
    assert V.hessian(x).shape == (5, 2, 2)


def _unit_ball_points(rng, d, n):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True) * rng.random((n, 1)) ** (1 / d)


@pytest.mark.parametrize("V", [
    P.quadratic([1.0, 4.0], [0.3, -0.2]),
    P.even_poly({2: 0.5, 4: 0.25}, [0.1, 0.2], dim=2),
    P.even_poly({2: 1.0, 4: 0.5, 6: 0.1}, [0.0, 0.0, 0.0], dim=3),
])
def test_gradient_matches_central_differences(V, rng):
    h = 1e-5
    for x in V.minimizer + _unit_ball_points(rng, V.dim, 20):
        g = V.gradient(x)
        fd = np.array([(V.value(x + h * e) - V.value(x - h * e)) / (2 * h) for e in np.eye(V.dim)])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_uniform_convexity(x):
    V = P.even_poly({2: 0.5, 4: 0.25}, [0.0, 0.0], dim=2)
    x = np.array(x)
    lb = V.convexity_lower_bound
    assert V.value(x) - V.value(V.minimizer) >= 0.5 * lb * x @ x - 1e-12


def test_radial_rotation_invariance(rng):
    W = P.radial(lambda r: r**2 / 2 + r**4 / 4, lambda r: r + r**3, dim=3,
                 growth_degree=4, convexity_lower_bound=1.0)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        x = rng.standard_normal(3)
        assert W.value(q @ x) == pytest.approx(W.value(x), abs=1e-12)
    np.testing.assert_array_equal(W.gradient(np.zeros(3)), 0.0)


def test_radial_rejects_nonzero_slope_at_origin():
    with pytest.raises(UsageError):
        P.radial(lambda r: r, lambda r: np.ones_like(r), 1, 2, 0.0)


def test_validate_quadratic_pair():
    V, W = P.quadratic(1.0, [0.0, 0.0]), P.quadratic(1.0, [0.0, 0.0], role="W")
    grid = P.ball_grid([0.0, 0.0], 10.0, 41)
    rep = P.validate_assumptions(V, W, grid)
    assert rep.passed
    # Delta V = d rho and V = rho |x|^2 / 2: the ratio peaks at the smallest non-zero V
    v = V.value(grid)
    assert rep.lyapunov_a == pytest.approx(2.0 / v[v > 0].min(), rel=1e-9)


def test_validate_detects_flat_interaction():
    V = P.quadratic(1.0, [0.0])
    # quartic W is flat at the origin although it declares alpha = 1
    W = P.even_poly({4: 1.0}, role="W", convexity_lower_bound=1.0)
    rep = P.validate_assumptions(V, W, P.ball_grid([0.0], 10.0, 201))
    assert not rep.checks["curvature"].passed
    assert not rep.passed


def test_validate_grid_too_small():
    V, W = P.quadratic(1.0, [0.0]), P.quadratic(1.0, [0.0], role="W")
    with pytest.raises(ConfigurationError):
        P.validate_assumptions(V, W, P.ball_grid([0.0], 5.0, 51))


def test_coercivity_ratio_constant_for_quadratic():
    V = P.quadratic(2.0, [0.0])
    W = P.quadratic(1.0, [0.0], role="W")
    rep = P.validate_assumptions(V, W, P.ball_grid([0.0], 10.0, 201))
    c = rep.checks["coercivity"]
    assert c.passed
    assert c.detail["ratio_first_shell"] == pytest.approx(4.0)
    assert c.detail["ratio_last_shell"] == pytest.approx(4.0)


def test_from_config():
    V = P.from_config({"kind": "even_poly", "coeffs": {"2": 0.5, "4": 0.25}, "center": [0.0]})
    assert V.growth_degree == 4 and V.value(np.array([1.0])) == pytest.approx(0.75)
    with pytest.raises(ConfigurationError):
        P.from_config({"kind": "radial"})
    with pytest.raises(ConfigurationError):
        P.from_config({"kind": "quadratic", "curvature": 1.0, "bogus": 1})
