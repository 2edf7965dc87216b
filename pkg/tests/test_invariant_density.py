import numpy as np
import pytest

from sidlab import potentials as P
from sidlab.errors import ConfigurationError, GridCoverageError, NonConvergenceError, UsageError
from sidlab.invariant_density import (FixedPointConfig, apply_pi, density_distance, grid_density,
                                      solve_fixed_point)


def gaussian(mean, std):
    return lambda x: np.exp(-0.5 * ((x - mean) / std) ** 2)


def test_apply_pi_plain_gibbs():
    V = P.quadratic(1.0, [0.0])
    out = apply_pi(grid_density(-6, 6, 2001), V, None, 1.0)
    assert out.variance() == pytest.approx(0.5, abs=1e-6)
    assert out.integral() == pytest.approx(1.0, abs=1e-10)
    assert np.all(out.values[1:-1] > 0)


def test_apply_pi_near_dirac_input():
    V = P.quadratic(1.0, [0.0])
    W = P.quadratic(1.0, [0.0], role="W")
    spike = grid_density(-6, 6, 2001, gaussian(0.0, 0.02))
    out = apply_pi(spike, V, W, 1.0)
    # exponent ~ V(x) + W(x): Gaussian of variance sigma^2 / (2 * 2)
    assert out.variance() == pytest.approx(0.25, rel=2e-3)


def test_apply_pi_symmetry():
    V = P.even_poly({2: 0.5, 4: 0.1}, [0.5])
    W = P.even_poly({2: 0.5, 4: 0.25}, role="W")
    d = grid_density(-5.5, 6.5, 1201, gaussian(0.5, 0.7))
    out = apply_pi(d, V, W, 0.8).values
    assert np.max(np.abs(out - out[::-1])) <= 1e-12 * out.max()


def test_grid_coverage_error():
    V = P.quadratic(1.0, [10.0])
    with pytest.raises(GridCoverageError):
        apply_pi(grid_density(-1, 1, 101), V, None, 0.1)


@pytest.mark.parametrize("sigma,var", [(1.0, 0.25), (0.5, 0.0625)])
def test_fixed_point_quadratic(sigma, var):
    V = P.quadratic(1.0, [0.0])
    W = P.quadratic(1.0, [0.0], role="W")
    cfg = FixedPointConfig(sigma, -6, 6, 2001)
    rho, diag = solve_fixed_point(V, W, cfg)
    assert rho.variance() == pytest.approx(var, rel=0.01)
    from sidlab.invariant_density import l1_distance
    assert l1_distance(apply_pi(rho, V, W, sigma), rho) <= cfg.tol
    assert not diag.damping_warning and diag.residuals[-1] <= cfg.tol


def test_fixed_point_without_interaction_one_step():
    V = P.quadratic(1.0, [0.0])
    rho, diag = solve_fixed_point(V, None, FixedPointConfig(1.0, -6, 6, 1001, damping=1.0))
    assert diag.iterations == 1


def test_fixed_point_concentrates_as_sigma_drops():
    V = P.even_poly({2: 0.5, 4: 0.1}, [0.0])
    W = P.even_poly({2: 0.5, 4: 0.25}, role="W")
    n, lo, hi = 2001, -8.0, 8.0
    dirac = np.zeros(n)
    dirac[n // 2] = 1.0
    delta = grid_density(lo, hi, n, dirac)
    dists = [density_distance(solve_fixed_point(V, W, FixedPointConfig(s, lo, hi, n))[0], delta)[1]
             for s in (1.0, 0.5, 0.25)]
    assert dists[0] > dists[1] > dists[2]


def test_non_convergence():
    V = P.quadratic(1.0, [0.0])
    W = P.quadratic(1.0, [0.0], role="W")
    with pytest.raises(NonConvergenceError) as exc:
        solve_fixed_point(V, W, FixedPointConfig(1.0, -6, 6, 501, max_iter=2))
    assert exc.value.last_residual > 0


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FixedPointConfig(1.0, -6, 6, 101, damping=0.0)
    with pytest.raises(ConfigurationError):
        solve_fixed_point(P.quadratic(1.0, [0.0]), None, FixedPointConfig(1.0, -2, 2, 101))


def test_density_distance_examples():
    a = grid_density(-6, 6, 4001, gaussian(0.0, 0.5))
    assert density_distance(a, a) == (0.0, 0.0)
    b = grid_density(-6, 6, 4001, gaussian(0.5, 0.5))
    assert density_distance(a, b)[1] == pytest.approx(0.5, abs=1e-3)
    c = grid_density(-6, 6, 4001, gaussian(0.0, 0.6))
    assert density_distance(a, c)[1] == pytest.approx(0.1, abs=1e-3)
    with pytest.raises(UsageError):
        density_distance(a, grid_density(-5, 5, 4001))


def test_outputs(tmp_path):
    V = P.quadratic(1.0, [0.0])
    rho, diag = solve_fixed_point(V, None, FixedPointConfig(1.0, -6, 6, 101))
    rho.write_csv(tmp_path / "rho.csv")
    diag.write_json(tmp_path / "d.json")
    assert (tmp_path / "rho.csv").read_text().startswith("x,rho\n")
    import json
    assert json.loads((tmp_path / "d.json").read_text())["sigma"] == 1.0
