"""Self-consistent invariant density on a 1-D grid.

The Gibbs map sends a density ``mu`` to

    Pi(mu)(x) = exp(-(2/sigma^2) (V(x) + W*mu(x))) / Z

and the invariant density is its fixed point. The convolution is a direct
trapezoidal sum (O(n^2) per application, fine up to a few thousand points).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, GridCoverageError, NonConvergenceError, UsageError
from .potentials import PotentialSpec

MAX_POINTS = 4096


def _trapz_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True, eq=False)
class GridDensity:
    lo: float
    hi: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def quad_weights(self) -> np.ndarray:
        return _trapz_weights(self.n, self.step)

    def integral(self, f=None) -> float:
        vals = self.values if f is None else self.values * f(self.x)
        return float(np.dot(self.quad_weights, vals))

    def mean(self) -> float:
        return self.integral(lambda x: x)

    def variance(self) -> float:
        mu = self.mean()
        return self.integral(lambda x: (x - mu) ** 2)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.n == other.n and self.lo == other.lo and self.hi == other.hi

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoidal integral at the grid points."""
        inc = 0.5 * self.step * (self.values[1:] + self.values[:-1])
        return np.concatenate([[0.0], np.cumsum(inc)])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "rho"])
            for x, r in zip(self.x, self.values):
                w.writerow([f"{x:.17g}", f"{r:.17g}"])


def grid_density(lo, hi, n, values=None) -> GridDensity:
    """Density on ``n`` uniform points of ``[lo, hi]``, normalized by the trapezoidal rule.

    ``values`` may be an array or a callable of the grid; uniform when omitted.
    """
    if n < 3 or not hi > lo:
        raise ConfigurationError("need hi > lo and at least 3 grid points")
    if n > MAX_POINTS:
        raise ConfigurationError(f"grid size {n} exceeds {MAX_POINTS}")
    x = np.linspace(lo, hi, n)
    if values is None:
        v = np.ones(n)
    elif callable(values):
        v = np.asarray(values(x), dtype=float)
    else:
        v = np.asarray(values, dtype=float).copy()
    if v.shape != (n,) or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise UsageError("density values must be finite, non-negative, one per grid point")
    z = float(np.dot(_trapz_weights(n, (hi - lo) / (n - 1)), v))
    if not z > 0:
        raise UsageError("density has zero mass")
    return GridDensity(float(lo), float(hi), v / z)


def interaction_matrix(W: Optional[PotentialSpec], x: np.ndarray) -> np.ndarray:
    """``K[i, j] = W(x_i - x_j)``."""
    if W is None:
        return np.zeros((x.size, x.size))
    diff = (x[:, None] - x[None, :]).reshape(-1, 1)
    return np.asarray(W.value(diff)).reshape(x.size, x.size)


def _pi(density, Vx, K, sigma):
    conv = K @ (density.quad_weights * density.values)
    expo = -(2.0 / sigma**2) * (Vx + conv)
    if not np.all(np.isfinite(expo)):
        raise GridCoverageError("non-finite Gibbs exponent on the grid")
    expo = expo - expo.max()
    vals = np.exp(expo)
    if np.argmax(vals) in (0, vals.size - 1):
        raise GridCoverageError("Gibbs density peaks at the grid edge; the grid does not cover m")
    z = float(np.dot(density.quad_weights, vals))
    if not (z > 0 and np.isfinite(z)):
        raise GridCoverageError("Gibbs weights vanish on the grid")
    return GridDensity(density.lo, density.hi, vals / z)


def apply_pi(density: GridDensity, V: PotentialSpec, W: Optional[PotentialSpec], sigma: float,
             kernel: Optional[np.ndarray] = None) -> GridDensity:
    """One application of the Gibbs map on the density's grid.

    ``kernel`` may carry a precomputed :func:`interaction_matrix` for the grid.
    """
    if V.dim != 1:
        raise UsageError("the grid solver is one-dimensional")
    if not sigma > 0:
        raise UsageError("sigma must be positive")
    x = density.x
    K = interaction_matrix(W, x) if kernel is None else kernel
    return _pi(density, V.value(x[:, None]), K, sigma)


@dataclass
class FixedPointConfig:
    sigma: float
    lo: float
    hi: float
    n: int
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 2000

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigurationError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.n < 3 or self.n > MAX_POINTS or not self.hi > self.lo:
            raise ConfigurationError("invalid grid")


@dataclass
class Diagnostics:
    iterations: int
    residuals: list
    sigma: float
    grid: dict
    damping: float
    damping_warning: bool = False

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residuals": [float(r) for r in self.residuals],
                "sigma": self.sigma, "grid": self.grid, "damping": self.damping,
                "damping_warning": self.damping_warning}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def l1_distance(d1: GridDensity, d2: GridDensity) -> float:
    return float(np.dot(d1.quad_weights, np.abs(d1.values - d2.values)))


def solve_fixed_point(V: PotentialSpec, W: Optional[PotentialSpec], config: FixedPointConfig):
    """Damped Picard iteration ``mu <- (1 - lam) mu + lam Pi(mu)`` from the uniform density.

    Stops as soon as ``||Pi(mu) - mu||_1 <= tol`` and returns ``mu`` with its
    diagnostics. Raises :class:`NonConvergenceError` after ``max_iter`` steps.
    """
    if V.dim != 1:
        raise UsageError("the grid solver is one-dimensional")
    m = float(V.minimizer[0])
    half = 8.0 * config.sigma / np.sqrt(2.0 * V.convexity_lower_bound) if V.convexity_lower_bound > 0 else np.inf
    if config.lo > m - half or config.hi < m + half:
        raise ConfigurationError(
            f"grid [{config.lo}, {config.hi}] must cover [{m - half:.4g}, {m + half:.4g}]")
    mu = grid_density(config.lo, config.hi, config.n)
    x = mu.x
    K = interaction_matrix(W, x)
    Vx = V.value(x[:, None])
    lam = config.damping
    residuals = []
    for it in range(config.max_iter + 1):
        image = _pi(mu, Vx, K, config.sigma)
        res = l1_distance(image, mu)
        residuals.append(res)
        if res <= config.tol:
            warn = bool(len(residuals) > 6 and np.any(np.diff(residuals[5:]) > 0))
            if warn:
                warnings.warn("fixed-point residuals increased after the first iterations; "
                              "consider stronger damping", RuntimeWarning, stacklevel=2)
            diag = Diagnostics(it, residuals, config.sigma,
                               {"lo": config.lo, "hi": config.hi, "n": config.n}, lam, warn)
            return mu, diag
        if it == config.max_iter:
            break
        vals = (1.0 - lam) * mu.values + lam * image.values
        mu = GridDensity(mu.lo, mu.hi, vals / float(np.dot(mu.quad_weights, vals)))
    raise NonConvergenceError(f"no fixed point within {config.max_iter} iterations", residuals[-1])


def density_distance(d1: GridDensity, d2: GridDensity, n_quantiles: int = 20000):
    """``(L1, W2)`` between two densities on the same grid.

    W2 integrates the squared difference of the inverse CDFs over a midpoint
    quantile mesh.
    """
    if not d1.same_grid(d2):
        raise UsageError("densities live on different grids")
    l1 = l1_distance(d1, d2)
    u = (np.arange(n_quantiles) + 0.5) / n_quantiles
    q1 = _quantile(d1, u)
    q2 = _quantile(d2, u)
    return l1, float(np.sqrt(np.mean((q1 - q2) ** 2)))


def _quantile(d: GridDensity, u):
    """Inverse of the piecewise-quadratic trapezoidal CDF."""
    F = d.cdf()
    F = F / F[-1]
    x = d.x
    h = d.step
    i = np.clip(np.searchsorted(F, u, side="right") - 1, 0, d.n - 2)
    # within a cell the density is linear: rho(s) = a + b s, F = F_i + a s + b s^2 / 2
    a = d.values[i]
    b = (d.values[i + 1] - d.values[i]) / h
    scale = 1.0 / (d.cdf()[-1])
    a, b = a * scale, b * scale
    r = u - F[i]
    den = a + np.sqrt(np.maximum(a * a + 2 * b * r, 0.0))
    s = np.where(den > 0, 2 * r / np.where(den > 0, den, 1.0), 0.0)
    return x[i] + np.clip(s, 0.0, h)
