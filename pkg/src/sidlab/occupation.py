"""Weighted empirical measures: moments, tails and Wasserstein distances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UsageError


class OccupationMeasure:
    """Finite weighted sample ``sum_i w_i delta_{x_i}`` (not necessarily normalized)."""

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise UsageError("points must be an (n, d) array")
        if weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise UsageError("one weight per point is required")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise UsageError("weights must be positive and finite")
        if not np.all(np.isfinite(pts)):
            raise UsageError("points must be finite")
        self.points = pts
        self.weights = w
        self.normalization = float(w.sum())

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return (self.weights[:, None] * self.points).sum(axis=0) / self.normalization

    def scaled(self, c: float) -> "OccupationMeasure":
        return OccupationMeasure(self.points * c, self.weights)


def _as_measure(mu) -> OccupationMeasure:
    return mu if isinstance(mu, OccupationMeasure) else OccupationMeasure(mu)


def central_moment(mu: OccupationMeasure, center, order: int) -> float:
    """``(1/normalization) * sum_i w_i |x_i - center|**order`` for even ``order``."""
    if int(order) != order or order < 2 or order % 2:
        raise UsageError(f"order must be an even integer >= 2, got {order}")
    mu = _as_measure(mu)
    c = np.atleast_1d(np.asarray(center, dtype=float))
    r2 = np.sum((mu.points - c) ** 2, axis=1)
    return float(np.dot(mu.weights, r2 ** (int(order) // 2)) / mu.normalization)


def w2k_to_dirac(mu: OccupationMeasure, m, k: int) -> float:
    """Wasserstein distance of order 2k between ``mu`` and the Dirac mass at ``m``.

    The only coupling with a Dirac mass is the product coupling, so this is
    the 2k-th root of the central moment about ``m``.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    return central_moment(mu, m, 2 * k) ** (1.0 / (2 * k))


def _sorted_1d(mu: OccupationMeasure):
    x = mu.points[:, 0]
    order = np.argsort(x, kind="stable")
    return x[order], mu.weights[order] / mu.normalization


def wasserstein_1d(x, wx, y, wy, p: float) -> float:
    """``(int_0^1 |F^-1(u) - G^-1(u)|^p du)^(1/p)`` for sorted atoms with normalized weights."""
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    cx[-1] = 1.0
    cy[-1] = 1.0
    u = np.union1d(cx, cy)
    lo = np.concatenate([[0.0], u[:-1]])
    mid = 0.5 * (lo + u)
    ix = np.minimum(np.searchsorted(cx, mid), x.size - 1)
    iy = np.minimum(np.searchsorted(cy, mid), y.size - 1)
    cost = np.dot(u - lo, np.abs(x[ix] - y[iy]) ** p)
    return float(max(cost, 0.0) ** (1.0 / p))


def w2k_empirical_1d(mu: OccupationMeasure, nu: OccupationMeasure, k: int) -> float:
    """Order-2k Wasserstein distance between two 1-D measures via the quantile coupling."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise UsageError("w2k_empirical_1d needs one-dimensional measures")
    if k < 1:
        raise UsageError("k must be >= 1")
    x, wx = _sorted_1d(mu)
    y, wy = _sorted_1d(nu)
    return wasserstein_1d(x, wx, y, wy, 2 * k)


def sliced_w2(mu: OccupationMeasure, nu: OccupationMeasure, projections: int, seed: int = 0) -> float:
    """Root-mean-square over random unit directions of projected 1-D W2 distances."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if projections < 1:
        raise UsageError("need at least one projection")
    if mu.dim != nu.dim:
        raise UsageError("dimension mismatch")
    if mu.dim < 2:
        raise UsageError("sliced_w2 is for dimension >= 2; use w2k_empirical_1d")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(projections), mu.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    wmu = mu.weights / mu.normalization
    wnu = nu.weights / nu.normalization
    total = 0.0
    for u in dirs:
        px = mu.points @ u
        py = nu.points @ u
        ox = np.argsort(px, kind="stable")
        oy = np.argsort(py, kind="stable")
        total += wasserstein_1d(px[ox], wmu[ox], py[oy], wnu[oy], 2) ** 2
    return float(np.sqrt(total / len(dirs)))


@dataclass
class TailProfile:
    radii: np.ndarray
    tail_mass: np.ndarray
    C: float
    a: float
    r_squared: float
    degenerate: bool = False


def tail_profile(mu: OccupationMeasure, m, radii) -> TailProfile:
    """Tail masses ``mu(|y - m| > R)`` and a least-squares fit of ``log mass = log C - a R``.

    The fit uses the radii where the tail mass is positive; fewer than two
    such radii gives a degenerate profile (NaN constants).
    """
    mu = _as_measure(mu)
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or r.size == 0 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise UsageError("radii must be positive and strictly increasing")
    dist = np.linalg.norm(mu.points - np.atleast_1d(np.asarray(m, dtype=float)), axis=1)
    order = np.argsort(dist)
    dist, w = dist[order], mu.weights[order]
    tail_w = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    idx = np.searchsorted(dist, r, side="right")
    mass = np.clip(tail_w[idx] / mu.normalization, 0.0, 1.0)
    pos = mass > 0
    if np.count_nonzero(pos) < 2:
        return TailProfile(r, mass, float("nan"), float("nan"), float("nan"), True)
    slope, intercept = np.polyfit(r[pos], np.log(mass[pos]), 1)
    fit = intercept + slope * r[pos]
    resid = np.log(mass[pos]) - fit
    spread = np.log(mass[pos]) - np.log(mass[pos]).mean()
    ss_tot = float(np.dot(spread, spread))
    r2 = 1.0 - float(np.dot(resid, resid)) / ss_tot if ss_tot > 0 else float("nan")
    return TailProfile(r, mass, float(np.exp(intercept)), float(-slope), r2)


# -- stabilisation time -------------------------------------------------------

@dataclass
class StabilisationEstimate:
    """Replica estimate of E[W_2k(mu_t, delta_m)] on a checkpoint grid."""

    kappa: float
    sigma: float
    checkpoints: np.ndarray
    distances: np.ndarray          # (replicas, checkpoints)
    k: int
    t_hat: Optional[float]
    replica_count: int = field(init=False)

    def __post_init__(self):
        self.replica_count = self.distances.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.distances.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        n = self.distances.shape[0]
        return self.distances.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(self.mean.shape)

    @property
    def band(self):
        """``(mean - 2 stderr, mean + 2 stderr)`` per checkpoint."""
        return self.mean - 2 * self.stderr, self.mean + 2 * self.stderr

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> np.ndarray:
        return np.quantile(self.distances, qs, axis=0)

    @property
    def stabilised(self) -> bool:
        return self.t_hat is not None

    @property
    def trailing_mean(self) -> float:
        return float(self.mean[-1])

    def t_hat_for(self, kappa: float) -> Optional[float]:
        return stabilisation_index(self.checkpoints, self.mean, kappa)

    def write_csv(self, path):
        """Columns ``checkpoint_t, mean_dist, stderr, kappa, sigma, t_hat``; empty t_hat if not stabilised."""
        t_hat = "" if self.t_hat is None else f"{self.t_hat:.17g}"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["checkpoint_t", "mean_dist", "stderr", "kappa", "sigma", "t_hat"])
            for t, mu, se in zip(self.checkpoints, self.mean, self.stderr):
                w.writerow([f"{t:.17g}", f"{mu:.17g}", f"{se:.17g}",
                            f"{self.kappa:.17g}", f"{self.sigma:.17g}", t_hat])


def stabilisation_index(checkpoints, means, kappa) -> Optional[float]:
    """Earliest checkpoint from which every later mean is <= kappa; None if there is none."""
    above = np.nonzero(np.asarray(means) > kappa)[0]
    if above.size == 0:
        return float(checkpoints[0])
    last = above[-1]
    if last + 1 >= len(checkpoints):
        return None
    return float(checkpoints[last + 1])


def stabilisation_distances(V, W, config, replicas, checkpoints, workers=None,
                            tag="stabilisation") -> tuple:
    """Per-replica ``W_2k(mu_t, delta_m)`` at every checkpoint; shape ``(replicas, checkpoints)``."""
    from .sde import Engine
    from .seeding import map_replicas

    cps = np.asarray(checkpoints, dtype=float)
    if cps.ndim != 1 or cps.size == 0 or np.any(np.diff(cps) <= 0) or cps[0] <= 0:
        raise UsageError("checkpoints must be positive and strictly increasing")
    steps = np.rint(cps / config.dt).astype(int)
    if np.any(np.abs(steps * config.dt - cps) > 1e-9 * cps):
        raise UsageError("checkpoints must lie on the dt grid")
    cfg = config.replace(t_end=max(cps[-1], 2 * config.dt))
    m = V.minimizer

    def one(i):
        eng = Engine(V, W, cfg, replica=i, tag=tag, store_buffer=False)
        out = np.empty(cps.size)
        for j, s in enumerate(steps):
            eng.advance(s - eng.step)
            snap = eng.snapshot()
            out[j] = (snap.sum_wp / snap.total_weight) ** (1.0 / eng.two_k)
        return out, eng.two_k // 2

    res = map_replicas(one, int(replicas), workers)
    return np.array([r[0] for r in res]), res[0][1]


def estimate_stabilisation_time(V, W, config, kappa: float, replicas: int, checkpoints,
                                workers=None, tag="stabilisation") -> StabilisationEstimate:
    """Monte Carlo estimate of the stabilisation time of the occupation measure.

    ``t_hat`` is the earliest checkpoint after which every checkpoint mean of
    ``W_2k(mu_t, delta_m)`` over the replicas is at most ``kappa``; it is
    None ("not stabilised") when the last checkpoint mean still exceeds it.
    """
    if replicas < 30:
        raise UsageError("at least 30 replicas are required")
    if kappa < 0:
        raise UsageError("kappa must be non-negative")
    dist, k = stabilisation_distances(V, W, config, replicas, checkpoints, workers, tag)
    cps = np.asarray(checkpoints, dtype=float)
    return StabilisationEstimate(float(kappa), float(config.sigma), cps, dist, k,
                                 stabilisation_index(cps, dist.mean(axis=0), kappa))
