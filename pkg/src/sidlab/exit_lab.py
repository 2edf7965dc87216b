"""Exit domains, exit costs, first-exit Monte Carlo and small-noise sweeps.

The effective potential seen once the occupation measure has settled at
``delta_m`` is ``W_m(x) = V(x) + W(x - m)``; the exit cost of a domain is
``H = inf over the boundary of W_m - V(m)`` and the Kramers observable is
``(sigma^2 / 2) log tau``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import _kernels as K
from .errors import BudgetError, ContractionError, SidlabError, UsageError
from .potentials import PotentialSpec
from .sde import Engine, SimConfig, deterministic_flow, frozen_flow
from .seeding import map_replicas

INTERVAL = "interval"
BALL = "ball"
LEVEL_SET = "level_set"


def effective_cost(V: PotentialSpec, W: Optional[PotentialSpec], m, x) -> np.ndarray:
    """``V(x) + W(x - m) - V(m)`` at a point or batch of points."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1)
    out = V.value(pts) - V.value(m)
    if W is not None:
        out = out + W.value(pts - m)
    return out


def effective_gradient(V, W, m, x):
    g = V.gradient(x)
    if W is not None:
        g = g + W.gradient(np.asarray(x, dtype=float) - m)
    return g


def sphere_points(dim: int, n: int) -> np.ndarray:
    """Quasi-uniform points on the unit sphere of R^dim."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = np.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    from scipy.special import ndtri
    u = qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(eq=False)
class DomainSpec:
    """Open exit domain: an interval, a ball, or a sublevel set of the effective potential."""

    kind: str
    dim: int
    lo: float = float("nan")
    hi: float = float("nan")
    center: Optional[np.ndarray] = None
    radius: float = float("nan")
    level: float = float("nan")
    V: Optional[PotentialSpec] = None
    W: Optional[PotentialSpec] = None
    m: Optional[np.ndarray] = None

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == INTERVAL:
            return bool(self.lo < x[0] < self.hi)
        if self.kind == BALL:
            return bool(np.sum((x - self.center) ** 2) < self.radius**2)
        return bool(effective_cost(self.V, self.W, self.m, x) < self.level)

    def contains_closed(self, x, tol=1e-9) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == INTERVAL:
            return bool(self.lo - tol <= x[0] <= self.hi + tol)
        if self.kind == BALL:
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        return bool(effective_cost(self.V, self.W, self.m, x) <= self.level + tol)

    def check(self, m) -> None:
        m = np.atleast_1d(np.asarray(m, dtype=float))
        if m.size != self.dim:
            raise UsageError("m and the domain have different dimensions")
        if self.kind == LEVEL_SET and not self.level > 0:
            raise UsageError("a level-set domain needs a positive level")
        if not self.contains(m):
            raise UsageError("m must lie strictly inside the domain")

    def kernel_params(self, V, W, m):
        if self.kind == INTERVAL:
            return K.DOM_INTERVAL, np.array([self.lo, self.hi])
        if self.kind == BALL:
            return K.DOM_BALL, np.concatenate([[self.radius], self.center])
        if V is not self.V or W is not self.W or not np.array_equal(np.atleast_1d(m), self.m):
            raise UsageError("a level-set domain must be simulated with the potentials that define it")
        return K.DOM_LEVEL, np.array([self.level, float(self.V.value(self.m))])

    def crossing(self, inside_pt, outside_pt):
        """Fraction along the segment where it leaves the domain, and the crossing point."""
        xp = np.atleast_1d(inside_pt)
        xn = np.atleast_1d(outside_pt)
        delta = xn - xp
        if self.kind == INTERVAL:
            edge = self.hi if xn[0] >= self.hi else self.lo
            theta = (edge - xp[0]) / delta[0]
        elif self.kind == BALL:
            rel = xp - self.center
            a = float(delta @ delta)
            b = 2.0 * float(rel @ delta)
            c = float(rel @ rel) - self.radius**2
            theta = (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
        else:
            gp = float(effective_cost(self.V, self.W, self.m, xp))
            gn = float(effective_cost(self.V, self.W, self.m, xn))
            theta = (self.level - gp) / (gn - gp) if gn != gp else 1.0
        theta = min(max(theta, 0.0), 1.0)
        point = xp + theta * delta
        if self.kind == INTERVAL:
            point[0] = self.hi if xn[0] >= self.hi else self.lo
        return theta, point

    def boundary_points(self, n: int = 256) -> np.ndarray:
        if self.kind == INTERVAL:
            return np.array([[self.lo], [self.hi]])
        dirs = sphere_points(self.dim, n)
        if self.kind == BALL:
            return self.center + self.radius * dirs
        return np.array([self._level_ray(u) for u in dirs])

    def _level_ray(self, u):
        """Point ``m + r u`` on the level set; the cost is increasing along rays from m."""
        f = lambda r: float(effective_cost(self.V, self.W, self.m, self.m + r * u)) - self.level
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e8:
                raise UsageError("level set is unbounded along a ray")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-15 * max(1.0, hi):
                break
        return self.m + 0.5 * (lo + hi) * u

    def to_dict(self) -> dict:
        if self.kind == INTERVAL:
            return {"kind": INTERVAL, "lo": self.lo, "hi": self.hi}
        if self.kind == BALL:
            return {"kind": BALL, "center": self.center.tolist(), "radius": self.radius}
        return {"kind": LEVEL_SET, "level": self.level}


def interval(lo: float, hi: float) -> DomainSpec:
    if not hi > lo:
        raise UsageError("interval needs lo < hi")
    return DomainSpec(INTERVAL, 1, lo=float(lo), hi=float(hi))


def ball(center, radius: float) -> DomainSpec:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if not radius > 0:
        raise UsageError("ball radius must be positive")
    return DomainSpec(BALL, c.size, center=c, radius=float(radius))


def level_set(level: float, V: PotentialSpec, W: Optional[PotentialSpec], m=None) -> DomainSpec:
    """``{x : V(x) + W(x - m) - V(m) < level}``."""
    if not level > 0:
        raise UsageError("level must be positive")
    m = V.minimizer if m is None else np.atleast_1d(np.asarray(m, dtype=float))
    return DomainSpec(LEVEL_SET, V.dim, level=float(level), V=V, W=W, m=m)


# -- exit cost ----------------------------------------------------------------------

@dataclass
class ExitCost:
    H: float
    argmin: np.ndarray
    sampled_min: float
    flagged: bool

    def __float__(self):
        return self.H


def _sphere_descent(cost, grad, center, radius, start, tol=1e-10, max_iter=20000):
    x = center + radius * start / np.linalg.norm(start)
    fx = cost(x)
    step = 0.1 * radius
    for _ in range(max_iter):
        u = (x - center) / radius
        g = grad(x)
        gt = g - (g @ u) * u
        gn = float(np.linalg.norm(gt))
        if gn < 1e-13:
            break
        while True:
            y = x - step * gt / gn
            y = center + radius * (y - center) / np.linalg.norm(y - center)
            fy = cost(y)
            if fy <= fx - 1e-4 * step * gn or step < 1e-16:
                break
            step *= 0.5
        improvement = fx - fy
        if fy <= fx:
            x, fx = y, fy
        step = min(step * 2.0, radius)
        if 0 <= improvement < tol and step < 1e-6 * radius:
            break
        if improvement < tol * 1e-3 and gn < 1e-9:
            break
    return x, fx


def exit_cost_details(domain: DomainSpec, V: PotentialSpec, W: Optional[PotentialSpec], m,
                      n_starts: int = 64, n_samples: int = 10_000, tol: float = 1e-10,
                      agree: float = 1e-6) -> ExitCost:
    m = np.atleast_1d(np.asarray(m, dtype=float))
    domain.check(m)
    cost = lambda x: float(effective_cost(V, W, m, x))
    if domain.kind == LEVEL_SET:
        return ExitCost(domain.level, domain.boundary_points(1)[0], domain.level, False)
    if domain.kind == INTERVAL or domain.dim == 1:
        pts = domain.boundary_points()
        vals = np.array([cost(p) for p in pts])
        i = int(np.argmin(vals))
        return ExitCost(float(vals[i]), pts[i], float(vals[i]), False)
    grad = lambda x: effective_gradient(V, W, m, x)
    best_x, best_f = None, np.inf
    for s in sphere_points(domain.dim, n_starts):
        x, f = _sphere_descent(cost, grad, domain.center, domain.radius, s, tol)
        if f < best_f:
            best_x, best_f = x, f
    samples = domain.center + domain.radius * sphere_points(domain.dim, n_samples)
    sampled = float(np.min(effective_cost(V, W, m, samples)))
    flagged = abs(sampled - best_f) > agree
    if flagged:
        warnings.warn(f"exit-cost optimizer ({best_f:.10g}) and sphere sampling ({sampled:.10g}) "
                      "disagree", RuntimeWarning, stacklevel=2)
    return ExitCost(float(best_f), best_x, sampled, flagged)


def exit_cost(domain: DomainSpec, V: PotentialSpec, W: Optional[PotentialSpec], m) -> float:
    """Exit cost ``H = inf over the boundary of V(x) + W(x - m) - V(m)``."""
    return exit_cost_details(domain, V, W, m).H


@dataclass
class EnlargeContract:
    De: DomainSpec
    Dc: DomainSpec
    H: float
    d_e: float
    d_c: float


def _min_pair_distance(a, b):
    return float(np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)))


def enlarge_contract(domain, V, W, m, delta: float, n_boundary: int = 256) -> EnlargeContract:
    """Level-set domains with exit costs ``H + delta/2`` and ``H - delta/2``.

    ``d_e`` and ``d_c`` are sampled minimum distances between the boundary of
    ``domain`` and the boundaries of the enlargement and contraction.
    """
    if not delta > 0:
        raise UsageError("delta must be positive")
    m = np.atleast_1d(np.asarray(m, dtype=float))
    H = exit_cost(domain, V, W, m)
    if H - delta / 2 <= 0:
        raise ContractionError(f"contraction is empty for H={H:g}, delta={delta:g}; decrease delta")
    De = level_set(H + delta / 2, V, W, m)
    Dc = level_set(H - delta / 2, V, W, m)
    b = domain.boundary_points(n_boundary)
    d_e = _min_pair_distance(b, De.boundary_points(n_boundary))
    d_c = _min_pair_distance(b, Dc.boundary_points(n_boundary))
    return EnlargeContract(De, Dc, H, d_e, d_c)


# -- first exit ----------------------------------------------------------------------

@dataclass
class ExitRecord:
    replica: int
    tau: float
    exit_point: np.ndarray
    timed_out: bool
    steps: int
    degenerate: bool = False
    prev_point: Optional[np.ndarray] = None


@dataclass
class ExitProcess:
    """What to simulate until exit: the self-interacting diffusion or its frozen version."""

    V: PotentialSpec
    W: Optional[PotentialSpec]
    config: SimConfig
    frozen: bool = False
    m: Optional[np.ndarray] = None
    tag: str = "exit"

    def engine(self, replica, domain):
        m = self.V.minimizer if self.m is None else self.m
        return Engine(self.V, self.W, self.config, replica=replica, m=m, frozen=self.frozen,
                      domain=domain, store_buffer=False, tag=self.tag)


def first_exit(process: ExitProcess, domain: DomainSpec, t_max: float, replica: int = 0) -> ExitRecord:
    """Run until the first step outside ``domain`` or ``t_max``.

    The exit time is interpolated linearly inside the crossing step, and the
    exit point is the crossing point of that step's segment.
    """
    x0 = process.config.x0
    if not domain.contains(x0):
        return ExitRecord(replica, 0.0, x0.copy(), False, 0, degenerate=True)
    dt = process.config.dt
    n_max = int(math.ceil(t_max / dt - 1e-9))
    eng = process.engine(replica, domain)
    status = eng.advance(n_max)
    if status == K.EXITED:
        prev = eng.prev.copy()
        theta, point = domain.crossing(prev, eng.x)
        tau = (eng.step - 1 + theta) * dt
        return ExitRecord(replica, float(min(tau, t_max)), point, False, eng.step, prev_point=prev)
    return ExitRecord(replica, float(t_max), eng.x.copy(), True, eng.step)


# -- sweeps ---------------------------------------------------------------------------

def default_dt(sigma: float) -> float:
    return min(1e-3, sigma**2 / 100.0)


def default_t_max(sigma: float, H: float, delta: float) -> float:
    return 3.0 * math.exp(2.0 * (H + delta) / sigma**2)


@dataclass
class KramersRow:
    sigma: float
    replicas: int
    median_tau: float
    mean_tau: float
    q10: float
    q90: float
    rate: float
    H: float
    delta: float
    in_window_fraction: float
    timed_out_count: int
    dt: float
    t_max: float

    @property
    def usable(self) -> bool:
        return self.timed_out_count <= 0.5 * self.replicas


@dataclass
class KramersResult:
    H: float
    delta: float
    rows: list
    records: dict = field(repr=False, default_factory=dict)
    domain_check: Optional[dict] = None

    def row(self, sigma) -> KramersRow:
        for r in self.rows:
            if math.isclose(r.sigma, sigma):
                return r
        raise KeyError(sigma)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([abs(r.rate - self.H) for r in self.rows])

    @property
    def gap_trend_ok(self) -> bool:
        """|rate - H| non-increasing along the sweep, allowing one inversion."""
        return int(np.sum(np.diff(self.gaps) > 0)) <= 1

    @property
    def window_trend_ok(self) -> bool:
        f = np.array([r.in_window_fraction for r in self.rows])
        return bool(np.all(np.diff(f) >= 0))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "replicas", "median_tau", "mean_tau", "q10", "q90", "rate", "H",
                        "window_delta", "in_window_fraction", "timed_out_count"])
            for r in self.rows:
                w.writerow([f"{r.sigma:.17g}", r.replicas, f"{r.median_tau:.17g}", f"{r.mean_tau:.17g}",
                            f"{r.q10:.17g}", f"{r.q90:.17g}", f"{r.rate:.17g}", f"{r.H:.17g}",
                            f"{r.delta:.17g}", f"{r.in_window_fraction:.17g}", r.timed_out_count])


@dataclass
class DomainCheck:
    passed: bool
    details: dict


def check_domain_assumptions(domain: DomainSpec, V, W, m, x0, horizon: Optional[float] = None,
                             n_boundary: int = 32, tol: float = 1e-3) -> DomainCheck:
    """Check the flow hypotheses on a finite horizon.

    (i) the noise-free self-interacting path from ``x0`` stays inside and ends
    near ``m``; (ii) frozen flows started on the boundary stay in the closed
    domain; (iii) those flows end near ``m``. Only a finite horizon can be
    checked, which the report notes.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rate = V.convexity_lower_bound + (W.convexity_lower_bound if W is not None else 0.0)
    if horizon is None:
        horizon = 30.0 / max(rate, 1e-3)
    dt = horizon / 20000
    scale = 1.0 + float(np.max(np.abs(domain.boundary_points(8) - m)))
    details = {"horizon": horizon, "note": "finite-horizon check; terminal proximity to m stands in for the limit"}

    flow = deterministic_flow(V, W, x0, horizon, dt, tol=tol * scale)
    stays = all(domain.contains(p) for p in flow.points)
    # the memory term slows the approach to m, so ask for a decreasing distance
    dist = np.linalg.norm(flow.points - m, axis=1)
    mid = dist[len(dist) // 2]
    converging = bool(dist[-1] == 0.0 or dist[-1] < mid < dist[0])
    details["flow_in_domain"] = stays
    details["flow_terminal_distance"] = flow.terminal_distance

    invariant = True
    worst = 0.0
    for b in domain.boundary_points(n_boundary):
        fl = frozen_flow(V, W, m, b, horizon, dt, tol=tol * scale)
        invariant &= all(domain.contains_closed(p, 1e-9 * scale) for p in fl.points)
        worst = max(worst, fl.terminal_distance)
    details["frozen_flow_invariant"] = bool(invariant)
    details["frozen_flow_worst_terminal_distance"] = worst
    converge_frozen = worst <= 1e-3 * scale
    passed = bool(stays and converging and invariant and converge_frozen)
    return DomainCheck(passed, details)


def kramers_sweep(V: PotentialSpec, W: Optional[PotentialSpec], domain: DomainSpec,
                  sigmas: Sequence[float], replicas: int, delta: float = 0.4,
                  dt_policy: Optional[Callable[[float], float]] = None,
                  t_max_policy: Optional[Callable[[float, float, float], float]] = None,
                  x0=None, master_seed: int = 0, warmup_steps: int = 1,
                  decimation_stride: int = 1000, frozen: bool = False,
                  step_budget: float = 1e11, workers: Optional[int] = None,
                  check_domain: bool = True, tag: str = "kramers") -> KramersResult:
    """First-exit times over a decreasing noise sweep.

    Every configuration problem (ordering, truncated observation window,
    step budget, flow hypotheses) is raised before any simulation starts.
    """
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) == 0 or np.any(np.diff(sigmas) >= 0) or min(sigmas) <= 0:
        raise UsageError("sigmas must be positive and strictly decreasing")
    m = V.minimizer
    x0 = m.copy() if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    dt_policy = dt_policy or default_dt
    t_max_policy = t_max_policy or default_t_max
    H = exit_cost(domain, V, W, m)
    plan = []
    worst_steps = 0.0
    for s in sigmas:
        dt = float(dt_policy(s))
        t_max = float(t_max_policy(s, H, delta))
        needed = math.exp(2.0 * (H + delta) / s**2)
        if t_max < needed:
            raise BudgetError(f"t_max={t_max:.4g} at sigma={s:g} truncates the window end {needed:.4g}")
        worst_steps += replicas * t_max / dt
        plan.append((s, dt, t_max))
    if worst_steps > step_budget:
        raise BudgetError(f"worst-case step count {worst_steps:.3g} exceeds budget {step_budget:.3g}")
    check = None
    if check_domain:
        dc = check_domain_assumptions(domain, V, W, m, x0)
        if not dc.passed:
            raise SidlabError(f"domain fails the flow hypotheses: {dc.details}")
        check = dc.details

    rows, records = [], {}
    for s, dt, t_max in plan:
        cfg = SimConfig(s, dt, t_max, x0, master_seed=master_seed,
                        decimation_stride=decimation_stride, warmup_steps=warmup_steps)
        proc = ExitProcess(V, W, cfg, frozen=frozen, m=m, tag=f"{tag}:{s!r}")
        recs = map_replicas(lambda i: first_exit(proc, domain, t_max, i), replicas, workers)
        records[s] = recs
        rows.append(_row(s, recs, H, delta, dt, t_max))
    return KramersResult(H, delta, rows, records, check)


def _row(sigma, recs, H, delta, dt, t_max) -> KramersRow:
    taus = np.array([r.tau for r in recs])
    timed = int(sum(r.timed_out for r in recs))
    med = float(np.median(taus))
    lo = math.exp(2 * (H - delta) / sigma**2)
    hi = math.exp(2 * (H + delta) / sigma**2)
    inside = np.array([(not r.timed_out) and lo <= r.tau <= hi for r in recs])
    return KramersRow(sigma, len(recs), med, float(taus.mean()), float(np.quantile(taus, 0.1)),
                      float(np.quantile(taus, 0.9)), sigma**2 / 2 * math.log(med) if med > 0 else -math.inf,
                      H, delta, float(inside.mean()), timed, dt, t_max)


# -- exit location ---------------------------------------------------------------------

@dataclass
class LocationRow:
    sigma: float
    costs: np.ndarray
    frac_in_N: float
    counts: np.ndarray


@dataclass
class LocationReport:
    H: float
    margin: float
    edges: np.ndarray
    rows: list

    @property
    def monotone_ok(self) -> bool:
        """Fraction of exits in the high-cost region non-increasing as sigma decreases."""
        f = np.array([r.frac_in_N for r in self.rows])
        return bool(np.all(np.diff(f) <= 0))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "exit_cost_bin", "count", "frac_in_N"])
            for r in self.rows:
                for lo, c in zip(self.edges[:-1], r.counts):
                    w.writerow([f"{r.sigma:.17g}", f"{lo:.17g}", int(c), f"{r.frac_in_N:.17g}"])


def exit_location_stats(records: dict, domain: DomainSpec, V, W, m, margin: float,
                        bins: int = 10) -> LocationReport:
    """Boundary cost at the exit points, per noise level.

    ``records`` maps sigma to its exit records. The high-cost region is
    ``{z on the boundary : W_m(z) - V(m) >= H + margin}``.
    """
    if not records or any(len(v) == 0 for v in records.values()):
        raise UsageError("exit_location_stats needs a non-empty record set per sigma")
    m = np.atleast_1d(np.asarray(m, dtype=float))
    H = exit_cost(domain, V, W, m)
    sigmas = sorted(records, reverse=True)
    costs = {}
    for s in sigmas:
        exited = [r for r in records[s] if not r.timed_out and not r.degenerate]
        pts = np.array([r.exit_point for r in exited]).reshape(-1, V.dim)
        costs[s] = np.asarray(effective_cost(V, W, m, pts)).reshape(-1) if len(exited) else np.zeros(0)
    top = max([H + 1e-12] + [float(c.max()) for c in costs.values() if c.size])
    edges = np.linspace(H, top + 1e-12, bins + 1)
    rows = []
    for s in sigmas:
        c = costs[s]
        frac = float(np.mean(c >= H + margin)) if c.size and np.isfinite(margin) else 0.0
        counts, _ = np.histogram(np.clip(c, edges[0], edges[-1]), bins=edges)
        rows.append(LocationRow(s, c, frac, counts))
    return LocationReport(H, float(margin), edges, rows)
