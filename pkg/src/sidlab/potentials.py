"""Convex confinement and interaction potentials.

Three closed families are supported so that gradients, Hessians and exit
costs have analytic forms:

* ``quadratic``: ``0.5 * sum_i a_i (x_i - c_i)**2`` with a per-axis (or scalar)
  curvature ``a``;
* ``even_poly``: ``sum_p c_p |x - c|**p`` over even powers ``p >= 2``;
* ``radial``: ``G(|x|) - G(0)`` for a user supplied profile ``G``.

Values are shifted so the global minimum is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigurationError, NonFiniteInputError, UsageError

QUADRATIC = "quadratic"
EVEN_POLY = "even_poly"
RADIAL = "radial"

# integer codes understood by the compiled kernels
KERNEL_CODES = {QUADRATIC: 0, EVEN_POLY: 1}


def _points(x, dim):
    """Coerce ``x`` to a float array whose last axis has length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise UsageError(f"scalar input given to a {dim}-D potential")
        arr = arr.reshape(1)
    if arr.shape[-1] != dim:
        if dim == 1 and arr.ndim == 1:
            arr = arr[:, None]
        else:
            raise UsageError(f"expected points of dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("potential evaluated at a non-finite point")
    return arr


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Immutable description of a convex potential on R^d.

    Use the :func:`quadratic`, :func:`even_poly` and :func:`radial`
    constructors rather than building instances directly.
    """

    kind: str
    dim: int
    center: np.ndarray
    growth_degree: int
    convexity_lower_bound: float
    curvature: Optional[np.ndarray] = None
    coeffs: tuple = ()
    profile: Optional[Callable] = None
    profile_d1: Optional[Callable] = None
    profile_d2: Optional[Callable] = None
    role: str = "V"
    _g0: float = field(default=0.0, repr=False)

    @property
    def minimizer(self) -> np.ndarray:
        return self.center.copy()

    # -- evaluation -------------------------------------------------------

    def value(self, x):
        """Potential value at a point (scalar) or batch of points (array)."""
        pts = _points(x, self.dim)
        y = pts - self.center
        if self.kind == QUADRATIC:
            out = 0.5 * np.sum(self.curvature * y * y, axis=-1)
        elif self.kind == EVEN_POLY:
            r2 = np.sum(y * y, axis=-1)
            out = np.zeros_like(r2)
            for p, c in self.coeffs:
                out = out + c * r2 ** (p // 2)
        else:
            r = np.sqrt(np.sum(y * y, axis=-1))
            out = np.asarray(self.profile(r), dtype=float) - self._g0
        return float(out) if pts.ndim == 1 else out

    def gradient(self, x) -> np.ndarray:
        pts = _points(x, self.dim)
        y = pts - self.center
        if self.kind == QUADRATIC:
            g = self.curvature * y
        elif self.kind == EVEN_POLY:
            r2 = np.sum(y * y, axis=-1, keepdims=True)
            s = np.zeros_like(r2)
            for p, c in self.coeffs:
                s = s + c * p * r2 ** ((p - 2) // 2)
            g = s * y
        else:
            r = np.sqrt(np.sum(y * y, axis=-1, keepdims=True))
            safe = np.where(r > 0, r, 1.0)
            d1 = np.asarray(self.profile_d1(safe), dtype=float)
            g = np.where(r > 0, d1 / safe, 0.0) * y
        return g

    def hessian(self, x) -> np.ndarray:
        """Hessian matrix, shape ``(d, d)`` or ``(n, d, d)``."""
        pts = _points(x, self.dim)
        y = pts - self.center
        eye = np.eye(self.dim)
        if self.kind == QUADRATIC:
            h = np.broadcast_to(np.diag(self.curvature), y.shape[:-1] + (self.dim, self.dim)).copy()
        elif self.kind == EVEN_POLY:
            r2 = np.sum(y * y, axis=-1)[..., None, None]
            s = np.zeros_like(r2)
            t = np.zeros_like(r2)
            for p, c in self.coeffs:
                s = s + c * p * r2 ** ((p - 2) // 2)
                if p >= 4:
                    t = t + c * p * (p - 2) * r2 ** ((p - 4) // 2)
            h = s * eye + t * y[..., :, None] * y[..., None, :]
        else:
            r = np.sqrt(np.sum(y * y, axis=-1))[..., None, None]
            safe = np.where(r > 0, r, 1.0)
            d2 = self._profile_second(safe)
            d2_0 = self._profile_second(np.zeros(1))[0]
            u = y[..., :, None] * y[..., None, :] / safe**2
            d1 = np.asarray(self.profile_d1(safe), dtype=float)
            h = np.where(r > 0, d2 * u + d1 / safe * (eye - u), d2_0 * eye)
        return h

    def laplacian(self, x):
        h = self.hessian(x)
        out = np.trace(h, axis1=-2, axis2=-1)
        return float(out) if np.ndim(out) == 0 else out

    def _profile_second(self, r):
        if self.profile_d2 is not None:
            return np.asarray(self.profile_d2(r), dtype=float)
        # G' is odd when extended to negative radii
        step = 1e-5
        lo = r - step
        d1_lo = np.sign(lo) * np.asarray(self.profile_d1(np.abs(lo)), dtype=float)
        return (np.asarray(self.profile_d1(r + step), dtype=float) - d1_lo) / (2 * step)

    # -- misc -------------------------------------------------------------

    def kernel_params(self):
        """``(code, center, params)`` for the compiled kernels, or None for radial profiles."""
        if self.kind == QUADRATIC:
            return KERNEL_CODES[QUADRATIC], self.center.copy(), self.curvature.copy()
        if self.kind == EVEN_POLY:
            top = max(p for p, _ in self.coeffs)
            params = np.zeros(top + 1)
            for p, c in self.coeffs:
                params[p] = c
            return KERNEL_CODES[EVEN_POLY], self.center.copy(), params
        return None

    def hessian_norm_bound(self, radius: float) -> float:
        """Largest Hessian operator norm over the ball of the given radius about the center."""
        if self.kind == QUADRATIC:
            return float(np.max(self.curvature))
        rs = np.linspace(0.0, radius, 257)
        pts = np.zeros((rs.size, self.dim))
        pts[:, 0] = rs
        h = self.hessian(pts + self.center)
        return float(np.max(np.linalg.norm(h, ord=2, axis=(-2, -1))))

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "dim": self.dim,
            "center": self.center.tolist(),
            "growth_degree": self.growth_degree,
            "convexity_lower_bound": self.convexity_lower_bound,
        }
        if self.kind == QUADRATIC:
            out["curvature"] = self.curvature.tolist()
        elif self.kind == EVEN_POLY:
            out["coeffs"] = {str(p): c for p, c in self.coeffs}
        return out


def _center(center, dim):
    if center is None:
        return np.zeros(dim)
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.shape != (dim,):
        raise UsageError(f"center has shape {c.shape}, expected ({dim},)")
    if not np.all(np.isfinite(c)):
        raise NonFiniteInputError("non-finite center")
    return c


def _check_role(role, center):
    if role not in ("V", "W"):
        raise UsageError(f"role must be 'V' or 'W', got {role!r}")
    if role == "W" and np.any(center != 0.0):
        raise UsageError("an interaction potential must have its minimizer at 0")


def quadratic(curvature, center=None, dim=None, role="V", convexity_lower_bound=None):
    """Quadratic potential ``0.5 * sum_i a_i (x_i - c_i)**2``.

    ``curvature`` is a positive scalar (isotropic) or one value per axis.
    """
    a = np.atleast_1d(np.asarray(curvature, dtype=float))
    if dim is None:
        if center is not None:
            dim = np.atleast_1d(center).size
        else:
            dim = a.size
    if a.size == 1:
        a = np.full(dim, a[0])
    if a.shape != (dim,):
        raise UsageError(f"curvature has {a.size} entries for a {dim}-D potential")
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise UsageError("quadratic curvature must be positive and finite")
    c = _center(center, dim)
    _check_role(role, c)
    lb = float(a.min()) if convexity_lower_bound is None else float(convexity_lower_bound)
    return PotentialSpec(QUADRATIC, dim, c, 2, lb, curvature=a, role=role)


def even_poly(coeffs: Mapping[int, float], center=None, dim=1, role="V",
              growth_degree=None, convexity_lower_bound=None):
    """Radial even polynomial ``sum_p c_p |x - c|**p``; powers must be even and >= 2."""
    items = []
    for p, c in sorted((int(p), float(c)) for p, c in dict(coeffs).items()):
        if p < 2 or p % 2:
            raise UsageError(f"even_poly power {p} is not an even integer >= 2")
        if c < 0 or not np.isfinite(c):
            raise UsageError("even_poly coefficients must be finite and non-negative")
        if c > 0:
            items.append((p, c))
    if not items:
        raise UsageError("even_poly needs at least one positive coefficient")
    c = _center(center, dim)
    _check_role(role, c)
    top = max(p for p, _ in items)
    if convexity_lower_bound is None:
        # f''(r) and f'(r)/r are both minimal at r = 0 for non-negative coefficients
        convexity_lower_bound = 2.0 * dict(items).get(2, 0.0)
    return PotentialSpec(EVEN_POLY, dim, c, int(growth_degree or top),
                         float(convexity_lower_bound), coeffs=tuple(items), role=role)


def radial(profile, profile_d1, dim, growth_degree, convexity_lower_bound,
           profile_d2=None, role="W"):
    """Rotationally invariant potential ``G(|x|) - G(0)`` centred at the origin.

    ``profile_d1`` must vanish at 0. ``profile_d2`` is approximated by central
    differences of ``profile_d1`` when omitted.
    """
    if growth_degree < 2 or growth_degree % 2:
        raise UsageError("growth_degree must be an even integer >= 2")
    c = np.zeros(dim)
    _check_role(role, c)
    g0 = float(np.asarray(profile(np.zeros(1)), dtype=float)[0])
    if abs(float(np.asarray(profile_d1(np.zeros(1)))[0])) > 1e-12:
        raise UsageError("radial profile must satisfy G'(0) = 0")
    return PotentialSpec(RADIAL, dim, c, int(growth_degree), float(convexity_lower_bound),
                         profile=profile, profile_d1=profile_d1, profile_d2=profile_d2,
                         role=role, _g0=g0)


def evaluate(spec: PotentialSpec, x):
    """Value of ``spec`` at ``x``; non-finite input raises :class:`NonFiniteInputError`."""
    return spec.value(x)


def gradient(spec: PotentialSpec, x):
    return spec.gradient(x)


def check_interaction(W: Optional[PotentialSpec], dim: int) -> None:
    if W is None:
        return
    if W.dim != dim:
        raise UsageError(f"W is {W.dim}-D but the process is {dim}-D")
    if np.any(W.minimizer != 0.0):
        raise UsageError("the interaction potential must be minimal at 0")


def from_config(record: Mapping, role="V") -> PotentialSpec:
    """Build a potential from a config table (``kind``, ``center``, coefficients, declared constants)."""
    rec = dict(record)
    kind = rec.pop("kind", None)
    declared = rec.pop("convexity_lower_bound", None)
    degree = rec.pop("growth_degree", None)
    center = rec.pop("center", None)
    dim = rec.pop("dim", None)
    if kind == QUADRATIC:
        if "curvature" not in rec:
            raise ConfigurationError("quadratic potential needs 'curvature'")
        spec = quadratic(rec.pop("curvature"), center=center, dim=dim, role=role,
                         convexity_lower_bound=declared)
        if degree not in (None, 2):
            raise ConfigurationError("a quadratic potential has growth degree 2")
    elif kind == EVEN_POLY:
        if "coeffs" not in rec:
            raise ConfigurationError("even_poly potential needs 'coeffs'")
        raw = rec.pop("coeffs")
        coeffs = {int(k): v for k, v in raw.items()}
        if dim is None:
            dim = 1 if center is None else np.atleast_1d(center).size
        spec = even_poly(coeffs, center=center, dim=dim, role=role,
                         growth_degree=degree, convexity_lower_bound=declared)
    else:
        raise ConfigurationError(f"unsupported potential kind in config: {kind!r}")
    if rec:
        raise ConfigurationError(f"unknown potential keys: {sorted(rec)}")
    return spec


# -- assumption checks ------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    required: bool = True


@dataclass
class ValidationReport:
    checks: dict
    fitted_C: float
    growth_exponent: float
    lyapunov_a: float
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.required)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "fitted_C": self.fitted_C,
            "growth_exponent": self.growth_exponent,
            "lyapunov_a": self.lyapunov_a,
            "checks": {k: {"passed": c.passed, "required": c.required, **c.detail}
                       for k, c in self.checks.items()},
            "notes": list(self.notes),
        }


def ball_grid(center, radius, n_per_axis=41):
    """Tensor grid restricted to the closed ball; always contains the center."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    axis = np.linspace(-radius, radius, n_per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * c.size), indexing="ij"), axis=-1).reshape(-1, c.size)
    mesh = mesh[np.sum(mesh**2, axis=1) <= radius**2 * (1 + 1e-12)]
    mesh = np.vstack([np.zeros(c.size), mesh])
    return mesh + c


def fd_min_curvature(spec: PotentialSpec, pts, step=1e-5) -> np.ndarray:
    """Smallest eigenvalue of the central-difference Hessian (built from gradients)."""
    n, d = pts.shape
    h = np.empty((n, d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        h[:, i, :] = (spec.gradient(pts + e) - spec.gradient(pts - e)) / (2 * step)
    h = 0.5 * (h + np.swapaxes(h, 1, 2))
    return np.linalg.eigvalsh(h)[:, 0]


def _shell_stat(radius, values, n_bins, reducer):
    edges = np.linspace(0.0, radius.max(), n_bins + 1)
    idx = np.clip(np.digitize(radius, edges) - 1, 0, n_bins - 1)
    mids, stats = [], []
    for b in range(n_bins):
        sel = idx == b
        if np.any(sel):
            mids.append(0.5 * (edges[b] + edges[b + 1]))
            stats.append(reducer(values[sel]))
    return np.array(mids), np.array(stats)


def validate_assumptions(V: PotentialSpec, W: PotentialSpec, grid, min_radius=10.0,
                         n_shells=20) -> ValidationReport:
    """Numerically check the regularity, growth, convexity and Lyapunov conditions.

    ``grid`` is an ``(n, d)`` sample set that must reach at least ``min_radius``
    from the minimizer of ``V``.
    """
    pts = _points(grid, V.dim)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ConfigurationError("validation grid needs at least two points")
    if W.dim != V.dim:
        raise ConfigurationError("V and W dimensions differ")
    m = V.minimizer
    rad_m = np.linalg.norm(pts - m, axis=1)
    if rad_m.max() < min_radius - 1e-9:
        raise ConfigurationError(
            f"grid reaches radius {rad_m.max():.3g} around m, need >= {min_radius}")
    k2 = max(V.growth_degree, W.growth_degree)
    checks = {}
    notes = []

    v = V.value(pts)
    w = W.value(pts)
    v_m = V.value(m[None, :])[0]
    w_0 = W.value(np.zeros((1, V.dim)))[0]
    checks["positivity"] = Check("positivity", bool(
        np.all(v >= -1e-12) and np.all(w >= -1e-12)
        and v_m <= v.min() + 1e-12 and w_0 <= w.min() + 1e-12),
        {"min_V": float(v.min()), "min_W": float(w.min()), "V_at_m": float(v_m)})

    # |V|+|W|, |grad V|+|grad W| and Hessian norms are dominated by C(1+|x|^2k)
    r = np.linalg.norm(pts, axis=1)
    gv = np.linalg.norm(V.gradient(pts), axis=1) + np.linalg.norm(W.gradient(pts), axis=1)
    hv = (np.linalg.norm(V.hessian(pts), ord=2, axis=(-2, -1))
          + np.linalg.norm(W.hessian(pts), ord=2, axis=(-2, -1)))
    dom = np.maximum.reduce([np.abs(v) + np.abs(w), gv, hv])
    fitted_c = float(np.max(dom / (1.0 + r**k2)))
    far = r >= 1.0
    if np.count_nonzero(far) >= 2:
        mids, peaks = _shell_stat(r[far], dom[far], n_shells, np.max)
        keep = (mids >= 1.0) & (peaks > 0)
        exponent = float(np.polyfit(np.log(mids[keep]), np.log(peaks[keep]), 1)[0]) if keep.sum() >= 2 else float("nan")
    else:
        exponent = float("nan")
    checks["growth"] = Check("growth", bool(np.isfinite(fitted_c) and (not np.isfinite(exponent) or exponent <= k2 + 0.05)),
                             {"C": fitted_c, "exponent": exponent, "degree": k2})

    curv_v = fd_min_curvature(V, pts)
    curv_w = fd_min_curvature(W, pts)
    tol = 1e-6
    ok_v = V.convexity_lower_bound > 0 and curv_v.min() >= V.convexity_lower_bound * (1 - tol) - tol
    ok_w = W.convexity_lower_bound > 0 and curv_w.min() >= W.convexity_lower_bound * (1 - tol) - tol
    checks["curvature"] = Check("curvature", bool(ok_v and ok_w), {
        "min_curvature_V": float(curv_v.min()), "declared_rho": V.convexity_lower_bound,
        "min_curvature_W": float(curv_w.min()), "declared_alpha": W.convexity_lower_bound})

    pos = v > 1e-12
    ratio = np.sum(V.gradient(pts[pos]) ** 2, axis=1) / v[pos]
    mids, shell_min = _shell_stat(rad_m[pos], ratio, n_shells, np.min)
    _, v_shell = _shell_stat(rad_m[pos], v[pos], n_shells, np.min)
    mono = bool(np.all(np.diff(shell_min) >= -1e-9 * np.abs(shell_min[:-1]) - 1e-12))
    v_up = bool(np.all(np.diff(v_shell) >= -1e-12))
    checks["coercivity"] = Check("coercivity", mono and v_up, {
        "ratio_first_shell": float(shell_min[0]), "ratio_last_shell": float(shell_min[-1]),
        "ratio_nondecreasing": mono, "V_shell_min_increasing": v_up})

    lap = V.laplacian(pts[pos])
    a = float(np.max(lap / v[pos]))
    checks["laplacian"] = Check("laplacian", bool(np.isfinite(a)),
                                {"a": a, "min_nonzero_V": float(v[pos].min())})
    if V.laplacian(m) > 0:
        notes.append("Laplacian bound cannot hold at the minimizer itself (V=0 there); "
                     "a is fitted over grid points with V>0")

    rng = np.random.default_rng(0)
    sample = pts[rng.choice(pts.shape[0], size=min(200, pts.shape[0]), replace=False)]
    q, _ = np.linalg.qr(rng.standard_normal((V.dim, V.dim)))
    spread = float(np.max(np.abs(W.value(sample @ q.T) - W.value(sample))))
    checks["spherical_W"] = Check("spherical_W", spread <= 1e-9 * (1 + np.abs(w).max()),
                                  {"max_rotation_change": spread}, required=False)
    return ValidationReport(checks, fitted_c, exponent, a, notes)
