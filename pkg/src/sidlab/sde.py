"""Time stepping for the self-interacting diffusion and its frozen companion.

The self-interacting diffusion is

    dX_t = sigma dB_t - (grad V(X_t) + (1/t) int_0^t grad W(X_t - X_s) ds) dt

and the frozen diffusion replaces the occupation measure by a Dirac mass at
the minimizer ``m`` of ``V``:

    dY_t = sigma dB_t - grad V(Y_t) dt - grad W(Y_t - m) dt.

Both are integrated with explicit Euler-Maruyama. The occupation measure is
kept as a left-point Riemann sum: at step ``n`` the drift uses the positions
of steps ``0..n-1``, each carrying weight ``dt``; afterwards the pre-update
position is appended. Blocks of ``decimation_stride`` raw steps are merged
into one representative (the block's last position, carrying the block's
total weight) so the buffer stays small on long runs. For a quadratic ``W``
the interaction drift only needs the running mean, which is exact and O(1)
per step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .errors import AccuracyError, ConfigurationError, ExplosionError, UsageError
from .occupation import OccupationMeasure
from .potentials import QUADRATIC, PotentialSpec, check_interaction
from .seeding import derive_seed

CHUNK = 1 << 15


@dataclass
class SimConfig:
    sigma: float
    dt: float
    t_end: float
    x0: np.ndarray
    master_seed: int = 0
    decimation_stride: int = 1
    warmup_steps: int = 1

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).copy()
        if not np.all(np.isfinite(self.x0)):
            raise ConfigurationError("x0 must be finite")
        if self.sigma < 0 or not np.isfinite(self.sigma):
            raise ConfigurationError("sigma must be a finite non-negative number")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.t_end > 0 or not self.dt < self.t_end:
            raise ConfigurationError("need 0 < dt < t_end")
        if int(self.decimation_stride) < 1:
            raise ConfigurationError("decimation_stride must be >= 1")
        if int(self.warmup_steps) < 1:
            raise ConfigurationError("warmup_steps must be >= 1")
        self.decimation_stride = int(self.decimation_stride)
        self.warmup_steps = int(self.warmup_steps)
        self.master_seed = int(self.master_seed)

    @property
    def dim(self) -> int:
        return self.x0.size

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def replace(self, **changes) -> "SimConfig":
        values = dict(sigma=self.sigma, dt=self.dt, t_end=self.t_end, x0=self.x0,
                      master_seed=self.master_seed, decimation_stride=self.decimation_stride,
                      warmup_steps=self.warmup_steps)
        values.update(changes)
        return SimConfig(**values)


class BrownianSource:
    """Stream of ``sqrt(dt) * N(0, I_d)`` increments for one replica.

    Increments are drawn sequentially from a PCG64 generator seeded with
    ``derive_seed(master_seed, tag, replica)``, so increment ``n`` depends only
    on that triple and ``n``, not on how the stream is chunked.
    """

    def __init__(self, master_seed: int, replica: int, dim: int, dt: float, tag: str = "brownian"):
        self.seed = derive_seed(master_seed, tag, replica)
        self.dim = int(dim)
        self.dt = float(dt)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._scale = np.sqrt(self.dt)
        self.drawn = 0

    def next(self, n: int) -> np.ndarray:
        out = self._rng.standard_normal((int(n), self.dim))
        out *= self._scale
        self.drawn += int(n)
        return out


class _ZeroSource:
    def __init__(self, dim):
        self.dim = dim
        self.seed = None

    def next(self, n):
        return np.zeros((int(n), self.dim))


@dataclass
class TrajectoryState:
    """Current position plus the decimated occupation buffer.

    The last buffer entry stays open until it has absorbed
    ``decimation_stride`` raw steps, so ``total_weight`` always equals
    ``step * dt``.
    """

    t: float
    x: np.ndarray
    step: int = 0
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    count: int = 0
    block_fill: int = 0
    sum_wx: Optional[np.ndarray] = None
    sum_wp: float = 0.0
    total_weight: float = 0.0

    @classmethod
    def initial(cls, x0, capacity=1024) -> "TrajectoryState":
        x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
        d = x.size
        return cls(t=0.0, x=x, times=np.zeros(capacity), points=np.zeros((capacity, d)),
                   weights=np.zeros(capacity), sum_wx=np.zeros(d))

    @property
    def buffer_times(self):
        return self.times[:self.count]

    @property
    def buffer_points(self):
        return self.points[:self.count]

    @property
    def buffer_weights(self):
        return self.weights[:self.count]

    @property
    def buffer(self):
        return list(zip(self.buffer_times.tolist(), self.buffer_points.copy(), self.buffer_weights.tolist()))

    def occupation(self) -> OccupationMeasure:
        return OccupationMeasure(self.buffer_points.copy(), self.buffer_weights.copy())

    def _grow(self):
        cap = max(2 * self.times.size, 16)
        d = self.x.size
        times, points, weights = np.zeros(cap), np.zeros((cap, d)), np.zeros(cap)
        times[:self.count] = self.buffer_times
        points[:self.count] = self.buffer_points
        weights[:self.count] = self.buffer_weights
        self.times, self.points, self.weights = times, points, weights

    def append(self, t, x, weight, stride, m=None, two_k=2):
        """Absorb one raw step (time ``t``, position ``x``, weight ``weight``)."""
        if self.count == 0 or self.block_fill >= stride:
            if self.count >= self.times.size:
                self._grow()
            b = self.count
            self.weights[b] = weight
            self.count += 1
            self.block_fill = 1
        else:
            b = self.count - 1
            self.weights[b] += weight
            self.block_fill += 1
        self.times[b] = t
        self.points[b] = x
        self.sum_wx = self.sum_wx + weight * x
        if m is not None:
            self.sum_wp += weight * float(np.sum((x - m) ** 2)) ** (two_k // 2)
        self.total_weight += weight


def interaction_drift(state: TrajectoryState, W: Optional[PotentialSpec]) -> np.ndarray:
    """``(1/total_weight) * sum_i w_i grad W(x - x_i)`` over the buffer; zero when empty."""
    if W is None or state.count == 0 or state.total_weight == 0.0:
        return np.zeros_like(state.x)
    g = W.gradient(state.x - state.buffer_points)
    # cumsum accumulates in path order (ndarray.sum would use pairwise
    # summation), so this is the same floating-point sum as the direct loop
    return np.cumsum(state.buffer_weights[:, None] * g, axis=0)[-1] / state.total_weight


def brute_force_drift(x, path_points, path_weights, W: PotentialSpec) -> np.ndarray:
    """Sequential-sum oracle for :func:`interaction_drift`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = 0.0
    acc = np.zeros_like(x)
    for p, w in zip(np.asarray(path_points, dtype=float), np.asarray(path_weights, dtype=float)):
        acc = acc + w * W.gradient(x - np.atleast_1d(p))
        total += w
    return acc / total if total > 0 else acc


def _k_of(V, W):
    degrees = [V.growth_degree] + ([W.growth_degree] if W is not None else [])
    return max(degrees) // 2


def step_self_interacting(state: TrajectoryState, V: PotentialSpec, W: Optional[PotentialSpec],
                          config: SimConfig, dB) -> TrajectoryState:
    """One Euler-Maruyama step of the self-interacting diffusion, in place.

    The state is owned by the caller and is returned for chaining.
    """
    dB = np.atleast_1d(np.asarray(dB, dtype=float))
    if not np.all(np.isfinite(dB)):
        raise UsageError("Brownian increment must be finite")
    drift = V.gradient(state.x)
    if state.step >= config.warmup_steps:
        drift = drift + interaction_drift(state, W)
    x_new = state.x - drift * config.dt + config.sigma * dB
    if not np.all(np.isfinite(x_new)):
        raise ExplosionError(state.step, state.t)
    state.append(state.step * config.dt, state.x.copy(), config.dt, config.decimation_stride,
                 V.minimizer, 2 * _k_of(V, W))
    state.x = x_new
    state.step += 1
    state.t = state.step * config.dt
    return state


# -- trajectory containers -----------------------------------------------------

@dataclass
class Trajectory:
    """Decimated path (the occupation buffer) plus periodic records and the final state."""

    replica: int
    times: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    final_t: float
    final_x: np.ndarray
    steps: int
    record_t: np.ndarray
    record_x: np.ndarray
    record_w2k: np.ndarray
    seed: Optional[int] = None
    status: str = "done"

    def occupation(self, until: Optional[float] = None) -> OccupationMeasure:
        """Occupation measure of the buffer entries with time < ``until`` (all when None)."""
        if until is None:
            sel = slice(None)
        else:
            sel = self.times < until - 1e-12
        return OccupationMeasure(self.points[sel], self.weights[sel])

    def write_csv(self, path, append=False):
        write_trajectory_csv(path, [self], append=append)


@dataclass
class GapSeries:
    t: np.ndarray
    gap_sq: np.ndarray
    w2k: np.ndarray


@dataclass
class CoupledRun:
    replica: int
    x: Trajectory
    y_t: np.ndarray
    y_x: np.ndarray
    gap: GapSeries
    switch_time: float
    sup_gap: float
    sup_dist: float
    sup_abs_y: float
    constant_C: float
    contraction: float
    two_k: int

    @property
    def bound(self) -> float:
        """``C * sup W_2k(mu_t, delta_m) * (1 + sup|Y|^2k) / (alpha + rho)`` after the switch."""
        return self.constant_C * self.sup_dist * (1.0 + self.sup_abs_y ** self.two_k) / self.contraction

    @property
    def bound_holds(self) -> bool:
        return self.sup_gap <= self.bound * (1 + 1e-12) + 1e-300


@dataclass
class FlowPath:
    times: np.ndarray
    points: np.ndarray
    dt: float
    halvings: int
    refinement_gap: float
    terminal_distance: float
    in_domain: Optional[bool] = None


def write_trajectory_csv(path, trajectories, append=False):
    """Columns ``replica, t, x_1..x_d``; floats written with 17 significant digits."""
    trajectories = list(trajectories)
    d = trajectories[0].points.shape[1] if trajectories else 1
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(["replica", "t"] + [f"x_{i + 1}" for i in range(d)])
        for tr in trajectories:
            for t, p in zip(tr.times, tr.points):
                w.writerow([tr.replica, f"{t:.17g}"] + [f"{v:.17g}" for v in p])


def write_gap_csv(path, runs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "t", "gap_sq"])
        for run in runs:
            for t, g in zip(run.gap.t, run.gap.gap_sq):
                w.writerow([run.replica, f"{t:.17g}", f"{g:.17g}"])


# -- the stepping engine -------------------------------------------------------

class Engine:
    """Resumable integrator shared by every simulate_* entry point.

    ``frozen`` selects the frozen drift for X; ``switch_step`` (with
    ``coupled``) runs a second process Y on the same increments that copies X
    up to that step and follows the frozen drift afterwards. Quadratic and
    even-polynomial potentials go through the compiled kernel; radial
    profiles fall back to a pure-Python loop with identical semantics.
    """

    def __init__(self, V: PotentialSpec, W: Optional[PotentialSpec], config: SimConfig,
                 replica: int = 0, m=None, frozen: bool = False, coupled: bool = False,
                 switch_step: int = 0, domain=None, record_every: int = 0,
                 store_buffer: bool = True, tag: str = "brownian", noise=True,
                 capacity: Optional[int] = None):
        d = config.dim
        if V.dim != d:
            raise UsageError(f"V is {V.dim}-D but x0 is {d}-D")
        check_interaction(W, d)
        self.V, self.W, self.config = V, W, config
        self.replica = int(replica)
        self.m = V.minimizer if m is None else np.atleast_1d(np.asarray(m, dtype=float)).copy()
        self.frozen, self.coupled = bool(frozen), bool(coupled)
        self.switch_step = int(switch_step)
        self.domain = domain
        self.record_every = int(record_every)
        self.two_k = 2 * _k_of(V, W)
        self.fast = W is not None and W.kind == QUADRATIC
        # the generic memory drift reads the buffer, so it must be kept
        self.store_buffer = bool(store_buffer) or (W is not None and not frozen and not self.fast)
        if noise and config.sigma > 0:
            self.source = BrownianSource(config.master_seed, replica, d, config.dt, tag)
        else:
            self.source = _ZeroSource(d)
        vk = V.kernel_params()
        wk = W.kernel_params() if W is not None else (0, np.zeros(d), np.ones(d))
        self.compiled = vk is not None and wk is not None
        self._vk, self._wk = vk, wk
        if domain is not None and self.compiled:
            self._dom = domain.kernel_params(V, W, self.m)
        else:
            self._dom = (K.DOM_NONE, np.zeros(1))

        n_hint = config.n_steps // config.decimation_stride + 2
        cap = capacity or (min(n_hint, 1 << 16) if self.store_buffer else 1)
        self.state = TrajectoryState.initial(config.x0, capacity=max(cap, 1))
        self.y = config.x0.copy()
        self.fstate = np.zeros(K.F_SIZE)
        self.istate = np.zeros(K.I_SIZE, dtype=np.int64)
        self.prev = config.x0.copy()
        self._rec_t, self._rec_x, self._rec_y, self._rec_aux = [], [], [], []
        self.status = K.DONE

    # state accessors -------------------------------------------------------
    @property
    def step(self) -> int:
        return int(self.istate[K.I_STEP]) if self.compiled else self.state.step

    @property
    def t(self) -> float:
        return self.step * self.config.dt

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def snapshot(self) -> TrajectoryState:
        s = self.state
        if self.compiled:
            s.count = int(self.istate[K.I_COUNT])
            s.block_fill = int(self.istate[K.I_FILL])
            s.step = self.step
            s.t = self.t
            s.total_weight = float(self.fstate[K.F_SUM_W])
            s.sum_wp = float(self.fstate[K.F_SUM_WP])
        return s

    # stepping ---------------------------------------------------------------
    def advance(self, n_steps: int) -> int:
        """Run up to ``n_steps`` steps; stops early on domain exit. Returns the kernel status."""
        remaining = int(n_steps)
        while remaining > 0:
            n = min(remaining, CHUNK)
            dB = self.source.next(n)
            done = 0
            while done < n:
                status, taken = self._run(dB[done:])
                done += taken
                if status == K.BUFFER_FULL:
                    self.snapshot()._grow()
                    continue
                if status == K.EXPLODED:
                    self.status = status
                    raise ExplosionError(self.step, self.t)
                if status == K.EXITED:
                    self.status = status
                    return status
            remaining -= n
        self.status = K.DONE
        return K.DONE

    def _run(self, dB):
        rec_n = (dB.shape[0] // self.record_every + 1) if self.record_every > 0 else 0
        d = dB.shape[1]
        rec_t, rec_x = np.zeros(rec_n), np.zeros((rec_n, d))
        rec_y, rec_aux = np.zeros((rec_n, d)), np.zeros((rec_n, 2))
        self.istate[K.I_REC] = 0
        if self.compiled:
            s = self.state
            if s.sum_wx is None:
                s.sum_wx = np.zeros(d)
            status, taken = K.run_chunk(
                s.x, self.y, s.sum_wx, self.fstate, self.istate,
                s.times, s.points, s.weights, self.store_buffer,
                self._vk[0], self._vk[1], self._vk[2], self._wk[0], self._wk[1], self._wk[2],
                self.W is not None, self.fast, self.frozen, self.m, self.two_k,
                float(self.config.sigma), float(self.config.dt), dB,
                self.config.warmup_steps, self.config.decimation_stride,
                self.coupled, self.switch_step, self._dom[0], self._dom[1],
                self.record_every, rec_t, rec_x, rec_y, rec_aux, self.prev)
        else:
            status, taken = self._python_chunk(dB, rec_t, rec_x, rec_y, rec_aux)
        k = int(self.istate[K.I_REC])
        if k:
            self._rec_t.append(rec_t[:k])
            self._rec_x.append(rec_x[:k])
            self._rec_y.append(rec_y[:k])
            self._rec_aux.append(rec_aux[:k])
        return int(status), int(taken)

    def _python_chunk(self, dB, rec_t, rec_x, rec_y, rec_aux):
        cfg, V, W, m = self.config, self.V, self.W, self.m
        s = self.state
        f = self.fstate
        for i in range(dB.shape[0]):
            step = s.step
            drift = V.gradient(s.x)
            if W is not None:
                if self.frozen:
                    drift = drift + W.gradient(s.x - m)
                elif step >= cfg.warmup_steps and s.total_weight > 0:
                    drift = drift + interaction_drift(s, W)
            xn = s.x - drift * cfg.dt + cfg.sigma * dB[i]
            after = self.coupled and step >= self.switch_step
            if self.coupled:
                if after:
                    yd = V.gradient(self.y) + (W.gradient(self.y - m) if W is not None else 0.0)
                    yn = self.y - yd * cfg.dt + cfg.sigma * dB[i]
                else:
                    yn = xn.copy()
            else:
                yn = self.y
            if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(yn))):
                return K.EXPLODED, i
            if after and s.total_weight > 0:
                f[K.F_MAX_DIST] = max(f[K.F_MAX_DIST], (s.sum_wp / s.total_weight) ** (1.0 / self.two_k))
            x_old = s.x.copy()
            if self.store_buffer:
                s.append(step * cfg.dt, x_old, cfg.dt, cfg.decimation_stride, m, self.two_k)
            else:
                s.sum_wx = s.sum_wx + cfg.dt * x_old
                s.sum_wp += cfg.dt * float(np.sum((x_old - m) ** 2)) ** (self.two_k // 2)
                s.total_weight += cfg.dt
            self.prev = x_old
            s.x = xn
            self.y = yn
            s.step = step + 1
            s.t = s.step * cfg.dt
            f[K.F_SUM_W] = s.total_weight
            f[K.F_SUM_WP] = s.sum_wp
            if after:
                f[K.F_MAX_GAP] = max(f[K.F_MAX_GAP], float(np.linalg.norm(xn - yn)))
                f[K.F_MAX_Y] = max(f[K.F_MAX_Y], float(np.linalg.norm(yn)))
            if self.record_every > 0 and s.step % self.record_every == 0:
                k = int(self.istate[K.I_REC])
                rec_t[k] = s.t
                rec_x[k] = xn
                rec_y[k] = yn
                rec_aux[k, 0] = float(np.sum((xn - yn) ** 2))
                rec_aux[k, 1] = (s.sum_wp / s.total_weight) ** (1.0 / self.two_k)
                self.istate[K.I_REC] = k + 1
            if self.domain is not None and not self.domain.contains(xn):
                return K.EXITED, i + 1
        return K.DONE, dB.shape[0]

    # results ----------------------------------------------------------------
    def records(self):
        d = self.config.dim
        if not self._rec_t:
            return np.zeros(0), np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, 2))
        return (np.concatenate(self._rec_t), np.concatenate(self._rec_x),
                np.concatenate(self._rec_y), np.concatenate(self._rec_aux))

    def trajectory(self) -> Trajectory:
        s = self.snapshot()
        rt, rx, _, aux = self.records()
        return Trajectory(self.replica, s.buffer_times.copy(), s.buffer_points.copy(),
                          s.buffer_weights.copy(), self.t, s.x.copy(), self.step,
                          rt, rx, aux[:, 1].copy(), seed=getattr(self.source, "seed", None))


# -- public simulation entry points -------------------------------------------

def simulate_self_interacting(V: PotentialSpec, W: Optional[PotentialSpec], config: SimConfig,
                              stop: Optional[Callable[[TrajectoryState], bool]] = None,
                              replica: int = 0, record_every: int = 0,
                              tag: str = "brownian", check_every: int = 1) -> Trajectory:
    """Integrate up to ``config.t_end`` (or earlier if ``stop(state)`` is true).

    ``stop`` is evaluated every ``check_every`` steps. Output is a pure
    function of ``(config, replica, tag)``.
    """
    eng = Engine(V, W, config, replica=replica, record_every=record_every, tag=tag)
    n = config.n_steps
    if stop is None:
        eng.advance(n)
    else:
        check_every = max(1, int(check_every))
        while eng.step < n:
            eng.advance(min(check_every, n - eng.step))
            if stop(eng.snapshot()):
                break
    return eng.trajectory()


def simulate_frozen(V: PotentialSpec, W: Optional[PotentialSpec], m, config: SimConfig,
                    replica: int = 0, record_every: Optional[int] = None,
                    tag: str = "brownian") -> Trajectory:
    """Frozen diffusion; records the position every ``record_every`` steps (default: the stride)."""
    rec = config.decimation_stride if record_every is None else record_every
    eng = Engine(V, W, config, replica=replica, m=m, frozen=True, record_every=rec,
                 store_buffer=False, tag=tag)
    eng.advance(config.n_steps)
    return eng.trajectory()


def coupling_constant(W: Optional[PotentialSpec], radius: float) -> float:
    """Lipschitz constant of grad W over the ball of the given radius."""
    if W is None:
        return 0.0
    return W.hessian_norm_bound(radius)


def simulate_coupled(V: PotentialSpec, W: Optional[PotentialSpec], m, config: SimConfig,
                     T_switch: float, replica: int = 0, record_every: Optional[int] = None,
                     tag: str = "brownian") -> CoupledRun:
    """Self-interacting X and frozen Y on one Brownian path; Y copies X until ``T_switch``."""
    if T_switch < 0:
        raise UsageError("T_switch must be non-negative")
    rec = config.decimation_stride if record_every is None else record_every
    switch_step = int(np.ceil(T_switch / config.dt - 1e-9))
    eng = Engine(V, W, config, replica=replica, m=m, coupled=True, switch_step=switch_step,
                 record_every=rec, tag=tag)
    eng.advance(config.n_steps)
    traj = eng.trajectory()
    rt, _, ry, aux = eng.records()
    f = eng.fstate
    # the drift difference is bounded by Lip(grad W) * W_1 <= Lip * W_2k; the
    # Lipschitz constant is taken over the tube spanned by X - z and Y - m
    span = max(np.max(np.abs(traj.points)) if traj.points.size else 0.0,
               float(np.max(np.abs(ry))) if ry.size else 0.0,
               float(np.max(np.abs(traj.final_x))), float(np.max(np.abs(np.atleast_1d(m)))))
    radius = 2.0 * np.sqrt(config.dim) * span + 1.0
    C = coupling_constant(W, radius)
    contraction = V.convexity_lower_bound + (W.convexity_lower_bound if W is not None else 0.0)
    return CoupledRun(replica, traj, rt, ry, GapSeries(rt, aux[:, 0].copy(), aux[:, 1].copy()),
                      switch_step * config.dt, float(f[K.F_MAX_GAP]), float(f[K.F_MAX_DIST]),
                      float(f[K.F_MAX_Y]), C, contraction, eng.two_k)


def decimation_drift_gap(V: PotentialSpec, W: PotentialSpec, config: SimConfig, stride: int,
                         replica: int = 0, n_probe: int = 50):
    """Compare full and decimated interaction drifts along one stride-1 path.

    Returns ``(max_gap, bound)`` where ``bound = Lip(grad W) * max in-block
    displacement`` over the visited tube.
    """
    traj = simulate_self_interacting(V, W, config.replace(decimation_stride=1), replica=replica)
    pts, wts = traj.points, traj.weights
    n = pts.shape[0]
    blocks = [slice(i, min(i + stride, n)) for i in range(0, n, stride)]
    rep_pts = np.array([pts[b][-1] for b in blocks])
    rep_w = np.array([wts[b].sum() for b in blocks])
    disp = max(float(np.max(np.linalg.norm(pts[b] - pts[b][-1], axis=1))) for b in blocks)
    span = float(np.max(np.linalg.norm(pts, axis=1)))
    lip = W.hessian_norm_bound(2 * span + 1.0)
    gap = 0.0
    for i in np.linspace(1, n - 1, n_probe).astype(int):
        x = pts[i]
        # both measures cover exactly steps 0..i-1 only at block boundaries; probe there
        j = (i // stride) * stride
        if j == 0:
            continue
        full = (wts[:j, None] * W.gradient(x - pts[:j])).sum(0) / wts[:j].sum()
        nb = j // stride
        dec = (rep_w[:nb, None] * W.gradient(x - rep_pts[:nb])).sum(0) / rep_w[:nb].sum()
        gap = max(gap, float(np.linalg.norm(full - dec)))
    return gap, lip * disp


# -- zero-noise flows ----------------------------------------------------------

def _flow(V, W, x0, t_end, dt, frozen, m, domain, tol, max_halvings, stride):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m = V.minimizer if m is None else np.atleast_1d(np.asarray(m, dtype=float))

    def run(h, every):
        cfg = SimConfig(0.0, h, t_end, x0, decimation_stride=stride, warmup_steps=1)
        eng = Engine(V, W, cfg, m=m, frozen=frozen, record_every=every,
                     store_buffer=False, noise=False)
        eng.advance(cfg.n_steps)
        rt, rx, _, _ = eng.records()
        return np.concatenate([[0.0], rt]), np.vstack([x0[None, :], rx])

    n_coarse = int(round(t_end / dt))
    if abs(n_coarse * dt - t_end) > 1e-9 * t_end:
        raise UsageError("t_end must be a multiple of dt")
    times, coarse = run(dt, 1)
    gap = np.inf
    for level in range(1, max_halvings + 1):
        h = dt / 2**level
        _, fine = run(h, 2**level)
        gap = float(np.max(np.linalg.norm(fine - coarse, axis=1)))
        if gap < tol:
            inside = None
            if domain is not None:
                inside = bool(all(domain.contains(p) for p in fine))
            return FlowPath(times, fine, h, level, gap,
                            float(np.linalg.norm(fine[-1] - m)), inside)
        coarse = fine
    raise AccuracyError(f"step halving did not converge: last sup change {gap:.3e} >= {tol:g}")


def deterministic_flow(V: PotentialSpec, W: Optional[PotentialSpec], x0, t_end: float, dt: float,
                       domain=None, tol: float = 1e-6, max_halvings: int = 3,
                       decimation_stride: int = 1) -> FlowPath:
    """Noise-free self-interacting path with step-halving refinement.

    The sup-norm change between successive halvings, measured on the ``dt``
    grid, must drop below ``tol`` within ``max_halvings`` halvings.
    """
    return _flow(V, W, x0, t_end, dt, False, None, domain, tol, max_halvings, decimation_stride)


def frozen_flow(V: PotentialSpec, W: Optional[PotentialSpec], m, x, t_end: float, dt: float,
                domain=None, tol: float = 1e-6, max_halvings: int = 3) -> FlowPath:
    """Noise-free frozen flow from ``x`` towards ``m``."""
    return _flow(V, W, x, t_end, dt, True, m, domain, tol, max_halvings, 1)
