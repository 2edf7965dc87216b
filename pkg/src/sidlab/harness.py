"""Experiment configuration, dispatch and reproducible output.

An experiment is described by one TOML file::

    experiment = "kramers"
    master_seed = 2024
    output_dir = "runs/kramers"      # optional; the CLI --out flag overrides it
    step_budget = 1e11               # cap on the estimated Euler step count

    [potentials.V]
    kind = "quadratic"
    curvature = 1.0
    center = [0.0]

    [potentials.W]                   # optional
    kind = "quadratic"
    curvature = 1.0

    [domain]                         # exit experiments only
    kind = "interval"
    lo = -1.0
    hi = 1.0

    [sim]                            # SimConfig fields
    dt = 0.01
    x0 = [0.0]

    [params]                         # experiment-specific knobs
    sigmas = [0.9, 0.8, 0.7, 0.6]
    replicas = 200
    delta = 0.4

Every run writes its outputs, the fully resolved config, a ``report.txt`` of
PASS/FAIL lines for the experiment's checks, and a ``manifest.json``.
Numerical checks never raise; only configuration and runtime errors do.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from . import __version__
from . import exit_lab, invariant_density as idens, occupation, potentials, sde
from .errors import BudgetError, ConfigurationError, SidlabError
from .seeding import default_workers, derive_seed, derive_seeds  # noqa: F401  (public re-export)

EXPERIMENTS = ("validate_assumptions", "flow_check", "invariant_fixed_point", "stabilisation",
               "coupling_gap", "kramers", "exit_location")

TOP_KEYS = {"experiment", "master_seed", "output_dir", "step_budget", "potentials", "domain",
            "sim", "params"}
SIM_KEYS = {"sigma", "dt", "t_end", "x0", "decimation_stride", "warmup_steps"}
PARAM_KEYS = {
    "validate_assumptions": {"radius", "n_per_axis"},
    "flow_check": {"t_end", "dt", "tol"},
    "invariant_fixed_point": {"sigmas", "lo", "hi", "n", "damping", "tol", "max_iter"},
    "stabilisation": {"sigmas", "kappa", "replicas", "checkpoints"},
    "coupling_gap": {"sigmas", "kappa", "replicas", "checkpoints", "horizon_factor"},
    "kramers": {"sigmas", "replicas", "delta", "t_max_factor", "frozen", "check_domain"},
    "exit_location": {"sigmas", "replicas", "delta", "t_max_factor", "margin", "bins", "frozen",
                      "check_domain"},
}
DEFAULT_BUDGET = 1e11


# -- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` is the resolved config written next to outputs."""

    experiment: str
    master_seed: int
    V: potentials.PotentialSpec
    W: Optional[potentials.PotentialSpec]
    domain: Optional[exit_lab.DomainSpec]
    sim: dict
    params: dict
    step_budget: float
    output_dir: Optional[str]
    raw: dict = field(repr=False)

    @property
    def tag(self) -> str:
        return self.experiment

    def sim_config(self, sigma: float, **overrides) -> sde.SimConfig:
        values = dict(self.sim)
        values.update(sigma=sigma, master_seed=self.master_seed)
        values.update(overrides)
        values.setdefault("x0", self.V.minimizer)
        return sde.SimConfig(**values)

    def hash(self) -> str:
        return hashlib.sha256(_canonical(self.raw).encode()).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(raw)


def _checkpoints(spec) -> list:
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "step"}
        if extra:
            raise ConfigurationError(f"unknown checkpoint keys: {sorted(extra)}")
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        n = int(round((stop - start) / step))
        return [start + i * step for i in range(n + 1)]
    return [float(c) for c in spec]


def _require(params, name, experiment):
    if name not in params:
        raise ConfigurationError(f"{experiment} needs params.{name}")
    return params[name]


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping; every problem is raised before any computation."""
    raw = copy.deepcopy(raw)
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    seed = raw.setdefault("master_seed", 0)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigurationError("master_seed must be an integer in [0, 2^64)")
    budget = float(raw.setdefault("step_budget", DEFAULT_BUDGET))
    pots = raw.get("potentials")
    if not isinstance(pots, dict) or "V" not in pots or set(pots) - {"V", "W"}:
        raise ConfigurationError("potentials must define V and optionally W")
    V = potentials.from_config(pots["V"], role="V")
    W = potentials.from_config(pots["W"], role="W") if "W" in pots else None
    if W is not None:
        potentials.check_interaction(W, V.dim)

    sim = dict(raw.setdefault("sim", {}))
    extra = set(sim) - SIM_KEYS
    if extra:
        raise ConfigurationError(f"unknown sim keys: {sorted(extra)}")
    if "x0" in sim:
        x0 = np.atleast_1d(np.asarray(sim["x0"], dtype=float))
        if x0.size != V.dim:
            raise ConfigurationError("sim.x0 dimension does not match V")
        sim["x0"] = x0

    params = dict(raw.setdefault("params", {}))
    extra = set(params) - PARAM_KEYS[exp]
    if extra:
        raise ConfigurationError(f"unknown params for {exp}: {sorted(extra)}")
    if "checkpoints" in params:
        params["checkpoints"] = _checkpoints(params["checkpoints"])
    if "sigmas" in params:
        params["sigmas"] = [float(s) for s in params["sigmas"]]
        if not params["sigmas"] or min(params["sigmas"]) <= 0:
            raise ConfigurationError("params.sigmas must be a non-empty list of positive numbers")

    domain = None
    if "domain" in raw:
        domain = _domain(raw["domain"], V, W)
    elif exp in ("kramers", "exit_location"):
        raise ConfigurationError(f"{exp} needs a [domain] table")

    cfg = ExperimentConfig(exp, seed, V, W, domain, sim, params, budget,
                           raw.get("output_dir"), raw)
    _validate_experiment(cfg)
    return cfg


def _domain(rec, V, W):
    rec = dict(rec)
    kind = rec.pop("kind", None)
    try:
        if kind == "interval":
            d = exit_lab.interval(rec.pop("lo"), rec.pop("hi"))
        elif kind == "ball":
            d = exit_lab.ball(rec.pop("center"), rec.pop("radius"))
        elif kind == "level_set":
            d = exit_lab.level_set(rec.pop("level"), V, W)
        else:
            raise ConfigurationError(f"unknown domain kind {kind!r}")
    except KeyError as exc:
        raise ConfigurationError(f"domain {kind} is missing {exc}") from None
    if rec:
        raise ConfigurationError(f"unknown domain keys: {sorted(rec)}")
    if d.dim != V.dim:
        raise ConfigurationError("domain dimension does not match V")
    d.check(V.minimizer)
    return d


def estimated_steps(cfg: ExperimentConfig) -> float:
    """Upper estimate of the Euler steps an experiment will take."""
    p, s = cfg.params, cfg.sim
    if cfg.experiment in ("validate_assumptions", "invariant_fixed_point"):
        return 0.0
    if cfg.experiment == "flow_check":
        return 2 * 16 * p["t_end"] / p["dt"]
    dt = s.get("dt", 0.01)
    if cfg.experiment == "stabilisation":
        return len(p["sigmas"]) * p["replicas"] * p["checkpoints"][-1] / dt
    if cfg.experiment == "coupling_gap":
        per = p["checkpoints"][-1] * (1 + p.get("horizon_factor", 10.0))
        return len(p["sigmas"]) * p["replicas"] * per / dt
    H = exit_lab.exit_cost(cfg.domain, cfg.V, cfg.W, cfg.V.minimizer)
    delta = p.get("delta", 0.4)
    return sum(p["replicas"] * _t_max_policy(cfg)(sg, H, delta) / exit_lab.default_dt(sg)
               for sg in p["sigmas"])


def _t_max_policy(cfg):
    factor = float(cfg.params.get("t_max_factor", 3.0))
    return lambda sigma, H, delta: factor * math.exp(2.0 * (H + delta) / sigma**2)


def _validate_experiment(cfg: ExperimentConfig):
    exp, p = cfg.experiment, cfg.params
    if exp == "validate_assumptions" and cfg.W is None:
        raise ConfigurationError("validate_assumptions needs potentials.W")
    if exp == "flow_check":
        for k in ("t_end", "dt"):
            _require(p, k, exp)
    elif exp == "invariant_fixed_point":
        for k in ("sigmas", "lo", "hi", "n"):
            _require(p, k, exp)
        if cfg.V.dim != 1:
            raise ConfigurationError("invariant_fixed_point is one-dimensional")
        for sg in p["sigmas"]:
            idens.FixedPointConfig(sg, p["lo"], p["hi"], p["n"], p.get("damping", 0.5),
                                   p.get("tol", 1e-10), p.get("max_iter", 2000))
    elif exp in ("stabilisation", "coupling_gap"):
        for k in ("sigmas", "kappa", "replicas", "checkpoints"):
            _require(p, k, exp)
        if p["replicas"] < 30:
            raise ConfigurationError("at least 30 replicas are required")
        if "dt" not in cfg.sim:
            raise ConfigurationError(f"{exp} needs sim.dt")
    elif exp in ("kramers", "exit_location"):
        for k in ("sigmas", "replicas"):
            _require(p, k, exp)
        if np.any(np.diff(p["sigmas"]) >= 0):
            raise ConfigurationError("params.sigmas must be strictly decreasing")
        if p.get("t_max_factor", 3.0) < 1.0:
            raise BudgetError("t_max_factor < 1 truncates the window exp(2 (H + delta) / sigma^2)")
    steps = estimated_steps(cfg)
    if steps > cfg.step_budget:
        raise BudgetError(f"estimated {steps:.3g} Euler steps exceed step_budget {cfg.step_budget:.3g}")


# -- reports and manifest ---------------------------------------------------------

@dataclass
class Report:
    lines: list = field(default_factory=list)

    def check(self, name: str, passed: bool, detail: str = ""):
        self.lines.append((name, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.lines)

    def text(self) -> str:
        return "".join(f"{'PASS' if ok else 'FAIL'} {name}{': ' + d if d else ''}\n"
                       for name, ok, d in self.lines)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    outputs: dict
    wall_clock_s: float
    seeds: dict
    passed: bool
    out_dir: str

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version, "outputs": self.outputs,
                "wall_clock_s": self.wall_clock_s, "seeds": self.seeds, "passed": self.passed}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolved(raw: dict) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v
    return conv(raw)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> RunManifest:
    """Run one experiment and write its outputs under ``out_dir``.

    Output files depend only on the config, never on ``workers``.
    """
    out = Path(out_dir or cfg.output_dir or f"runs/{cfg.experiment}")
    out.mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else workers
    start = time.perf_counter()
    report = Report()
    seeds: dict = {}
    try:
        RUNNERS[cfg.experiment](cfg, out, report, seeds, workers)
    except SidlabError as exc:
        raise type(exc)(f"{cfg.experiment}: {exc}") from exc
    (out / "report.txt").write_text(report.text())
    with open(out / "config.resolved.json", "w") as fh:
        json.dump(_resolved(cfg.raw), fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    manifest = RunManifest(cfg.hash(), __version__, outputs, time.perf_counter() - start,
                           seeds, report.passed, str(out))
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _seed_list(cfg, tag, n):
    return [int(s) for s in derive_seeds(cfg.master_seed, tag, np.arange(n))]


# -- experiments -------------------------------------------------------------------

def _validate_assumptions(cfg, out, report, seeds, workers):
    p = cfg.params
    grid = potentials.ball_grid(cfg.V.minimizer, p.get("radius", 10.0),
                                p.get("n_per_axis", 201 if cfg.V.dim == 1 else 41))
    rep = potentials.validate_assumptions(cfg.V, cfg.W, grid)
    with open(out / "validation.json", "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    for name, chk in rep.checks.items():
        if chk.required:
            report.check(f"assumption {name}", chk.passed)


def _closed_form(V, rate_extra, x0, t):
    """m + (x0 - m) exp(-(c_i + extra) t) per axis for a diagonal quadratic V."""
    c = np.asarray(V.curvature, dtype=float) * np.ones(V.dim)
    m = V.minimizer
    return m + (x0 - m) * np.exp(-np.outer(t, c + rate_extra))


def _write_flow(path, flow):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(flow.points.shape[1])])
        for t, x in zip(flow.times, flow.points):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x])


def _flow_check(cfg, out, report, seeds, workers):
    p = cfg.params
    x0 = cfg.sim.get("x0", cfg.V.minimizer + 1.0)
    tol = p.get("tol", 1e-6)
    m = cfg.V.minimizer
    flow = sde.deterministic_flow(cfg.V, cfg.W, x0, p["t_end"], p["dt"], tol=tol, domain=cfg.domain)
    frozen = sde.frozen_flow(cfg.V, cfg.W, m, x0, p["t_end"], p["dt"], tol=tol, domain=cfg.domain)
    _write_flow(out / "flow.csv", flow)
    _write_flow(out / "frozen_flow.csv", frozen)
    quad_V = cfg.V.kind == potentials.QUADRATIC
    if quad_V:
        # the closed form exists only without interaction, so check the W = 0 flow separately
        bare = flow
        if cfg.W is not None:
            bare = sde.deterministic_flow(cfg.V, None, x0, p["t_end"], p["dt"], tol=tol)
            _write_flow(out / "flow_no_interaction.csv", bare)
        dev = float(np.max(np.abs(bare.points - _closed_form(cfg.V, 0.0, x0, bare.times))))
        report.check("deterministic flow (W = 0) matches closed form", dev <= tol,
                     f"max deviation {dev:.3e}")
    if quad_V and (cfg.W is None or cfg.W.kind == potentials.QUADRATIC):
        alpha = 0.0 if cfg.W is None else np.asarray(cfg.W.curvature) * np.ones(cfg.V.dim)
        dev = float(np.max(np.abs(frozen.points - _closed_form(cfg.V, alpha, x0, frozen.times))))
        report.check("frozen flow matches closed form", dev <= tol, f"max deviation {dev:.3e}")
    report.check("deterministic flow approaches m", flow.terminal_distance < np.linalg.norm(x0 - m) or
                 flow.terminal_distance == 0.0, f"terminal distance {flow.terminal_distance:.3e}")
    if cfg.domain is not None:
        report.check("deterministic flow stays in domain", bool(flow.in_domain))


def _fixed_point(cfg, out, report, seeds, workers):
    p = cfg.params
    quad = cfg.V.kind == potentials.QUADRATIC and (cfg.W is None or cfg.W.kind == potentials.QUADRATIC)
    for sg in p["sigmas"]:
        fp = idens.FixedPointConfig(sg, p["lo"], p["hi"], p["n"], p.get("damping", 0.5),
                                    p.get("tol", 1e-10), p.get("max_iter", 2000))
        rho, diag = idens.solve_fixed_point(cfg.V, cfg.W, fp)
        rho.write_csv(out / f"density_sigma{sg:g}.csv")
        diag.write_json(out / f"diagnostics_sigma{sg:g}.json")
        if quad:
            curv = float(np.atleast_1d(cfg.V.curvature)[0]) + (
                0.0 if cfg.W is None else float(np.atleast_1d(cfg.W.curvature)[0]))
            oracle = sg**2 / (2 * curv)
            var = rho.variance()
            report.check(f"variance at sigma={sg:g} within 1% of {oracle:.6g}",
                         abs(var / oracle - 1) <= 0.01, f"variance {var:.10g}")


def _stabilisation(cfg, out, report, seeds, workers):
    p = cfg.params
    cps = p["checkpoints"]
    t_hats = {}
    for sg in p["sigmas"]:
        sim = cfg.sim_config(sg, t_end=cps[-1])
        est = occupation.estimate_stabilisation_time(cfg.V, cfg.W, sim, p["kappa"], p["replicas"],
                                                     cps, workers=workers, tag="stabilisation")
        est.write_csv(out / f"stabilisation_sigma{sg:g}.csv")
        t_hats[sg] = est.t_hat
        report.check(f"t_hat finite at sigma={sg:g}", est.stabilised,
                     f"t_hat={est.t_hat}, trailing mean {est.trailing_mean:.4g}")
    seeds["stabilisation"] = _seed_list(cfg, "stabilisation", p["replicas"])
    ordered = sorted(t_hats, reverse=True)
    for hi, lo in zip(ordered, ordered[1:]):
        if t_hats[hi] is not None and t_hats[lo] is not None:
            report.check(f"t_hat({lo:g}) <= 1.25 t_hat({hi:g})", t_hats[lo] <= 1.25 * t_hats[hi])


def _coupling_gap(cfg, out, report, seeds, workers):
    from .seeding import map_replicas
    p = cfg.params
    cps = p["checkpoints"]
    factor = p.get("horizon_factor", 10.0)
    rows = []
    for sg in p["sigmas"]:
        sim = cfg.sim_config(sg, t_end=cps[-1])
        est = occupation.estimate_stabilisation_time(cfg.V, cfg.W, sim, p["kappa"], p["replicas"],
                                                     cps, workers=workers, tag="coupling")
        if est.t_hat is None:
            report.check(f"t_hat finite at sigma={sg:g}", False)
            continue
        th = est.t_hat
        horizon = sim.replace(t_end=factor * th)
        runs = map_replicas(lambda i: sde.simulate_coupled(cfg.V, cfg.W, cfg.V.minimizer, horizon, th,
                                                           replica=i, tag="coupling"),
                            p["replicas"], workers)
        sde.write_gap_csv(out / f"gap_sigma{sg:g}.csv", runs)
        med = float(np.median([r.sup_gap for r in runs]))
        frac = float(np.mean([r.bound_holds for r in runs]))
        rows.append((sg, th, med, frac))
        report.check(f"pathwise bound holds for >= 95% of replicas at sigma={sg:g}", frac >= 0.95,
                     f"{frac:.3f}")
    seeds["coupling"] = _seed_list(cfg, "coupling", p["replicas"])
    with open(out / "coupling_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "t_hat", "median_sup_gap", "bound_fraction"])
        for r in rows:
            w.writerow([f"{r[0]:.17g}", f"{r[1]:.17g}", f"{r[2]:.17g}", f"{r[3]:.17g}"])
    meds = [r[2] for r in sorted(rows, reverse=True)]
    report.check("median sup-gap decreases as sigma decreases",
                 len(meds) > 1 and all(b < a for a, b in zip(meds, meds[1:])),
                 ", ".join(f"{g:.4g}" for g in meds))


def _sweep(cfg, workers):
    p = cfg.params
    return exit_lab.kramers_sweep(cfg.V, cfg.W, cfg.domain, p["sigmas"], p["replicas"],
                                  delta=p.get("delta", 0.4), x0=cfg.sim.get("x0"),
                                  t_max_policy=_t_max_policy(cfg),
                                  master_seed=cfg.master_seed,
                                  warmup_steps=cfg.sim.get("warmup_steps", 1),
                                  decimation_stride=cfg.sim.get("decimation_stride", 1000),
                                  frozen=p.get("frozen", False), step_budget=cfg.step_budget,
                                  workers=workers, check_domain=p.get("check_domain", True),
                                  tag=cfg.experiment)


def _kramers_seeds(cfg, seeds):
    for sg in cfg.params["sigmas"]:
        tag = f"{cfg.experiment}:{sg!r}"
        seeds[tag] = _seed_list(cfg, tag, cfg.params["replicas"])


def _kramers(cfg, out, report, seeds, workers):
    res = _sweep(cfg, workers)
    res.write_csv(out / "kramers.csv")
    _kramers_seeds(cfg, seeds)
    for r in res.rows:
        report.check(f"row sigma={r.sigma:g} usable (<= 50% timed out)", r.usable,
                     f"{r.timed_out_count} timed out")
    report.check("|rate - H| non-increasing up to one inversion", res.gap_trend_ok,
                 ", ".join(f"{g:.4g}" for g in res.gaps))
    report.check("in-window fraction non-decreasing as sigma decreases", res.window_trend_ok,
                 ", ".join(f"{r.in_window_fraction:.3f}" for r in res.rows))


def _exit_location(cfg, out, report, seeds, workers):
    p = cfg.params
    res = _sweep(cfg, workers)
    res.write_csv(out / "kramers.csv")
    _kramers_seeds(cfg, seeds)
    margin = float(p.get("margin", 0.5))
    loc = exit_lab.exit_location_stats(res.records, cfg.domain, cfg.V, cfg.W, cfg.V.minimizer,
                                       margin, bins=int(p.get("bins", 10)))
    loc.write_csv(out / "location.csv")
    report.check("fraction of exits in N non-increasing as sigma decreases", loc.monotone_ok,
                 ", ".join(f"{r.frac_in_N:.3f}" for r in loc.rows))


RUNNERS = {
    "validate_assumptions": _validate_assumptions,
    "flow_check": _flow_check,
    "invariant_fixed_point": _fixed_point,
    "stabilisation": _stabilisation,
    "coupling_gap": _coupling_gap,
    "kramers": _kramers,
    "exit_location": _exit_location,
}
