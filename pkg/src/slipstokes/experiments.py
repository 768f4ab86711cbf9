"""
Named studies driven by a YAML configuration, writing CSV/JSON reports and a manifest.

A configuration looks like::

    study: sweep
    domain: {kind: ellipse, a: 2, b: 1}
    alpha: -0.1
    beta: 1.0
    mesh: {h: 0.1}            # or {ladder: [0.2, 0.1, 0.05]}
    lambda_grid: {r_min: 0.1, r_max: 1.0e4, n_moduli: 9}
    seed: 0
    output: out/sweep

Keys not needed by a study are ignored.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .evolution import (TimeGrid, evolve, interp_norm, max_reg_ratio, mild_solution_oracle,
                        pressure_ratio, weak_solution_residual)
from .geometry import DomainSpec, Mesh, generate_mesh
from .manufactured import (Azimuthal, RandomForcing, member_rng, random_smooth_data,
                           random_tied_state, rigid_decay_forcing, rigid_rotation_data,
                           rigid_state, rotation)
from .resolvent import export_solution, solve_resolvent
from .spaces import State, assemble, l2_error, pressure_l2_error, x0_norm
from .spectral import DEFAULT_RAYS, DEFAULT_THETA, korn_constants, sector_grid, sector_omega, sector_sweep

log = logging.getLogger(__name__)

STUDIES = ("resolvent", "sweep", "korn", "evolve", "maxreg", "convergence", "interp")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentConfig:
    study: str
    domains: list
    alpha: float = 1.0
    beta: float = 1.0
    h: float | None = None
    ladder: list = field(default_factory=list)
    lambda_grid: dict = field(default_factory=dict)
    lambdas: list = field(default_factory=list)
    time: dict = field(default_factory=dict)
    q: list = field(default_factory=lambda: [2.0])
    ensemble: int = 10
    seed: int = 0
    output: str = "out"
    threads: int = 1
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw, *, study=None):
        raw = dict(raw or {})
        problems = []
        study = study or raw.get("study")
        if raw.get("study") not in (None, study):
            problems.append(f"study: config says {raw.get('study')!r} but {study!r} was requested")
        if study not in STUDIES:
            problems.append(f"study: must be one of {', '.join(STUDIES)}, got {study!r}")

        doms = raw.get("domains", raw.get("domain", {"kind": "disk", "radius": 1.0}))
        if isinstance(doms, dict):
            doms = [doms]
        domains = []
        for i, d in enumerate(doms or []):
            try:
                domains.append(DomainSpec.from_dict(d))
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"domain[{i}]: {exc}")
        if not doms:
            problems.append("domain: at least one domain is required")

        def num(key, default, cond=None, msg=""):
            v = raw.get(key, default)
            try:
                v = float(v)
            except (TypeError, ValueError):
                problems.append(f"{key}: not a number ({v!r})")
                return default
            if cond is not None and not cond(v):
                problems.append(f"{key}: {msg} (got {v})")
            return v

        alpha = num("alpha", 1.0)
        beta = num("beta", 1.0, lambda v: v > 0, "must be positive")

        mesh = raw.get("mesh", {}) or {}
        h = mesh.get("h")
        ladder = list(mesh.get("ladder", []) or [])
        for i, x in enumerate(([h] if h is not None else []) + ladder):
            if not isinstance(x, (int, float)) or not x > 0:
                problems.append(f"mesh: mesh sizes must be positive numbers (entry {i}: {x!r})")
        if h is None and not ladder:
            h = 0.1
        if study == "convergence" and len(ladder) < 3 and raw.get("options", {}).get("target", "resolvent") == "resolvent":
            problems.append(f"mesh.ladder: convergence needs at least 3 levels, got {len(ladder)}")

        grid = raw.get("lambda_grid", {}) or {}
        lambdas = []
        for i, z in enumerate(raw.get("lambdas", []) or []):
            try:
                lambdas.append(complex(*z) if isinstance(z, (list, tuple)) else complex(z))
            except (TypeError, ValueError):
                problems.append(f"lambdas[{i}]: not a complex number ({z!r})")
        if study == "sweep":
            if "points" in grid and not grid["points"]:
                problems.append("lambda_grid.points: empty lambda grid")
            if grid.get("n_moduli", 9) < 1 or grid.get("rays", DEFAULT_RAYS) == []:
                problems.append("lambda_grid: empty lambda grid")
            if not 0 < grid.get("r_min", 0.1) < grid.get("r_max", 1e4):
                problems.append("lambda_grid: need 0 < r_min < r_max")

        tcfg = raw.get("time", {}) or {}
        if study in ("evolve", "maxreg", "convergence", "interp"):
            T = tcfg.get("T_end", 1.0)
            n = tcfg.get("n_steps", 20)
            if not isinstance(T, (int, float)) or not T > 0 or math.isinf(T):
                problems.append(f"time.T_end: must be a finite positive number (got {T!r})")
            if not isinstance(n, int) or n < 2:
                problems.append(f"time.n_steps: must be an integer >= 2 (got {n!r})")
        qs = raw.get("q", [2.0])
        qs = qs if isinstance(qs, list) else [qs]
        for x in qs:
            if not isinstance(x, (int, float)) or not x > 1:
                problems.append(f"q: every exponent must exceed 1 (got {x!r})")
        ens = raw.get("ensemble", 10)
        if not isinstance(ens, int) or ens < 1:
            problems.append(f"ensemble: must be a positive integer (got {ens!r})")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            problems.append(f"seed: must be a nonnegative integer (got {seed!r})")
        threads = raw.get("threads", 1)
        if not isinstance(threads, int) or threads < 1:
            problems.append(f"threads: must be a positive integer (got {threads!r})")
        if problems:
            raise ConfigError(problems)
        return cls(study, domains, alpha, beta, h, ladder, grid, lambdas, tcfg,
                   [float(x) for x in qs], ens, seed, str(raw.get("output", "out")), threads,
                   dict(raw.get("options", {}) or {}))

    @classmethod
    def from_yaml(cls, path, **kw):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh), **kw)

    def to_dict(self):
        return {"study": self.study, "domains": [d.to_dict() for d in self.domains],
                "alpha": self.alpha, "beta": self.beta, "h": self.h, "ladder": self.ladder,
                "lambda_grid": self.lambda_grid, "lambdas": [[z.real, z.imag] for z in self.lambdas],
                "time": self.time, "q": self.q, "ensemble": self.ensemble, "seed": self.seed,
                "threads": self.threads, "options": self.options}

    @property
    def levels(self):
        return self.ladder or [self.h]

    @property
    def time_grid(self):
        return TimeGrid(float(self.time.get("T_end", 1.0)), int(self.time.get("n_steps", 20)))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def mesh_hash(mesh: Mesh):
    h = hashlib.sha256()
    for a in (mesh.vertices, mesh.triangles):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class Runner:
    """Carries the output directory, mesh cache and status flags of one run."""

    def __init__(self, config: ExperimentConfig, out=None):
        self.config = config
        self.out = Path(out or config.output)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = self.out / "mesh_cache"
        self.files = []
        self.meshes = {}
        self.flags = []

    def mesh(self, spec: DomainSpec, h):
        key = hashlib.sha256(json.dumps([spec.to_dict(), float(h)], sort_keys=True).encode()).hexdigest()[:16]
        path = self.cache / f"{key}.npz"
        if path.exists():
            m = Mesh.load(path)
        else:
            m = generate_mesh(spec, float(h))
            self.cache.mkdir(exist_ok=True)
            m.save(path)
        self.meshes[f"{spec.label}@h={h:g}"] = mesh_hash(m)
        return m

    def bundle(self, spec, h, alpha=None):
        c = self.config
        return assemble(self.mesh(spec, h), c.alpha if alpha is None else alpha, c.beta)

    def path(self, name):
        p = self.out / name
        self.files.append(p)
        return p

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)

    def manifest(self):
        cfg = json.dumps(self.config.to_dict(), sort_keys=True)
        data = {
            "study": self.config.study,
            "config_sha256": hashlib.sha256(cfg.encode()).hexdigest(),
            "config": self.config.to_dict(),
            "meshes": dict(sorted(self.meshes.items())),
            "versions": {"slipstokes": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__},
            "files": {p.name: _sha256(p) for p in self.files},
            "flags": self.flags,
        }
        path = self.out / "manifest.json"
        with open(path, "w") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def fitted_order(sizes, errors):
    """Least-squares slope of ``log error`` against ``log size``."""
    sizes, errors = np.asarray(sizes, float), np.asarray(errors, float)
    if np.any(errors <= 0):
        return float("inf")
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


@dataclass
class ConvergenceTable:
    target: str
    parameter: str
    levels: list
    errors: list
    orders: list
    fitted: float

    def rows(self):
        out = []
        for i, (lv, e) in enumerate(zip(self.levels, self.errors)):
            out.append([i, float(lv), float(e), float(self.orders[i - 1]) if i else ""])
        return out


# ---------------------------------------------------------------- studies


def _study_resolvent(r: Runner):
    c = r.config
    lams = c.lambdas or [complex(1, 1)]
    data_kind = c.options.get("data", "rigid_rotation")
    rows = []
    for spec in c.domains:
        for h in c.levels:
            b = r.bundle(spec, h)
            for i, lam in enumerate(lams):
                if data_kind == "rigid_rotation":
                    F, exact, pexact = rigid_rotation_data(b, lam), rotation, None
                elif data_kind == "azimuthal":
                    F, exact, pexact = Azimuthal.data(b, lam), Azimuthal.velocity, Azimuthal.pressure
                else:
                    F, exact, pexact = random_smooth_data(b, member_rng(c.seed, i)), None, None
                sol = solve_resolvent(b, lam, F)
                if sol.flag:
                    r.flags.append(f"{spec.label} h={h:g} lambda={lam}: {sol.flag}")
                err = l2_error(b, sol.u, exact) if exact else (float("nan"), float("nan"))
                perr = pressure_l2_error(b, sol.pressure, pexact)[0] if pexact else float("nan")
                rows.append([spec.label, float(h), lam.real, lam.imag, err[0],
                             err[0] / err[1] if exact else float("nan"), perr,
                             sol.diagnostics["residual_momentum"], sol.diagnostics["p_h1"], sol.flag or ""])
                if i == 0 and h == c.levels[-1]:
                    for p in export_solution(sol, str(r.out / f"solution_{spec.kind}")):
                        r.files.append(Path(p))
    r.write_csv("resolvent.csv", ["domain", "h", "re_lambda", "im_lambda", "l2_error", "rel_l2_error",
                                  "p_l2_error", "residual", "p_h1", "flag"], rows)
    r.write_json("resolvent.json", {"data": data_kind, "max_rel_error": max((x[5] for x in rows), default=None)})


def _study_sweep(r: Runner):
    c = r.config
    summary = []
    for spec in c.domains:
        for h in c.levels:
            b = r.bundle(spec, h)
            omega = c.lambda_grid.get("omega", sector_omega(c.alpha, c.beta))
            theta = c.lambda_grid.get("theta", DEFAULT_THETA)
            if "points" in c.lambda_grid:
                grid = [complex(*p) for p in c.lambda_grid["points"]]
            else:
                rays = c.lambda_grid.get("rays")
                rays = DEFAULT_RAYS if rays is None else [x * np.pi for x in rays]
                grid = sector_grid(omega, rays, c.lambda_grid.get("r_min", 0.1),
                                   c.lambda_grid.get("r_max", 1e4), c.lambda_grid.get("n_moduli", 9))
            rep = sector_sweep(b, None, (theta, omega), grid,
                               n_probes=c.options.get("n_probes", 2), threads=c.threads)
            tag = f"{spec.kind}_h{h:g}"
            rep.to_csv(r.path(f"sweep_{tag}.csv"))
            rep.to_json(r.path(f"sweep_{tag}.json"))
            for rec in rep.flagged:
                r.flags.append(f"{spec.label} h={h:g} lambda={rec.lam}: {rec.flag}")
            summary.append({"domain": spec.label, "h": h, **rep.summary()})
    r.write_json("sweep_summary.json", summary)


def _study_korn(r: Runner):
    c = r.config
    rows = []
    for spec in c.domains:
        for h in c.levels:
            rep = korn_constants(r.bundle(spec, h))
            rep.to_json(r.path(f"korn_{spec.kind}_h{h:g}.json"))
            rows.append([rep.domain, float(h), rep.q1, rep.q2, rep.alpha0])
    r.write_csv("korn.csv", ["domain", "h", "q1", "q2", "alpha0"], rows)


def _initial_state(b, kind, rng):
    if kind == "zero":
        return State(np.zeros(b.n_u), np.zeros(b.n_b), tied=True)
    if kind == "rigid":
        return rigid_state(b)
    if kind == "random":
        return random_tied_state(b, rng)
    raise ValueError(f"unknown initial state {kind!r}")


def _forcing(b, kind, rng, T_end):
    if kind == "zero":
        return None
    if kind == "rigid_decay":
        return rigid_decay_forcing(b)
    if kind == "random":
        return RandomForcing(b, rng, T_end)
    raise ValueError(f"unknown forcing {kind!r}")


def _study_evolve(r: Runner):
    c = r.config
    grid = c.time_grid
    for spec in c.domains:
        for h in c.levels:
            b = r.bundle(spec, h)
            U0 = _initial_state(b, c.options.get("initial", "random"), member_rng(c.seed, 0))
            F = _forcing(b, c.options.get("forcing", "zero"), member_rng(c.seed, 1), grid.T_end)
            tr = evolve(b, U0, F, grid, c.q[0])
            tag = f"{spec.kind}_h{h:g}"
            tr.to_csv(r.path(f"trace_{tag}.csv"))
            extra = {"weak_residual": weak_solution_residual(b, tr),
                     "monotone_h_norm": bool(np.all(np.diff(tr.h_norms) <= 1e-14 * tr.h_norms[0]))}
            if tr.f_lq > 0:
                extra["max_reg_ratio"] = max_reg_ratio(tr)
            tr.to_json(r.path(f"trace_{tag}.json"), extra)


def _study_maxreg(r: Runner):
    c = r.config
    grid = c.time_grid
    rows, summary = [], []
    for spec in c.domains:
        for h in c.levels:
            b = r.bundle(spec, h)
            zero = State(np.zeros(b.n_u), np.zeros(b.n_b), tied=True)
            for q in c.q:
                ratios = []
                for k in range(c.ensemble):
                    F = RandomForcing(b, member_rng(c.seed, k), grid.T_end)
                    tr = evolve(b, zero, F, grid, q)
                    mr, pr = max_reg_ratio(tr), pressure_ratio(tr)
                    ratios.append(mr)
                    rows.append([spec.label, float(h), grid.n_steps, q, k, mr, pr])
                summary.append({"domain": spec.label, "h": h, "n_steps": grid.n_steps, "q": q,
                                "max": max(ratios), "min": min(ratios),
                                "spread": max(ratios) / min(ratios)})
    r.write_csv("maxreg.csv", ["domain", "h", "n_steps", "q", "member", "max_reg_ratio",
                               "pressure_ratio"], rows)
    r.write_json("maxreg.json", summary)


def convergence_study(config: ExperimentConfig, runner: Runner | None = None) -> ConvergenceTable:
    """Errors against manufactured solutions over a refinement ladder, with fitted orders.

    ``options.target`` selects ``resolvent`` (mesh ladder, azimuthal solution on
    the unit disk) or ``evolve`` (step-count ladder ``time.ladder`` on the
    first mesh level, against the dense mild-solution oracle).
    """
    r = runner or Runner(config)
    c = config
    target = c.options.get("target", "resolvent")
    spec = c.domains[0]
    if target == "resolvent":
        if len(c.ladder) < 3:
            raise ConfigError([f"mesh.ladder: convergence needs at least 3 levels, got {len(c.ladder)}"])
        lam = c.lambdas[0] if c.lambdas else complex(2, 1)
        errs = []
        for h in c.ladder:
            b = r.bundle(spec, h)
            sol = solve_resolvent(b, lam, Azimuthal.data(b, lam))
            e, n = l2_error(b, sol.u, Azimuthal.velocity)
            errs.append(e / n)
        levels, param = list(c.ladder), "h"
    elif target == "evolve":
        steps = list(c.time.get("ladder", []))
        if len(steps) < 3:
            raise ConfigError([f"time.ladder: convergence needs at least 3 levels, got {len(steps)}"])
        T = float(c.time.get("T_end", 1.0))
        b = r.bundle(spec, c.levels[0])
        U0 = random_tied_state(b, member_rng(c.seed, 0))
        F = RandomForcing(b, member_rng(c.seed, 1), T)
        ref = mild_solution_oracle(b, U0, F, T)
        errs = []
        for n in steps:
            tr = evolve(b, U0, F, TimeGrid(T, int(n)))
            UN = tr.states[-1]
            errs.append(x0_norm(b, None, (UN.u - ref.u, UN.ub - ref.ub)))
        levels, param = [T / n for n in steps], "dt"
    else:
        raise ConfigError([f"options.target: unknown convergence target {target!r}"])
    orders = [math.log(errs[i - 1] / errs[i]) / math.log(levels[i - 1] / levels[i])
              for i in range(1, len(errs))]
    return ConvergenceTable(target, param, levels, errs, orders, fitted_order(levels, errs))


def _study_convergence(r: Runner):
    t = convergence_study(r.config, r)
    r.write_csv("convergence.csv", ["level", t.parameter, "error", "order"], t.rows())
    r.write_json("convergence.json", {"target": t.target, "parameter": t.parameter,
                                      "fitted_order": t.fitted, "orders": t.orders})


def _study_interp(r: Runner):
    c = r.config
    rows = []
    for spec in c.domains:
        b = r.bundle(spec, c.levels[0])
        for q in c.q:
            for k in range(c.ensemble):
                U = random_tied_state(b, member_rng(c.seed, k))
                s = interp_norm(b, U, q, "semigroup")
                kf = interp_norm(b, U, q, "k_functional")
                rows.append([spec.label, float(c.levels[0]), q, k, s, kf, s / kf])
    r.write_csv("interp.csv", ["domain", "h", "q", "member", "semigroup", "k_functional", "ratio"], rows)


_DISPATCH = {"resolvent": _study_resolvent, "sweep": _study_sweep, "korn": _study_korn,
             "evolve": _study_evolve, "maxreg": _study_maxreg, "convergence": _study_convergence,
             "interp": _study_interp}


def run(config: ExperimentConfig, out=None):
    """Run one study; returns ``(manifest path, flags)``."""
    r = Runner(config, out)
    _DISPATCH[config.study](r)
    return r.manifest(), r.flags
