"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL: ...`` line (visible without
``-s``) and then asserts.  Run standalone with ``python3 tests/test_acceptance.py``.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from slipstokes.dense import DenseModel, check_size
from slipstokes.evolution import (TimeGrid, evolve, interp_norm, max_reg_ratio, mild_solution_oracle,
                                  pressure_ratio, weak_solution_residual)
from slipstokes.manufactured import (Azimuthal, RandomForcing, member_rng, random_smooth_data,
                                     random_tied_state, rigid_rotation_data, rigid_state, rotation)
from slipstokes.resolvent import ResolventFactor, apriori_ratio, solve_resolvent
from slipstokes.spaces import State, l2_error, x0_norm
from slipstokes.spectral import (DEFAULT_THETA, dense_resolvent_norm, korn_constants, resolvent_norm_estimate,
                                 sector_grid, sector_omega, sector_sweep)

from conftest import DISK, ELLIPSE, bundle

pytestmark = pytest.mark.slow

WEAK_TOL = 1e-9


@pytest.fixture
def report(capsys):
    def _report(n, checks):
        """``checks`` maps a description to ``(ok, value)``; prints one line and asserts all."""
        ok = all(c[0] for c in checks.values())
        detail = "; ".join(f"{k}={v[1]}{'' if v[0] else ' (FAIL)'}" for k, v in checks.items())
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return _report


def _orders(levels, errs):
    return [math.log(errs[i - 1] / errs[i]) / math.log(levels[i - 1] / levels[i]) for i in range(1, len(errs))]


def _zero(b):
    return State(np.zeros(b.n_u), np.zeros(b.n_b), tied=True)


def test_criterion_01_manufactured_resolvent(report):
    levels = (0.2, 0.1, 0.05)
    t0 = time.perf_counter()
    rel = []
    for h in levels:
        b = bundle(DISK, h, 1.0, 1.0)
        sol = solve_resolvent(b, 2 + 1j, rigid_rotation_data(b, 2 + 1j))
        e, n = l2_error(b, sol.u, rotation)
        rel.append(e / n)
    elapsed = time.perf_counter() - t0
    # the rotation lies in the discrete space, so its error is roundoff and carries no order;
    # the order is measured on a curved azimuthal solution over the same ladder
    az = []
    for h in levels:
        b = bundle(DISK, h, 1.0, 1.0)
        sol = solve_resolvent(b, 2 + 1j, Azimuthal.data(b, 2 + 1j))
        e, n = l2_error(b, sol.u, Azimuthal.velocity)
        az.append(e / n)
    orders = _orders(levels, az)
    report(1, {"rigid rel L2 error at h=0.05": (rel[-1] <= 1e-3, f"{rel[-1]:.2e}"),
               "azimuthal L2 orders": (min(orders) >= 2, [round(o, 2) for o in orders]),
               "runtime s": (elapsed <= 60, round(elapsed, 1))})


def test_criterion_02_uniqueness(report):
    cases = [("regime 1", DISK, -0.5, 2.5, True, None),
             ("regime 2", DISK, 1.0, 0.3j, True, None),
             ("regime 3", ELLIPSE, -0.1, 0.2 + 1j, False, -korn_constants(bundle(ELLIPSE, 0.5)).q2)]
    checks = {}
    for name, spec, alpha, lam, axi, a0 in cases:
        b = bundle(spec, 0.5 if spec is ELLIPSE else 0.4, alpha, 1.0)
        sol = solve_resolvent(b, lam, (np.zeros(b.n_u), np.zeros(b.n_b)), axisymmetric=axi, alpha0=a0)
        u_rel = np.abs(sol.u).max()
        # injectivity of the reduced operator on the divergence-free basis
        model = DenseModel(b)
        s = np.linalg.svd(lam * model.MH + model.Ah, compute_uv=False)
        ok = sol.diagnostics["regime"] is not None and u_rel <= 1e-12 and s[-1] / s[0] > 1e-10
        checks[name] = (ok, f"|u|={u_rel:.1e}, smin/smax={s[-1] / s[0]:.1e}")
    report(2, checks)


def test_criterion_03_apriori_estimate(report):
    alpha, beta = 1.0, 1.0
    omega = sector_omega(alpha, beta)
    rays = (0.0, np.pi / 4, -np.pi / 4, np.pi / 2, -np.pi / 2)
    lams = [omega + r * np.exp(1j * phi) for phi in rays for r in np.logspace(-1, 4, 12)]
    assert len(lams) >= 60 and all(z.real >= omega for z in lams)
    maxima = []
    for h in (0.2, 0.1):
        b = bundle(DISK, h, alpha, beta)
        data = [random_smooth_data(b, member_rng(30, k)) for k in range(5)]
        worst = 0.0
        for lam in lams:
            factor = ResolventFactor(b, lam)
            for F in data:
                worst = max(worst, apriori_ratio(solve_resolvent(b, lam, F, factor=factor), F))
        maxima.append(worst)
    drift = max(maxima) / min(maxima)
    report(3, {"n_lambda": (True, len(lams)),
               "max ratio per level": (all(np.isfinite(maxima)), [round(m, 4) for m in maxima]),
               "drift": (drift <= 2, round(drift, 4))})


def test_criterion_04_sectoriality(report):
    a0 = korn_constants(bundle(ELLIPSE, 0.1)).alpha0
    cases = [("disk(1,1)", DISK, 1.0), ("disk(0,1)", DISK, 0.0), (f"ellipse({-0.5 * abs(a0):.3f},1)", ELLIPSE,
                                                                 -0.5 * abs(a0))]
    checks = {}
    for name, spec, alpha in cases:
        omega = sector_omega(alpha, 1.0)
        grid = sector_grid(omega)
        cs = []
        for h in (0.2, 0.1):
            rep = sector_sweep(bundle(spec, h, alpha, 1.0), None, (DEFAULT_THETA, omega), grid, n_probes=2)
            cs.append(rep.c_sector)
        spread = max(cs) / min(cs)
        ok = all(np.isfinite(cs)) and spread <= 2
        checks[f"C_sector {name}"] = (ok, f"{[round(c, 3) for c in cs]} spread {spread:.3f}")
    dev = 0.0
    for spec, h, alpha in ((DISK, 0.4, 1.0), (DISK, 0.4, 0.0), (ELLIPSE, 0.5, -0.5 * abs(a0))):
        b = bundle(spec, h, alpha, 1.0)
        omega = sector_omega(alpha, 1.0)
        for lam in (omega + 0.5, omega + 3j, omega + 20 * np.exp(0.55j * np.pi)):
            est = resolvent_norm_estimate(b, None, lam, n_probes=3)
            dev = max(dev, abs(est / dense_resolvent_norm(b, lam) - 1))
    checks["power vs dense max rel dev"] = (dev <= 0.05, f"{dev:.2e}")
    report(4, checks)


def test_criterion_05_korn_dichotomy(report):
    levels = (0.2, 0.1, 0.05)
    disk = [korn_constants(bundle(DISK, h)) for h in levels]
    ell = [korn_constants(bundle(ELLIPSE, h)) for h in levels]
    dq = [r.q2 for r in disk]
    eq = [r.q2 for r in ell]
    var = (max(eq) - min(eq)) / min(eq)
    # the rotation is represented exactly, so the disk quotient sits at roundoff on every level;
    # that is the limit a decreasing sequence would approach
    report(5, {"disk q2 at h=0.05": (dq[-1] <= 1e-3, f"{dq[-1]:.1e}"),
               "disk q2 at roundoff on all levels": (max(dq) <= 1e-12, [f"{q:.1e}" for q in dq]),
               "ellipse q2": (min(eq) > 0, [round(q, 6) for q in eq]),
               "ellipse variation": (var <= 0.10, f"{var:.1e}"),
               "ellipse alpha0": (ell[-1].alpha0 < 0, round(ell[-1].alpha0, 6))})


def test_criterion_06_energy_decay(report):
    checks = {}
    for spec, h, alpha in ((DISK, 0.1, 0.0), (DISK, 0.1, 1.0), (ELLIPSE, 0.2, 0.0), (ELLIPSE, 0.2, 0.5)):
        b = bundle(spec, h, alpha, 1.0)
        tr = evolve(b, random_tied_state(b, member_rng(60, 0)), None, TimeGrid(4.0, 80))
        inc = float(np.max(np.diff(tr.h_norms)) / tr.h_norms[0])
        ok = inc <= 1e-14 and weak_solution_residual(b, tr) <= WEAK_TOL
        rate = tr.decay_rate()
        if alpha > 0:
            ok = ok and rate < 0
        checks[f"{spec.kind} alpha={alpha}"] = (ok, f"max rel increase {inc:.1e}, rate {rate:.3f}")
    report(6, checks)


def test_criterion_07_maximal_regularity(report):
    levels = ((0.2, 20), (0.1, 40), (0.05, 80))
    qs = (2.0, 4.0)
    mr = np.zeros((len(levels), len(qs), 10))
    pr = np.zeros_like(mr)
    weak = 0.0
    for i, (h, n) in enumerate(levels):
        b = bundle(DISK, h, 1.0, 1.0)
        for k in range(10):
            tr = evolve(b, _zero(b), RandomForcing(b, member_rng(0, k), 1.0), TimeGrid(1.0, n))
            weak = max(weak, weak_solution_residual(b, tr))
            for j, q in enumerate(qs):
                tq = dataclasses.replace(tr, q=q)
                mr[i, j, k], pr[i, j, k] = max_reg_ratio(tq), pressure_ratio(tq)
    checks = {}
    for name, r in (("max_reg", mr), ("pressure", pr)):
        spread = float((r.max(axis=2) / r.min(axis=2)).max())
        drift = float(np.abs(r[1:] / r[:-1] - 1).max())
        checks[f"{name} spread"] = (spread <= 2, round(spread, 3))
        checks[f"{name} drift"] = (drift <= 0.2, round(drift, 4))
        checks[f"{name} max"] = (bool(np.all(np.isfinite(r))), round(float(r.max()), 3))
    checks["weak residual"] = (weak <= WEAK_TOL, f"{weak:.1e}")
    report(7, checks)


def test_criterion_08_mild_solution_oracle(report):
    b = bundle(DISK, 0.4, 1.0, 1.0)
    check_size(b)
    U0 = random_tied_state(b, member_rng(80, 0))
    F = RandomForcing(b, member_rng(80, 1), 1.0)
    exact = mild_solution_oracle(b, U0, F, 1.0)
    steps = (10, 20, 40, 80)
    errs, weak = [], 0.0
    for n in steps:
        tr = evolve(b, U0, F, TimeGrid(1.0, n))
        weak = max(weak, weak_solution_residual(b, tr))
        U = tr.states[-1]
        errs.append(x0_norm(b, None, (U.u - exact.u, U.ub - exact.ub)))
    orders = _orders([1 / n for n in steps], errs)
    report(8, {"unknowns": (b.n_unknowns <= 400, b.n_unknowns),
               "dt orders": (all(0.8 <= o <= 1.2 for o in orders), [round(o, 3) for o in orders]),
               "weak residual": (weak <= WEAK_TOL, f"{weak:.1e}")})


def test_criterion_09_interpolation_equivalence(report):
    b = bundle(DISK, 0.4, 1.0, 1.0)
    ratios, hom = [], 0.0
    for q in (2.0, 4.0):
        for k in range(10):
            U = random_tied_state(b, member_rng(90, k))
            s = interp_norm(b, U, q, "semigroup")
            kf = interp_norm(b, U, q, "k_functional")
            ratios.append(s / kf)
            c = -2.5
            cU = State(c * U.u, c * U.ub, tied=True)
            hom = max(hom, abs(interp_norm(b, cU, q, "semigroup") / (abs(c) * s) - 1),
                      abs(interp_norm(b, cU, q, "k_functional") / (abs(c) * kf) - 1))
    report(9, {"ratio range": (0.1 <= min(ratios) and max(ratios) <= 10,
                               f"[{min(ratios):.3f}, {max(ratios):.3f}]"),
               "homogeneity rel dev": (hom <= 1e-8, f"{hom:.1e}")})


def test_criterion_10_weak_solution_and_shift(report):
    checks = {}
    worst_weak, worst_shift = 0.0, 0.0
    for spec, h, alpha in ((DISK, 0.1, 1.0), (ELLIPSE, 0.2, -0.1)):
        b = bundle(spec, h, alpha, 1.0)
        U0 = random_tied_state(b, member_rng(100, 0))
        F = RandomForcing(b, member_rng(100, 1), 1.0)
        g = TimeGrid(1.0, 20)
        a = evolve(b, U0, F, g)
        worst_weak = max(worst_weak, weak_solution_residual(b, a))
        for lam0 in (1.0, 5.0):
            s = evolve(b, U0, F, g, shift=lam0)
            worst_weak = max(worst_weak, weak_solution_residual(b, s))
            for Ua, Us in zip(a.states, s.states):
                ref = max(x0_norm(b, None, (Ua.u, Ua.ub)), 1e-300)
                worst_shift = max(worst_shift, x0_norm(b, None, (Ua.u - Us.u, Ua.ub - Us.ub)) / ref)
    checks["weak residual"] = (worst_weak <= WEAK_TOL, f"{worst_weak:.1e}")
    checks["shift trick rel dev"] = (worst_shift <= 1e-8, f"{worst_shift:.1e}")
    report(10, checks)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
