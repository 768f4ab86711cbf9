import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipstokes.dense import DenseModel
from slipstokes.manufactured import (member_rng, random_smooth_data, random_tied_state,
                                     rigid_rotation_data, rotation)
from slipstokes.resolvent import (ResolventError, ResolventFactor, ZeroDataError, admissible_regime,
                                  apply_A, apriori_ratio, elliptic_regularity_ratio, export_solution,
                                  solve_resolvent)
from slipstokes.spaces import (interpolate_pressure, interpolate_velocity, l2_error,
                               pressure_l2_error, v_norm, x0_norm)

from conftest import DISK, ELLIPSE, bundle


def _zero(b):
    return np.zeros(b.n_u), np.zeros(b.n_b)


def _check_invariants(sol):
    b = sol.bundle
    d = sol.diagnostics
    assert abs(d["p_mean"]) <= 1e-10 * max(b.pressure_l2(sol.pressure), 1e-300) or abs(d["p_mean"]) < 1e-14
    assert np.abs(sol.ub - b.T @ sol.u).max() == 0
    assert d["residual_momentum"] <= 1e-10 and d["residual_divergence"] <= 1e-10


def test_regimes():
    assert admissible_regime(1.0, 1.0, 1.0) == 1
    assert admissible_regime(-1.0, 1.0, 3.9) is None
    assert admissible_regime(-1.0, 2.0, 2.0) == 1
    assert admissible_regime(0.5, 1.0, 0.1j) == 2
    assert admissible_regime(0.5, 1.0, 0.0) is None
    assert admissible_regime(-0.1, 1.0, 0.2, axisymmetric=False, alpha0=-0.27) == 3
    assert admissible_regime(-0.1, 1.0, 0.2, axisymmetric=True, alpha0=-0.27) is None
    assert admissible_regime(-0.3, 1.0, 0.2, axisymmetric=False, alpha0=-0.27) is None


def test_zero_data_zero_solution(disk_mid):
    sol = solve_resolvent(disk_mid, 1 + 1j, _zero(disk_mid))
    assert np.all(sol.u == 0) and np.all(sol.pressure == 0)


@pytest.mark.parametrize("alpha,beta,lam", [(1.0, 1.0, 2.0), (0.5, 2.0, 1 + 3j), (1.0, 1.0, 0.5j),
                                            (-0.25, 1.0, 1.0 - 40j)])
def test_rigid_rotation_reproduced(disk_fine, alpha, beta, lam):
    b = disk_fine.with_params(alpha, beta)
    sol = solve_resolvent(b, lam, rigid_rotation_data(b, lam))
    err, nrm = l2_error(b, sol.u, rotation)
    assert err <= 1e-3 * nrm
    assert b.pressure_h1(sol.pressure) <= 1e-8
    _check_invariants(sol)


def test_gradient_forcing_goes_to_pressure():
    errs, perrs = [], []
    for h in (0.2, 0.1):
        b = bundle(DISK, h, 1.0, 1.0)
        f = interpolate_velocity(b, lambda x, y: (2 * x, -2 * y), full=True)
        sol = solve_resolvent(b, 1.0, (f, np.zeros(b.n_b)))
        errs.append(b.l2_norm(sol.u) / b.l2_norm(f))
        # x^2 - y^2 already has zero mean on the disk
        perrs.append(pressure_l2_error(b, sol.pressure, lambda x, y: x * x - y * y)[0])
    assert errs[1] < errs[0] and errs[1] < 0.05
    assert perrs[1] < perrs[0] and perrs[1] < 0.02


def test_apply_A_rigid_rotation(disk_fine):
    b0 = disk_fine.with_params(0.0, 1.0)
    u = interpolate_velocity(b0, rotation)
    AU = apply_A(b0, u)
    assert b0.l2_norm(AU.u) <= 1e-6 and np.abs(AU.ub).max() <= 1e-6
    b1 = disk_fine.with_params(1.0, 2.0)
    AU = apply_A(b1, u)
    assert b1.l2_norm(AU.u) <= 1e-6
    np.testing.assert_allclose(AU.ub, -0.5, atol=1e-6)
    assert not AU.tied


def test_consistency_on_manufactured_rotation(disk_fine):
    b = disk_fine.with_params(1.0, 2.0)
    lam = 3 - 2j
    F = rigid_rotation_data(b, lam)
    f = b.restrict(F[0])
    sol = solve_resolvent(b, lam, (f, F[1]))
    AU = apply_A(b, sol.u)
    res = (lam * sol.u - AU.u - f, lam * sol.ub - AU.ub - F[1])
    assert x0_norm(b, None, res) <= 1e-8 * x0_norm(b, None, (f, F[1]))


@pytest.mark.parametrize("lam", [2.0, 1 + 5j, 30j])
def test_resolvent_inverts_lambda_minus_A(disk_mid, lam):
    b = disk_mid
    U = random_tied_state(b, member_rng(5, 0))
    AU = apply_A(b, U.u)
    F = (lam * U.u - AU.u, lam * U.ub - AU.ub)
    sol = solve_resolvent(b, lam, F)
    assert x0_norm(b, None, (sol.u - U.u, sol.ub - U.ub)) <= 1e-8 * x0_norm(b, None, F)


def test_consistency_converges_for_smooth_data():
    rel = []
    for h in (0.4, 0.2, 0.1):
        b = bundle(DISK, h, 1.0, 1.0)
        F = random_smooth_data(b, member_rng(3, 0))
        lam = 2 + 1j
        sol = solve_resolvent(b, lam, F)
        AU = apply_A(b, sol.u)
        res = (lam * sol.u - AU.u - F[0], lam * sol.ub - AU.ub - F[1])
        rel.append(x0_norm(b, None, res) / x0_norm(b, None, F))
    assert rel[0] > rel[1] > rel[2]


def test_apriori_ratio_closed_form(disk_fine):
    b = disk_fine.with_params(1.0, 1.0)
    lam = 10.0
    F = rigid_rotation_data(b, lam)
    sol = solve_resolvent(b, lam, F)
    a, c = math.sqrt(math.pi / 2), math.sqrt(2 * math.pi)
    oracle = lam * (a + c) / (lam * a + (lam + 1) * c)
    assert apriori_ratio(sol, F) == pytest.approx(oracle, rel=1e-3)


def test_elliptic_ratio_closed_form(disk_fine):
    b = disk_fine.with_params(1.0, 2.0)
    lam = 4.0
    F = rigid_rotation_data(b, lam)
    sol = solve_resolvent(b, lam, F)
    a, c = math.sqrt(math.pi / 2), math.sqrt(2 * math.pi)
    oracle = (c + a) / (lam * a + (lam + 0.5) * c)
    assert elliptic_regularity_ratio(sol, F) == pytest.approx(oracle, rel=1e-3)


def test_ratios_reject_zero_data(disk_mid):
    sol = solve_resolvent(disk_mid, 1.0, _zero(disk_mid))
    with pytest.raises(ZeroDataError):
        apriori_ratio(sol, _zero(disk_mid))
    with pytest.raises(ZeroDataError):
        elliptic_regularity_ratio(sol, _zero(disk_mid))


def test_apriori_ratio_bounded_over_doubling_lambda(disk_mid):
    b = disk_mid
    F = random_smooth_data(b, member_rng(11, 0))
    ratios = []
    for k in range(12):
        lam = (1 + 1j) * 2.0 ** k
        ratios.append(apriori_ratio(solve_resolvent(b, lam, F), F))
    env = max(ratios)
    assert np.isfinite(env) and env < 10
    for r0, r1 in zip(ratios, ratios[1:]):
        assert r1 <= 2 * env and r1 <= 2 * r0 + 1e-12


def test_elliptic_ratio_mesh_stable():
    vals = []
    for h in (0.2, 0.1):
        b = bundle(DISK, h, 1.0, 1.0)
        F = random_smooth_data(b, member_rng(2, 0))
        vals.append(elliptic_regularity_ratio(solve_resolvent(b, 1 + 1j, F), F))
    assert max(vals) / min(vals) <= 2


def test_linearity(disk_mid):
    b = disk_mid
    F1 = random_smooth_data(b, member_rng(1, 0))
    F2 = random_smooth_data(b, member_rng(1, 1))
    a, c = 2 - 1j, 0.5j
    lam = 1.5 + 2j
    factor = ResolventFactor(b, lam)
    s1 = solve_resolvent(b, lam, F1, factor=factor)
    s2 = solve_resolvent(b, lam, F2, factor=factor)
    s = solve_resolvent(b, lam, (a * F1[0] + c * F2[0], a * F1[1] + c * F2[1]), factor=factor)
    ref = a * s1.u + c * s2.u
    assert np.abs(s.u - ref).max() <= 1e-10 * np.abs(ref).max()
    pref = a * s1.pressure + c * s2.pressure
    assert np.abs(s.pressure - pref).max() <= 1e-10 * np.abs(pref).max()


def test_uniqueness_each_regime():
    cases = [(bundle(DISK, 0.2, -0.5, 1.0), 2.5, True, None),               # regime 1
             (bundle(DISK, 0.2, 1.0, 1.0), 0.3j, True, None),               # regime 2
             (bundle(ELLIPSE, 0.2, -0.1, 1.0), 0.2 + 1j, False, -0.2745)]    # regime 3
    for b, lam, axi, a0 in cases:
        sol = solve_resolvent(b, lam, _zero(b), axisymmetric=axi, alpha0=a0)
        assert sol.diagnostics["regime"] is not None
        assert np.abs(sol.u).max() <= 1e-12


def test_coercivity_certificate_mesh_stable():
    consts = []
    for h in (0.4, 0.2, 0.1):
        b = bundle(DISK, h, -0.5, 1.0)
        lam = 2.0 + 3j  # beta Re lam = 2 >= max(1, 2)
        rng = np.random.default_rng(0)
        c = np.inf
        for _ in range(20):
            u = rng.standard_normal(b.n_u) + 1j * rng.standard_normal(b.n_u)
            g = b.T @ u
            form = (lam * (np.vdot(u, b.M @ u) + b.beta * np.vdot(g, b.Mb @ g))
                    + np.vdot(u, b.K @ u) + b.alpha * np.vdot(g, b.Mb @ g))
            c = min(c, abs(form) / v_norm(b, u) ** 2)
        consts.append(c)
    assert min(consts) >= 0.75
    assert max(consts) / min(consts) <= 2


def test_pressure_map_bounded_and_mesh_stable():
    env = []
    for h in (0.2, 0.1):
        b = bundle(DISK, h, 1.0, 1.0)
        r = []
        for k in range(5):
            F = random_smooth_data(b, member_rng(4, k))
            # add a gradient part: it must land in the pressure, boundedly
            F = (b.extend(F[0]) + interpolate_velocity(b, lambda x, y: (y, x), full=True), F[1])
            sol = solve_resolvent(b, 1 + 1j, F)
            r.append(b.pressure_h1(sol.pressure) / x0_norm(b, None, F))
        env.append(max(r))
    assert max(env) / min(env) <= 2


def test_flag_outside_regimes_strip(disk_mid):
    # 0 < beta Re lam < 1 with alpha = 0 on the disk: no solvability claim, still solvable here
    b = disk_mid.with_params(0.0, 1.0)
    sol = solve_resolvent(b, 0.5, rigid_rotation_data(b, 0.5))
    assert "outside-admissible-regimes" in sol.flag
    assert l2_error(b, sol.u, rotation)[0] <= 1e-8


def test_near_spectrum_flag_or_error(ellipse_coarse):
    b = ellipse_coarse
    ev = DenseModel(b).eig[0]
    try:
        sol = solve_resolvent(b, -ev[1], random_smooth_data(b, member_rng(0, 0)))
    except ResolventError as exc:
        assert exc.lam == -ev[1]
    else:
        assert "near-spectrum" in sol.flag
        assert sol.diagnostics["condition"] > 1e13


def test_resolvent_error_carries_lambda():
    exc = ResolventError("singular", 2 + 1j, 3e15)
    assert exc.lam == 2 + 1j and "3e+15" in str(exc)


@settings(max_examples=10, deadline=None)
@given(re=st.floats(0.5, 50), im=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_solution_invariants_random(disk_coarse, re, im, seed):
    b = disk_coarse
    sol = solve_resolvent(b, complex(re, im), random_smooth_data(b, member_rng(seed, 0)))
    _check_invariants(sol)


def test_export_solution(tmp_path, disk_coarse):
    b = disk_coarse
    sol = solve_resolvent(b, 1 + 1j, rigid_rotation_data(b, 1 + 1j))
    paths = export_solution(sol, str(tmp_path / "sol"))
    assert len(paths) == 3
    nodes = np.genfromtxt(paths[0], delimiter=",", names=True)
    assert len(nodes) == b.mesh.n_nodes
    np.testing.assert_allclose(nodes["ux_re"], -nodes["y"], atol=1e-10)
    diag = json.loads(open(paths[2]).read())
    assert diag["residual_momentum"] <= 1e-10
    coeffs = np.genfromtxt(paths[1], delimiter=",", names=True)
    k0 = coeffs[coeffs["k"] == 0][0]
    assert k0["re"] == pytest.approx(math.sqrt(2 * math.pi), rel=1e-8)


def test_pressure_zero_mean_with_nonzero_pressure(disk_mid):
    b = disk_mid
    f = interpolate_velocity(b, lambda x, y: (1 + 0 * x, 2 * y), full=True)
    sol = solve_resolvent(b, 1.0, (f, np.zeros(b.n_b)))
    assert abs(sol.diagnostics["p_mean"]) <= 1e-10 * b.pressure_l2(sol.pressure)
    _ = interpolate_pressure(b, lambda x, y: x)
