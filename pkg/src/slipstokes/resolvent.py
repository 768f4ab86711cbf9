"""
Complex resolvent solves for the slip Stokes system and the discrete operator A.

For ``lam`` in C and data ``F = (f, h)`` the discrete problem is: find a tied
pair ``(u, T u)`` and a zero-mean pressure ``p`` with

    lam (M + beta T'MbT) u + K u + alpha T'MbT u + B'p = M f + beta T'Mb h,
    B u = 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .spaces import (OperatorBundle, SaddleFactor, SaddleSolveError, State,
                     boundary_h12_norm, x0_norm)

log = logging.getLogger(__name__)

COND_THRESHOLD = 1e13


class ResolventError(RuntimeError):
    """Saddle system singular or numerically unusable at ``lam``."""

    def __init__(self, msg, lam, cond=np.inf):
        super().__init__(f"{msg} at lambda={lam} (condition estimate {cond:.3g})")
        self.lam = lam
        self.cond = cond


class ZeroDataError(ValueError):
    pass


def admissible_regime(alpha, beta, lam, axisymmetric=None, alpha0=None):
    """Which solvability condition ``lam`` satisfies: 1, 2, 3 or ``None``.

    Regime 3 needs a non-axisymmetric domain and a known (negative) Korn
    threshold ``alpha0``.
    """
    lam = complex(lam)
    if beta * lam.real >= max(1.0, -4.0 * alpha):
        return 1
    if lam != 0 and lam.real >= 0:
        if alpha > 0:
            return 2
        if axisymmetric is False and alpha0 is not None and alpha0 < alpha <= 0:
            return 3
    return None


@dataclass(eq=False)
class ResolventSolution:
    u: np.ndarray
    ub: np.ndarray
    pressure: np.ndarray
    lam: complex
    diagnostics: dict
    flag: str | None = None
    bundle: OperatorBundle = field(default=None, repr=False)

    @property
    def state(self):
        return State(self.u, self.ub, tied=True)


class ResolventFactor:
    """One sparse LU of the resolvent saddle matrix, reusable across right-hand sides."""

    def __init__(self, bundle: OperatorBundle, lam, shift=0.0, check_condition=True):
        self.bundle = bundle
        self.lam = complex(lam)
        b = bundle
        MH = b.M + b.beta * b.TtMbT
        A11 = self.lam * MH + b.K + (b.alpha * b.TtMbT) + shift * MH
        if self.lam.imag == 0 and np.imag(shift) == 0:
            A11 = A11.real
        try:
            self.factor = SaddleFactor(b, A11.tocsr())
        except SaddleSolveError as exc:
            raise ResolventError(str(exc), self.lam) from exc
        self.cond = self.factor.condition_estimate() if check_condition else None
        if self.cond is not None and not np.isfinite(self.cond):
            raise ResolventError("singular saddle matrix", self.lam, self.cond)

    @property
    def near_spectrum(self):
        return self.cond is not None and self.cond > COND_THRESHOLD

    def rhs(self, F):
        f, h = F
        b = self.bundle
        return b.load(f) + b.beta * (b.T.T @ (b.Mb @ np.asarray(h)))

    def solve_load(self, load, trans="N"):
        try:
            return self.factor.solve(load, trans=trans)
        except SaddleSolveError as exc:
            raise ResolventError(str(exc), self.lam, self.cond or np.inf) from exc

    def residual(self, u, p, mu, load):
        """Relative weak-form residuals (momentum, divergence) over all basis test functions."""
        S = self.factor.matrix
        nu = self.bundle.n_u
        x = np.concatenate([u, p, [mu]])
        r = S @ x
        r[:nu] -= load
        scale = max(np.max(np.abs(load), initial=0.0), np.max(np.abs(S[:nu] @ x), initial=0.0))
        if scale == 0:
            return 0.0, 0.0
        return (float(np.max(np.abs(r[:nu])) / scale),
                float(np.max(np.abs(r[nu:]), initial=0.0) / scale))


def solve_resolvent(bundle: OperatorBundle, lam, F, *, factor: ResolventFactor | None = None,
                    check_condition=True, alpha0=None, axisymmetric=None) -> ResolventSolution:
    """Solve the resolvent system for data ``F = (f, h)``.

    ``f`` is a reduced or full velocity vector, ``h`` a boundary scalar.
    """
    if factor is None:
        factor = ResolventFactor(bundle, lam, check_condition=check_condition)
    elif factor.lam != complex(lam):
        raise ValueError("factorization was built for a different lambda")
    if axisymmetric is None:
        from .geometry import is_axisymmetric
        axisymmetric = is_axisymmetric(bundle.mesh.spec)
    load = factor.rhs(F)
    u, p, mu = factor.solve_load(load)
    ub = bundle.T @ u
    flags = []
    reg = admissible_regime(bundle.alpha, bundle.beta, lam, axisymmetric, alpha0)
    if reg is None:
        flags.append("outside-admissible-regimes")
    if factor.near_spectrum:
        flags.append("near-spectrum")
    r_mom, r_div = factor.residual(u, p, mu, load)
    diag = {
        "u_l2": bundle.l2_norm(u),
        "ub_l2": bundle.boundary_l2(ub),
        "ub_h12": boundary_h12_norm(bundle, ub, 0.5),
        "p_h1": bundle.pressure_h1(p),
        "p_mean": complex(bundle.mean @ p),
        "residual_momentum": r_mom,
        "residual_divergence": r_div,
        "regime": reg,
        "condition": factor.cond,
    }
    if flags:
        log.info("resolvent at lambda=%s flagged: %s", lam, ",".join(flags))
    return ResolventSolution(u, ub, p, complex(lam), diag, ",".join(flags) or None, bundle)


def apply_A(bundle: OperatorBundle, u, return_pressure=False):
    """Discrete generator on a tied state.

    First component: mass-orthogonal solenoidal projection of the discrete
    Laplacian, ``M a + B'q = -K u + T'(flux u)``, ``B a = 0``.  Second:
    ``-(1/beta) (w + alpha T u)`` with ``w`` the boundary L2 projection of the
    normal-tangential stress ``(2 Du nu).tau``.
    """
    u = np.asarray(u)
    if len(u) != bundle.n_u:
        raise ValueError(f"velocity vector of length {len(u)}, expected {bundle.n_u}")
    fu = bundle.flux @ u
    a, q, _ = bundle.projection_solver().solve(-(bundle.K @ u) + bundle.T.T @ fu)
    w = _boundary_mass_solve(bundle, fu)
    second = -(w + bundle.alpha * (bundle.T @ u)) / bundle.beta
    out = State(a, second, tied=False)
    return (out, q) if return_pressure else out


def _boundary_mass_solve(bundle, g):
    lu = bundle.__dict__.get("_mb_lu")
    if lu is None:
        lu = bundle.__dict__["_mb_lu"] = spla.splu(bundle.Mb.tocsc())
    if np.iscomplexobj(g):
        return lu.solve(np.ascontiguousarray(g.real)) + 1j * lu.solve(np.ascontiguousarray(g.imag))
    return lu.solve(np.asarray(g, dtype=float))


def _check_data(bundle, F):
    f, h = F
    if bundle.l2_norm(f) == 0 and not np.any(np.asarray(h)):
        raise ZeroDataError("ratio undefined for zero data")


def apriori_ratio(sol: ResolventSolution, F) -> float:
    """``|lam| (||u|| + beta ||u_b||) / (||f|| + beta ||h||)``, boundary norms in L2."""
    b = sol.bundle
    _check_data(b, F)
    f, h = F
    num = abs(sol.lam) * (b.l2_norm(sol.u) + b.beta * b.boundary_l2(sol.ub))
    den = b.l2_norm(f) + b.beta * b.boundary_l2(h)
    return float(num / den)


def elliptic_regularity_ratio(sol: ResolventSolution, F) -> float:
    """``(||u_b||_{3/2} + ||u|| + ||P Delta u|| + ||p||_{H1}) / ||F||_{X0}``."""
    b = sol.bundle
    _check_data(b, F)
    AU = apply_A(b, sol.u)
    num = (boundary_h12_norm(b, sol.ub, 1.5) + b.l2_norm(sol.u) + b.l2_norm(AU.u)
           + b.pressure_h1(sol.pressure))
    return float(num / x0_norm(b, None, F))


def export_solution(sol: ResolventSolution, prefix):
    """Write ``<prefix>_nodes.csv``, ``<prefix>_boundary.csv`` and ``<prefix>_diagnostics.json``."""
    b = sol.bundle
    mesh = b.mesh
    full = b.extend(sol.u).reshape(-1, 2)
    nv = mesh.n_vertices
    paths = []
    path = f"{prefix}_nodes.csv"
    with open(path, "w") as fh:
        fh.write("node,x,y,ux_re,ux_im,uy_re,uy_im,p_re,p_im\n")
        for i, (x, y) in enumerate(mesh.nodes):
            p = sol.pressure[i] if i < nv else np.nan
            ux, uy = complex(full[i, 0]), complex(full[i, 1])
            p = complex(p)
            fh.write(f"{i},{float(x)!r},{float(y)!r},{ux.real!r},{ux.imag!r},{uy.real!r},{uy.imag!r},"
                     f"{p.real!r},{p.imag!r}\n")
    paths.append(path)
    path = f"{prefix}_boundary.csv"
    gk = b.fourier @ sol.ub
    nb = (len(gk) - 1) // 2
    with open(path, "w") as fh:
        fh.write("k,re,im\n")
        for k, c in zip(range(-nb, nb + 1), gk):
            fh.write(f"{k},{float(c.real)!r},{float(c.imag)!r}\n")
    paths.append(path)
    path = f"{prefix}_diagnostics.json"
    diag = {k: (str(v) if isinstance(v, complex) else v) for k, v in sol.diagnostics.items()}
    diag.update(lam=str(sol.lam), flag=sol.flag)
    with open(path, "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
    paths.append(path)
    return paths
