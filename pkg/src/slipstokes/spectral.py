"""
Resolvent norm estimates in the X0 geometry, sector sweeps and Korn constants.

X0 carries the Hilbert inner product ``<u, v>_M + <u_b, v_b>_{W_b}`` where
``W_b`` is the Fourier-weighted boundary H^{1/2} Gram matrix.  This norm is
within a factor sqrt(2) of the sum norm ``||f||_{L2} + ||h||_{H^1/2}``.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .dense import DenseModel
from .resolvent import ResolventError, ResolventFactor
from .spaces import OperatorBundle

log = logging.getLogger(__name__)

DEFAULT_RAYS = (0.0, np.pi / 4, -np.pi / 4, np.pi / 2, -np.pi / 2, 0.55 * np.pi, -0.55 * np.pi)
DEFAULT_THETA = 0.6 * np.pi


class KornError(RuntimeError):
    pass


def sector_omega(alpha, beta):
    """Shift of the sector vertex, ``max(1, -4 alpha) / beta``."""
    return max(1.0, -4.0 * alpha) / beta


def in_sector(lam, theta, omega):
    z = complex(lam) - omega
    return z != 0 and abs(np.angle(z)) < theta


def sector_grid(omega, rays=DEFAULT_RAYS, r_min=1e-1, r_max=1e4, n_moduli=9):
    """``omega + r exp(i phi)`` for each ray ``phi`` and log-spaced ``r``, ordered by ray then modulus."""
    radii = np.logspace(np.log10(r_min), np.log10(r_max), n_moduli)
    return [complex(omega + r * np.exp(1j * phi)) for phi in rays for r in radii]


class _X0Geometry:
    def __init__(self, bundle):
        self.bundle = bundle
        self.Wb = bundle.sobolev_gram(0.5)
        self.Wb_chol = sla.cho_factor(self.Wb)

    def inner(self, x, y):
        b = self.bundle
        return np.vdot(x[0], b.M @ y[0]) + np.vdot(x[1], self.Wb @ y[1])

    def norm(self, x):
        return float(np.sqrt(abs(self.inner(x, x))))


def _apply(factor, F):
    u, _, _ = factor.solve_load(factor.rhs(F))
    return u, factor.bundle.T @ u


def _apply_adjoint(factor, geo, Y):
    """Adjoint of ``F -> (u, T u)`` with respect to the X0 inner product on both sides."""
    b = factor.bundle
    yu, yb = Y
    v, _, _ = factor.solve_load(b.M @ yu + b.T.T @ (geo.Wb @ yb), trans="H")
    tb = b.beta * (b.Mb @ (b.T @ v))
    wb = sla.cho_solve(geo.Wb_chol, tb.real) + 1j * sla.cho_solve(geo.Wb_chol, tb.imag)
    return v, wb


def resolvent_norm_estimate(bundle: OperatorBundle, bp, lam, n_probes=3, *, factor=None,
                            max_iter=60, rtol=1e-7, seed=0):
    """Lower bound for ``||(lam - A_h)^{-1}||`` on X0, by power iteration on ``S* S``.

    Each probe starts from a random complex vector seeded by its index, so the
    returned maximum over probes never decreases as ``n_probes`` grows.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be at least 1")
    if factor is None:
        factor = ResolventFactor(bundle, lam, check_condition=False)
    geo = _X0Geometry(bundle)
    best = 0.0
    for k in range(n_probes):
        rng = np.random.default_rng((seed, k))
        F = [rng.standard_normal(n) + 1j * rng.standard_normal(n) for n in (bundle.n_u, bundle.n_b)]
        est = 0.0
        for _ in range(max_iter):
            nF = geo.norm(F)
            if nF == 0:
                break
            F = [x / nF for x in F]
            Y = _apply(factor, F)
            new = geo.norm(Y)
            F = list(_apply_adjoint(factor, geo, Y))
            done = abs(new - est) <= rtol * new
            est = max(est, new)
            if done:
                break
        best = max(best, est)
    return float(best)


def dense_resolvent_norm(bundle: OperatorBundle, lam):
    """Exact X0 operator norm of the discrete resolvent, from a dense SVD (coarse meshes only).

    Builds the resolvent on an explicit divergence-free basis, independent of
    the sparse saddle factorization.
    """
    model = DenseModel(bundle)
    S = model.resolvent_matrix(complex(lam))
    W = model.x0_gram()
    L = np.linalg.cholesky(W)
    # ||S||_W = ||L^H S L^{-H}||_2
    core = L.conj().T @ S @ np.linalg.inv(L.conj().T)
    return float(np.linalg.svd(core, compute_uv=False)[0])


@dataclass
class SectorRecord:
    lam: complex
    ratio: float
    norm: float
    flag: str | None = None


@dataclass
class SectorReport:
    theta: float
    omega: float
    records: list = field(default_factory=list)
    method: dict = field(default_factory=dict)

    @property
    def c_sector(self):
        vals = [r.ratio for r in self.records if np.isfinite(r.ratio)]
        return max(vals) if vals else float("nan")

    @property
    def flagged(self):
        return [r for r in self.records if r.flag]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re_lambda", "im_lambda", "ratio", "norm", "flag"])
            for r in self.records:
                w.writerow([repr(r.lam.real), repr(r.lam.imag), repr(r.ratio), repr(r.norm), r.flag or ""])

    def summary(self):
        return {"theta": self.theta, "omega": self.omega, "C_sector": self.c_sector,
                "n_points": len(self.records), "n_flagged": len(self.flagged), "method": self.method}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _sweep_point(bundle, bp, lam, omega, n_probes):
    try:
        factor = ResolventFactor(bundle, lam, check_condition=True)
        nrm = resolvent_norm_estimate(bundle, bp, lam, n_probes, factor=factor)
        flag = "near-spectrum" if factor.near_spectrum else None
    except ResolventError as exc:
        log.warning("sweep point failed: %s", exc)
        return SectorRecord(lam, float("nan"), float("nan"), "solve-failed")
    return SectorRecord(lam, abs(lam - omega) * nrm, nrm, flag)


def sector_sweep(bundle: OperatorBundle, bp, sector, grid, *, n_probes=2, threads=1) -> SectorReport:
    """Evaluate ``|lam - omega| ||(lam - A_h)^{-1}||`` over ``grid``; failures are recorded, not raised."""
    theta, omega = (float(x) for x in sector)
    grid = [complex(z) for z in grid]
    outside = [z for z in grid if not in_sector(z, theta, omega)]
    if outside:
        raise ValueError(f"{len(outside)} grid points outside the sector, e.g. {outside[0]}")
    meta = {"estimator": "power-iteration", "n_probes": n_probes, "inner_product": "M + W_b(H^1/2)"}
    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(lambda z: _sweep_point(bundle, bp, z, omega, n_probes), grid))
    else:
        records = [_sweep_point(bundle, bp, z, omega, n_probes) for z in grid]
    return SectorReport(theta, omega, records, meta)


@dataclass
class KornReport:
    domain: str
    h: float
    q1: float
    q2: float

    @property
    def alpha0(self):
        # K carries the factor 2 of 2|Du|^2, so the optimal boundary coefficient is -q2
        return 0.0 - self.q2

    def to_dict(self):
        return {"domain": self.domain, "h": self.h, "q1": self.q1, "q2": self.q2, "alpha0": self.alpha0}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def korn_constants(bundle: OperatorBundle) -> KornReport:
    """Smallest Rayleigh quotients ``min u'Ku / u'Gu`` and ``min u'Ku / |T u|^2_{Mb}``.

    The boundary quotient is minimized over harmonic extensions: interior
    dofs are eliminated through the Schur complement of ``K``, which deflates
    the zero-trace fields from the kernel of the denominator.
    """
    K = bundle.K.tocsr()
    nu, nb = bundle.n_u, bundle.n_b
    Tc = bundle.T.tocoo()
    bidx = Tc.col[np.argsort(Tc.row)]
    mask = np.ones(nu, bool)
    mask[bidx] = False
    iidx = np.flatnonzero(mask)
    Kii = K[iidx][:, iidx].tocsc()
    Kib = K[iidx][:, bidx].toarray()
    Kbb = K[bidx][:, bidx].toarray()
    try:
        X = spla.splu(Kii).solve(Kib)
    except RuntimeError as exc:
        raise KornError(f"interior block singular: {exc}") from exc
    S = Kbb - Kib.T @ X
    S = 0.5 * (S + S.T)
    q2 = float(sla.eigh(S, bundle.Mb.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])

    try:
        vals = spla.eigsh(K, k=1, M=bundle.G, sigma=-0.1, which="LM", return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise KornError("eigensolver did not converge for q1") from exc
    q1 = float(vals[0])
    # roundoff can push a zero eigenvalue slightly negative
    q1, q2 = max(q1, 0.0), max(q2, 0.0)
    return KornReport(bundle.mesh.spec.label, float(bundle.mesh.h), q1, q2)
