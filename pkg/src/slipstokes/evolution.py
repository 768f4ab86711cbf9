"""
Backward Euler for ``dU/dt = A U + F`` and the maximal-regularity functionals.

Every step is a resolvent solve at ``lam = 1/dt`` with data
``(u_n/dt + f_{n+1}, u_{b,n}/dt + h_{n+1})``, so one factorization serves the
whole run.  Time integrals use the rectangle rule on ``t_1, ..., t_N``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec, trapezoid

from .dense import DenseModel, check_size
from .resolvent import ResolventFactor, apply_A
from .spaces import OperatorBundle, State, h_norm, x0_norm

INF = math.inf


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``(0, T_end)`` with ``n_steps`` steps."""

    T_end: float
    n_steps: int

    def __post_init__(self):
        if not self.n_steps >= 2:
            raise ValueError("n_steps must be at least 2")
        if math.isinf(self.T_end):
            raise ValueError("infinite horizon needs a finite truncation for computation")
        if not self.T_end > 0:
            raise ValueError("T_end must be positive")

    @property
    def dt(self):
        return self.T_end / self.n_steps

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


class ZeroDataError(ValueError):
    pass


def _sampler(bundle, F):
    """Normalize forcing to a function of the step index and time."""
    zero = (np.zeros(bundle.n_u), np.zeros(bundle.n_b))
    if F is None:
        return lambda n, t: zero
    if callable(F):
        return lambda n, t: F(t)
    return lambda n, t: F[n]


@dataclass(eq=False)
class EvolutionTrace:
    grid: TimeGrid
    q: float
    states: list
    pressures: list
    h_norms: np.ndarray
    dt_norms: np.ndarray      # X0 norm of the backward difference, steps 1..N
    au_norms: np.ndarray      # X0 norm of A U_n, steps 1..N
    p_h1: np.ndarray          # steps 1..N
    f_norms: np.ndarray       # X0 norm of F_n, steps 1..N
    forcing: list = field(repr=False, default_factory=list)
    shift: float = 0.0

    def lq(self, vals):
        return float((self.grid.dt * np.sum(np.asarray(vals) ** self.q)) ** (1 / self.q))

    @property
    def dt_lq(self):
        return self.lq(self.dt_norms)

    @property
    def au_lq(self):
        return self.lq(self.au_norms)

    @property
    def p_lq(self):
        return self.lq(self.p_h1)

    @property
    def f_lq(self):
        return self.lq(self.f_norms)

    def decay_rate(self, tail=0.5):
        """Slope of ``log h_norm`` against time over the last ``tail`` fraction of the run."""
        t = self.grid.times
        n0 = int(len(t) * (1 - tail))
        y = self.h_norms[n0:]
        if np.any(y <= 0) or len(y) < 2:
            return float("nan")
        return float(np.polyfit(t[n0:], np.log(y), 1)[0])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "h_norm", "x0_dt_norm", "AU_norm", "pressure_H1"])
            t = self.grid.times
            for n in range(len(t)):
                row = [n, repr(float(t[n])), repr(float(self.h_norms[n]))]
                if n == 0:
                    row += ["", "", ""]
                else:
                    row += [repr(float(self.dt_norms[n - 1])), repr(float(self.au_norms[n - 1])),
                            repr(float(self.p_h1[n - 1]))]
                w.writerow(row)

    def summary(self):
        return {"q": self.q, "T_end": self.grid.T_end, "n_steps": self.grid.n_steps,
                "dt_Lq_X0": self.dt_lq, "AU_Lq_X0": self.au_lq, "p_Lq_H1": self.p_lq,
                "F_Lq_X0": self.f_lq, "decay_rate": self.decay_rate()}

    def to_json(self, path, extra=None):
        out = self.summary()
        out.update(extra or {})
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)


def step_implicit(bundle: OperatorBundle, Un: State, F_next, dt, *, factor=None):
    """One backward Euler step; returns the tied new state and its pressure."""
    if factor is None:
        factor = ResolventFactor(bundle, 1.0 / dt, check_condition=False)
    load = factor.rhs((Un.u / dt, Un.ub / dt)) + factor.rhs(F_next)
    u, p, _ = factor.solve_load(load)
    return State(u, bundle.T @ u, tied=True), p


def evolve(bundle: OperatorBundle, U0: State, F, grid: TimeGrid, q=2.0, *, shift=0.0,
           factor=None) -> EvolutionTrace:
    """Run backward Euler over ``grid`` and collect the per-step norms.

    ``F`` is ``None``, a callable ``t -> (f, h)`` or a sequence indexed by step
    (entry ``n`` is used at time ``t_n``).  With ``shift = lam0`` the run goes
    through the shifted generator ``A - lam0`` and forcing ``exp(-lam0 t) F``,
    then maps back by ``U = exp(lam0 t) V``; the result agrees with
    ``shift = 0`` up to roundoff.
    """
    if not q > 1:
        raise ValueError("q must exceed 1")
    dt = grid.dt
    sample = _sampler(bundle, F)
    if factor is None:
        factor = ResolventFactor(bundle, 1.0 / dt - shift, shift=shift, check_condition=False)
    decay = math.exp(-shift * dt)
    V = State(np.asarray(U0.u), np.asarray(U0.ub), U0.tied)
    states, pressures, forcing = [V], [None], [sample(0, 0.0)]
    hn = [h_norm(bundle, V)]
    dtn, aun, ph, fn = [], [], [], []
    t = grid.times
    for n in range(1, grid.n_steps + 1):
        f, h = sample(n, t[n])
        forcing.append((f, h))
        w = math.exp(-shift * t[n])
        load = (decay / dt) * factor.rhs((V.u, V.ub)) + w * factor.rhs((f, h))
        v, p, _ = factor.solve_load(load)
        V = State(v, bundle.T @ v, tied=True)
        scale = math.exp(shift * t[n])
        U = State(scale * V.u, scale * V.ub, tied=True)
        prev = states[-1]
        states.append(U)
        pressures.append(scale * p)
        hn.append(h_norm(bundle, U))
        dtn.append(x0_norm(bundle, None, ((U.u - prev.u) / dt, (U.ub - prev.ub) / dt)))
        aun.append(x0_norm(bundle, None, _as_pair(apply_A(bundle, U.u))))
        ph.append(bundle.pressure_h1(scale * p))
        fn.append(x0_norm(bundle, None, (f, h)))
    return EvolutionTrace(grid, float(q), states, pressures, np.array(hn), np.array(dtn),
                          np.array(aun), np.array(ph), np.array(fn), forcing, float(shift))


def _as_pair(U):
    return U.u, U.ub


def max_reg_ratio(trace: EvolutionTrace, u0_interp_norm=0.0) -> float:
    """``(||dU/dt||_{Lq X0} + ||AU||_{Lq X0}) / (||F||_{Lq X0} + ||U0||_{interp})``."""
    den = trace.f_lq + u0_interp_norm
    if den == 0:
        raise ZeroDataError("max-regularity ratio undefined for zero data")
    return (trace.dt_lq + trace.au_lq) / den


def pressure_ratio(trace: EvolutionTrace, u0_interp_norm=0.0) -> float:
    den = trace.f_lq + u0_interp_norm
    if den == 0:
        raise ZeroDataError("pressure ratio undefined for zero data")
    return trace.p_lq / den


def mild_solution_oracle(bundle: OperatorBundle, U0: State, F, grid: TimeGrid | float,
                         *, epsabs=1e-13, epsrel=1e-11):
    """Variation of constants ``T(t) U0 + int_0^t T(t - s) F(s) ds`` at the final time, densely.

    ``F`` is ``None``, a constant pair ``(f, h)`` or a callable ``t -> (f, h)``.
    ``U0`` is projected H-orthogonally onto the tied solenoidal space first,
    which leaves tied solenoidal data unchanged.
    """
    check_size(bundle)
    T = grid.T_end if isinstance(grid, TimeGrid) else float(grid)
    if T == 0:
        return State(np.array(U0.u), np.array(U0.ub), U0.tied)
    model = DenseModel(bundle)
    lam, V = model.eig
    c0 = model.coords(U0)
    coef = np.exp(-lam * T) * (V.T @ (model.MH @ c0))
    if F is not None:
        if callable(F):
            def integrand(s):
                return np.exp(-lam * (T - s)) * (V.T @ model.load(F(s)))
            conv, _ = quad_vec(integrand, 0.0, T, epsabs=epsabs, epsrel=epsrel)
        else:
            g = V.T @ model.load(F)
            # int_0^T exp(-lam (T - s)) ds, stable for lam near 0
            conv = g * np.where(np.abs(lam * T) < 1e-12, T, -np.expm1(-lam * T) / np.where(lam == 0, 1, lam))
        coef = coef + conv
    u = model.velocity(V @ coef)
    return State(u, bundle.T @ u, tied=True)


def _x0_pair_norm(bundle, U):
    return x0_norm(bundle, None, (U.u, U.ub))


def interp_norm(bundle: OperatorBundle, U0: State, q, method="semigroup", *, n_steps=100,
                n_t=24, t_min=1e-4):
    """Norm of ``U0`` in the trace space ``(X0, D(A))_{1-1/q, q}``.

    ``semigroup``: ``||U0|| + (sum_n dt ||A U_n||^q)^{1/q}`` along the
    homogeneous backward Euler run on (0, 1).  ``k_functional``:
    ``||U0|| + (int (t^{-theta} K(t, U0))^q dt/t)^{1/q}`` on log-spaced
    ``t in [t_min, 1]``, each infimum from the normal equations of the squared
    functional on the dense divergence-free basis (coarse meshes only).
    """
    base = _x0_pair_norm(bundle, U0)
    if method == "semigroup":
        trace = evolve(bundle, U0, None, TimeGrid(1.0, n_steps), q)
        return base + trace.au_lq
    if method == "k_functional":
        return base + _k_functional_integral(bundle, U0, q, n_t, t_min)
    raise ValueError(f"unknown method {method!r}")


def _k_functional_integral(bundle, U0, q, n_t, t_min):
    check_size(bundle)
    model = DenseModel(bundle)
    Z = model.Z
    Wb = bundle.sobolev_gram(0.5)
    M = bundle.M.toarray()
    TZ = bundle.T @ Z
    # columns of A applied to the basis, as (first, second) blocks
    AZ_u = np.empty_like(Z)
    AZ_b = np.empty((bundle.n_b, Z.shape[1]))
    for j in range(Z.shape[1]):
        a = apply_A(bundle, Z[:, j])
        AZ_u[:, j], AZ_b[:, j] = a.u, a.ub
    G_id = Z.T @ M @ Z + TZ.T @ Wb @ TZ          # ||E c||^2
    G_a = AZ_u.T @ M @ AZ_u + AZ_b.T @ Wb @ AZ_b  # ||A E c||^2
    rhs = Z.T @ (M @ U0.u) + TZ.T @ (Wb @ U0.ub)
    theta = 1.0 - 1.0 / q
    ts = np.logspace(np.log10(t_min), 0.0, n_t)
    vals = np.empty(n_t)
    for i, t in enumerate(ts):
        c = np.linalg.solve(G_id + t * t * (G_id + G_a), rhs)
        u1 = Z @ c
        U1 = State(u1, TZ @ c, tied=True)
        diff = State(U0.u - u1, U0.ub - U1.ub)
        a1 = State(AZ_u @ c, AZ_b @ c)
        K = _x0_pair_norm(bundle, diff) + t * (_x0_pair_norm(bundle, U1) + _x0_pair_norm(bundle, a1))
        vals[i] = (t ** (-theta) * K) ** q
    integral = trapezoid(vals, np.log(ts))
    return float(integral ** (1.0 / q))


def weak_residuals(bundle: OperatorBundle, trace: EvolutionTrace, F=None):
    """Relative residual of the discrete weak form at each step 1..N, over all basis test functions.

    Uses the stored pressures and the backward-difference time derivative.
    ``F`` defaults to the forcing recorded in the trace.
    """
    b = bundle
    dt = trace.grid.dt
    if F is None:
        forcing = trace.forcing
    else:
        sample = _sampler(b, F)
        forcing = [sample(n, t) for n, t in enumerate(trace.grid.times)]
    MH_bnd = b.T.T @ b.Mb
    out = np.zeros(trace.grid.n_steps)
    for n in range(1, trace.grid.n_steps + 1):
        U, P = trace.states[n], trace.states[n - 1]
        f, h = forcing[n]
        terms = [b.M @ (U.u - P.u) / dt,
                 b.beta * (MH_bnd @ (U.ub - P.ub)) / dt,
                 b.K @ U.u,
                 b.alpha * (b.TtMbT @ U.u),
                 b.B.T @ trace.pressures[n],
                 -b.load(f),
                 -b.beta * (MH_bnd @ np.asarray(h))]
        r = np.abs(sum(terms))
        scale = max(np.max(np.abs(t), initial=0.0) for t in terms)
        div = np.abs(b.B @ U.u)
        if scale == 0:
            out[n - 1] = 0.0 if not (r.any() or div.any()) else np.inf
            continue
        out[n - 1] = max(np.max(r), np.max(div, initial=0.0)) / scale
    return out


def weak_solution_residual(bundle: OperatorBundle, trace: EvolutionTrace, F=None) -> float:
    """Largest per-step relative weak-form residual."""
    r = weak_residuals(bundle, trace, F)
    return float(np.max(r, initial=0.0))
