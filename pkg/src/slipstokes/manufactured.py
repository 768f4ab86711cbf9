"""Manufactured solutions and seeded random smooth data."""

from __future__ import annotations

import math

import numpy as np

from .spaces import OperatorBundle, State, interpolate_boundary, interpolate_velocity, leray_project


def rotation(x, y):
    return -y + 0 * x, x + 0 * y


def rigid_rotation_data(bundle: OperatorBundle, lam):
    """Data whose resolvent solution on the unit disk is ``u = (-y, x)``, ``p = 0``."""
    a, b = bundle.alpha, bundle.beta
    f = lam * interpolate_velocity(bundle, rotation, full=True)
    h = (lam + a / b) * np.ones(bundle.n_b)
    return f, h


class Azimuthal:
    """``u = exp(r^2) (-y, x)``, ``p = x y`` on the unit disk.

    Divergence free, tangential on the circle, and with
    ``Delta u = (8 + 4 r^2) exp(r^2) (-y, x)`` and ``(2 Du nu).tau = 2 e`` on the boundary.
    """

    @staticmethod
    def velocity(x, y):
        g = np.exp(x * x + y * y)
        return -y * g, x * g

    @staticmethod
    def pressure(x, y):
        return x * y

    @staticmethod
    def data(bundle: OperatorBundle, lam):
        a, b = bundle.alpha, bundle.beta

        def f(x, y):
            rho = x * x + y * y
            c = (lam - 8 - 4 * rho) * np.exp(rho)
            return -y * c + y, x * c + x

        fv = interpolate_velocity(bundle, f, full=True)
        e = math.e
        h = (lam * e + (2 * e + a * e) / b) * np.ones(bundle.n_b)
        return fv, h


def rigid_decay_forcing(bundle: OperatorBundle):
    """Forcing for ``u(t) = exp(-t) (-y, x)`` on the unit disk, as a callable of ``t``."""
    a, b = bundle.alpha, bundle.beta
    rot = interpolate_velocity(bundle, rotation, full=True)
    ones = np.ones(bundle.n_b)

    def F(t):
        s = math.exp(-t)
        return -s * rot, (a / b - 1.0) * s * ones

    return F


def rigid_state(bundle: OperatorBundle, scale=1.0):
    u = scale * interpolate_velocity(bundle, rotation)
    return State(u, bundle.T @ u, tied=True)


def _poly_field(rng, degree=3):
    """Random polynomial vector field of total degree ``degree``, normalized coefficients."""
    powers = [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]
    cx = rng.standard_normal(len(powers))
    cy = rng.standard_normal(len(powers))

    def fn(x, y):
        ux = sum(c * x ** i * y ** j for c, (i, j) in zip(cx, powers))
        uy = sum(c * x ** i * y ** j for c, (i, j) in zip(cy, powers))
        return ux, uy

    return fn


def _fourier_profile(rng, length, n_modes=3):
    a = rng.standard_normal(n_modes + 1) / (1 + np.arange(n_modes + 1)) ** 2
    b = rng.standard_normal(n_modes + 1) / (1 + np.arange(n_modes + 1)) ** 2

    def fn(s):
        k = np.arange(n_modes + 1)[:, None]
        w = 2 * np.pi * k * np.asarray(s)[None, :] / length
        return (a[:, None] * np.cos(w) + b[:, None] * np.sin(w)).sum(axis=0)

    return fn


def random_smooth_data(bundle: OperatorBundle, rng):
    """Smooth ``(f, h)``: Leray-projected random polynomial field, low-mode boundary scalar.

    The underlying continuous fields depend only on ``rng``, so the same seed
    gives the same data on every mesh of the same domain.
    """
    fn = _poly_field(rng)
    hn = _fourier_profile(rng, bundle.length)
    f = leray_project(bundle, interpolate_velocity(bundle, fn, full=True))
    return f, interpolate_boundary(bundle, hn)


def random_tied_state(bundle: OperatorBundle, rng):
    f, _ = random_smooth_data(bundle, rng)
    return State(f, bundle.T @ f, tied=True)


class RandomForcing:
    """``F(t) = sum_m sin(m pi t / T) (f_m, h_m)`` with smooth random spatial parts; ``F(0) = 0``."""

    def __init__(self, bundle: OperatorBundle, rng, T_end, n_terms=2):
        self.T_end = float(T_end)
        self.parts = [random_smooth_data(bundle, rng) for _ in range(n_terms)]

    def __call__(self, t):
        w = [math.sin((m + 1) * math.pi * t / self.T_end) for m in range(len(self.parts))]
        f = sum(c * p[0] for c, p in zip(w, self.parts))
        h = sum(c * p[1] for c, p in zip(w, self.parts))
        return f, h


def member_rng(seed, counter):
    """Generator for ensemble member ``counter`` under global ``seed``."""
    return np.random.default_rng((int(seed), int(counter)))
