"""Dense linear algebra on the discretely divergence-free space, for oracles on coarse meshes."""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .spaces import OperatorBundle

MAX_DENSE_UNKNOWNS = 400


class SizeGuardError(ValueError):
    pass


def check_size(bundle: OperatorBundle, limit=MAX_DENSE_UNKNOWNS):
    if bundle.n_unknowns > limit:
        raise SizeGuardError(f"dense computation needs <= {limit} unknowns, bundle has "
                             f"{bundle.n_unknowns}; use a coarser mesh")


class DenseModel:
    """Generator restricted to ``{u : B u = 0}`` in an explicit basis ``Z``.

    States are tied pairs ``(Z c, T Z c)``; the dynamics read
    ``MH c' = -Ah c + Z'(M f + beta T'Mb h)``.
    """

    def __init__(self, bundle: OperatorBundle, limit=MAX_DENSE_UNKNOWNS):
        check_size(bundle, limit)
        self.bundle = b = bundle
        B = b.B.toarray()
        m = b.mean / np.linalg.norm(b.mean)
        # B' 1 = 0, so the range of B misses the constants; drop that row direction
        self.Z = sla.null_space(B - np.outer(m, m @ B))
        Z = self.Z
        self.MH = Z.T @ ((b.M + b.beta * b.TtMbT) @ Z)
        self.Ah = Z.T @ ((b.K + b.alpha * b.TtMbT) @ Z)
        self.MH = 0.5 * (self.MH + self.MH.T)
        self.Ah = 0.5 * (self.Ah + self.Ah.T)

    @property
    def dim(self):
        return self.Z.shape[1]

    @cached_property
    def eig(self):
        """``Ah V = MH V diag(lam)`` with ``V' MH V = I``; the generator has eigenvalues ``-lam``."""
        return sla.eigh(self.Ah, self.MH)

    def load(self, F):
        f, h = F
        b = self.bundle
        return self.Z.T @ (b.load(f) + b.beta * (b.T.T @ (b.Mb @ np.asarray(h))))

    def coords(self, U):
        """H-orthogonal projection of a (possibly untied) state onto the tied solenoidal space."""
        return np.linalg.solve(self.MH, self.load((U.u, U.ub)))

    def velocity(self, c):
        return self.Z @ c

    def resolvent_matrix(self, lam):
        """Dense map ``(f, h) -> (u, T u)`` as a matrix on stacked reduced coordinates."""
        b = self.bundle
        Z = self.Z
        R = np.hstack([Z.T @ b.M.toarray(), b.beta * (Z.T @ (b.T.T @ b.Mb).toarray())])
        c = np.linalg.solve(lam * self.MH + self.Ah, R)
        Tz = b.T @ Z
        return np.vstack([Z @ c, Tz @ c])

    def x0_gram(self):
        """Block Gram ``diag(M, W_b)`` of the Hilbert X0 inner product on ``(u, u_b)``."""
        b = self.bundle
        return sla.block_diag(b.M.toarray(), b.sobolev_gram(0.5))
