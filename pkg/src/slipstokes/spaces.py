"""
Discrete function spaces and assembled operators.

Velocity: vector P2 on the isoparametric (curved) mesh, with the normal
component eliminated at every boundary node by rotating to the consistent
discrete frame: the normal at node ``i`` is ``int phi_i n_h ds`` over the
curved mesh boundary, so constant pressures stay in the kernel of ``B^T``.  Pressure: scalar P1.  Boundary scalars: continuous
piecewise quadratics on the boundary nodes, integrated against exact
arclength.

Reduced velocity vectors are ordered as interior nodes ``(x, y)``
interleaved, followed by one tangential coefficient per boundary node in
cyclic order.  "Full" velocity vectors hold ``(x, y)`` at every P2 node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import BoundaryParam, Mesh


class AssemblyError(RuntimeError):
    pass


class SaddleSolveError(RuntimeError):
    pass


# ---------------------------------------------------------------- reference


def _triangle_rule(n=5):
    """Collapsed Gauss-Legendre rule on the unit triangle, exact to degree 2n-1."""
    a, wa = np.polynomial.legendre.leggauss(n)
    A, Bq = np.meshgrid(a, a, indexing="ij")
    WA, WB = np.meshgrid(wa, wa, indexing="ij")
    x = (1 + A) * (1 - Bq) / 4
    y = (1 + Bq) / 2
    w = WA * WB * (1 - Bq) / 8
    return np.column_stack([x.ravel(), y.ravel()]), w.ravel()


def p2_basis(pts):
    """Values (n, 6) and reference gradients (n, 6, 2) of the P2 basis."""
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1 - x - y, x, y
    g0, g1, g2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    val = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                    4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)
    grad = np.stack([
        (4 * l0 - 1)[:, None] * g0,
        (4 * l1 - 1)[:, None] * g1,
        (4 * l2 - 1)[:, None] * g2,
        4 * (l0[:, None] * g1 + l1[:, None] * g0),
        4 * (l1[:, None] * g2 + l2[:, None] * g1),
        4 * (l2[:, None] * g0 + l0[:, None] * g2),
    ], axis=1)
    return val, grad


def p1_basis(pts):
    x, y = pts[:, 0], pts[:, 1]
    val = np.stack([1 - x - y, x, y], axis=1)
    grad = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2))
    return val, grad


_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _map(X, grad_ref):
    """Jacobians of the isoparametric map. X: (nt, 6, 2); grad_ref: (nt|1, nq, 6, 2)."""
    J = np.einsum("tad,tqar->tqdr", X, np.broadcast_to(grad_ref, (len(X),) + grad_ref.shape[1:]))
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    return J, det, inv


@dataclass(eq=False)
class ElementGeometry:
    points: np.ndarray      # (nt, nq, 2) physical quadrature points
    weights: np.ndarray     # (nq,)
    detJ: np.ndarray        # (nt, nq)
    phi: np.ndarray         # (nq, 6)
    dphi: np.ndarray        # (nt, nq, 6, 2) physical gradients
    psi: np.ndarray         # (nq, 3)
    dpsi: np.ndarray        # (nt, nq, 3, 2)


def element_geometry(mesh: Mesh, order: int = 5) -> ElementGeometry:
    pts, w = _triangle_rule(order)
    phi, dphi_ref = p2_basis(pts)
    psi, dpsi_ref = p1_basis(pts)
    X = mesh.geometry_nodes()
    _, det, inv = _map(X, dphi_ref[None])
    if np.any(det <= 0):
        t = int(np.argmin(det.min(axis=1)))
        raise AssemblyError(f"non-positive Jacobian in element {t} "
                            f"(vertices {mesh.triangles[t].tolist()})")
    # physical gradient = J^{-T} grad_ref
    dphi = np.einsum("tqrd,qar->tqad", inv, dphi_ref)
    dpsi = np.einsum("tqrd,qar->tqad", inv, dpsi_ref)
    points = np.einsum("qa,tad->tqd", phi, X)
    return ElementGeometry(points, w, det, phi, dphi, psi, dpsi)


# ------------------------------------------------------------ boundary Fourier


def n_fourier_modes(n_boundary_nodes: int) -> int:
    return max(32, 2 * n_boundary_nodes)


@lru_cache(maxsize=32)
def fourier_matrix(length: float, n_nodes: int) -> np.ndarray:
    """Analysis operator ``g -> (g_k)_{|k|<=n_b}`` for piecewise quadratics.

    ``g_k = L^{-1/2} int g(s) exp(-2 pi i k s / L) ds``, integrated edge by edge
    with a 48-point Gauss rule on the quadratic shape functions.
    """
    if n_nodes % 2:
        raise ValueError("boundary scalars carry an even number of nodes")
    n_edges = n_nodes // 2
    nb = n_fourier_modes(n_nodes)
    k = np.arange(-nb, nb + 1)
    omega = 2 * np.pi * k / length
    delta = length / n_edges
    xg, wg = np.polynomial.legendre.leggauss(48)
    xi, wq = 0.5 * (xg + 1), 0.5 * wg
    shape = np.stack([(1 - xi) * (1 - 2 * xi), 4 * xi * (1 - xi), xi * (2 * xi - 1)])
    osc = np.exp(-1j * np.outer(omega * delta, xi)) * wq  # (nk, nq)
    c = delta * osc @ shape.T                             # (nk, 3)
    E = np.exp(-1j * np.outer(omega, delta * np.arange(n_edges)))
    F = np.empty((len(k), n_nodes), dtype=complex)
    F[:, 0::2] = c[:, [0]] * E + c[:, [2]] * np.roll(E, 1, axis=1)
    F[:, 1::2] = c[:, [1]] * E
    return F / np.sqrt(length)


def sobolev_weights(length: float, n_nodes: int, order: float) -> np.ndarray:
    nb = n_fourier_modes(n_nodes)
    k = np.arange(-nb, nb + 1)
    return (1 + (2 * np.pi * k / length) ** 2) ** order


@dataclass
class BoundaryScalar:
    """Tangential component ``g_tau`` of a boundary field, on the boundary nodes."""

    values: np.ndarray

    def fourier(self, length):
        return fourier_matrix(float(length), len(self.values)) @ self.values


def _values(g):
    return np.asarray(getattr(g, "values", g))


def boundary_h12_norm(bp, g, order: float = 0.5) -> float:
    """Fractional Sobolev norm of a boundary scalar via exact Fourier weights.

    ``bp`` is anything with a ``length`` attribute (a :class:`BoundaryParam`
    or an :class:`OperatorBundle`).
    """
    g = _values(g)
    L = float(bp.length)
    gk = fourier_matrix(L, len(g)) @ g
    w = sobolev_weights(L, len(g), order)
    return float(np.sqrt(np.sum(w * np.abs(gk) ** 2)))


# ------------------------------------------------------------------- bundle


@dataclass
class State:
    """Element ``(u, u_b)`` of the product space; ``tied`` when ``u_b`` is the trace of ``u``."""

    u: np.ndarray
    ub: np.ndarray
    tied: bool = False


@dataclass(eq=False)
class OperatorBundle:
    """Assembled matrices on the normal-constrained velocity space.

    ``alpha`` and ``beta`` are carried along but never baked into a matrix.
    """

    mesh: Mesh
    alpha: float
    beta: float
    Q: sp.csr_matrix        # full -> reduced is Q.T; Q has orthonormal columns
    M: sp.csr_matrix
    K: sp.csr_matrix
    G: sp.csr_matrix
    B: sp.csr_matrix        # (n_p, n_u): -int psi div phi
    T: sp.csr_matrix        # tangential trace, selection of boundary dofs
    Mb: sp.csr_matrix
    flux: sp.csr_matrix     # (n_b, n_u): int (2 Du nu).tau psi_j ds
    Mp: sp.csr_matrix
    Kp: sp.csr_matrix
    M_full: sp.csr_matrix = field(repr=False)
    M_scalar: sp.csr_matrix = field(repr=False)
    geo: ElementGeometry = field(repr=False)

    @property
    def length(self):
        return self.mesh.length

    @property
    def n_u(self):
        return self.M.shape[0]

    @property
    def n_p(self):
        return self.Mp.shape[0]

    @property
    def n_b(self):
        return self.Mb.shape[0]

    @property
    def n_unknowns(self):
        return self.n_u + self.n_p

    @cached_property
    def tangent(self):
        """Discrete unit tangent at the boundary nodes, as used by ``Q``."""
        b = self.mesh.boundary_nodes
        cols = self.n_u - self.n_b + np.arange(self.n_b)
        Qb = self.Q[np.concatenate([2 * b, 2 * b + 1])][:, cols].toarray()
        nb = self.n_b
        return np.stack([np.diag(Qb[:nb]), np.diag(Qb[nb:])], axis=1)

    @cached_property
    def TtMbT(self):
        return (self.T.T @ self.Mb @ self.T).tocsr()

    @cached_property
    def mean(self):
        """Pressure mean functional: ``m @ p = int p``."""
        return np.asarray(self.Mp.sum(axis=0)).ravel()

    @cached_property
    def fourier(self):
        return fourier_matrix(float(self.length), self.n_b)

    def sobolev_gram(self, order):
        """Real Gram matrix of the boundary ``H^order`` inner product."""
        return _sobolev_gram(self, float(order))

    def with_params(self, alpha, beta):
        """Same matrices, different scalar coefficients."""
        if not beta > 0:
            raise ValueError("beta must be positive")
        out = OperatorBundle(self.mesh, float(alpha), float(beta), self.Q, self.M, self.K,
                             self.G, self.B, self.T, self.Mb, self.flux, self.Mp, self.Kp,
                             self.M_full, self.M_scalar, self.geo)
        for name in ("tangent", "TtMbT", "mean", "fourier", "_mass_factor", "_gram_cache"):
            if name in self.__dict__:
                out.__dict__[name] = self.__dict__[name]
        return out

    # data handling
    def is_full(self, f):
        n = len(f)
        if n == self.n_u:
            return False
        if n == self.Q.shape[0]:
            return True
        raise ValueError(f"velocity vector of length {n}; expected {self.n_u} or {self.Q.shape[0]}")

    def load(self, f):
        """Discrete L2 functional ``phi -> int f . phi`` on the reduced space."""
        f = np.asarray(f)
        if self.is_full(f):
            return self.Q.T @ (self.M_full @ f)
        return self.M @ f

    def l2_norm(self, f):
        f = np.asarray(f)
        Mx = self.M_full @ f if self.is_full(f) else self.M @ f
        return float(np.sqrt(abs(np.vdot(f, Mx))))

    def restrict(self, full):
        return self.Q.T @ full

    def extend(self, u):
        return self.Q @ u

    def boundary_l2(self, g):
        g = _values(g)
        return float(np.sqrt(abs(np.vdot(g, self.Mb @ g))))

    def pressure_h1(self, p):
        return float(np.sqrt(abs(np.vdot(p, self.Mp @ p) + np.vdot(p, self.Kp @ p))))

    def pressure_l2(self, p):
        return float(np.sqrt(abs(np.vdot(p, self.Mp @ p))))

    @cached_property
    def _mass_factor(self):
        return SaddleFactor(self, self.M)

    def projection_solver(self):
        """Factorization of the saddle matrix with the velocity mass in the (1,1) block."""
        return self._mass_factor


def _sobolev_gram(bundle, order):
    cache = bundle.__dict__.setdefault("_gram_cache", {})
    if order not in cache:
        F = bundle.fourier
        w = sobolev_weights(float(bundle.length), bundle.n_b, order)
        cache[order] = np.real(F.conj().T @ (w[:, None] * F))
    return cache[order]


class SaddleFactor:
    """Sparse LU of ``[[A, B^T, 0], [B, 0, m], [0, m^T, 0]]``.

    The last row/column fixes the pressure to zero mean.
    """

    def __init__(self, bundle: OperatorBundle, A11):
        self.bundle = bundle
        nu, npr = bundle.n_u, bundle.n_p
        m = sp.csr_matrix(bundle.mean.reshape(-1, 1))
        S = sp.bmat([[A11, bundle.B.T, None],
                     [bundle.B, None, m],
                     [None, m.T, None]], format="csc")
        self.matrix = S
        self.n = S.shape[0]
        self._sizes = (nu, npr)
        try:
            self.lu = spla.splu(S)
        except RuntimeError as exc:
            raise SaddleSolveError(str(exc)) from exc

    def solve(self, rhs_u, rhs_p=None, trans="N"):
        """Return ``(u, p, mu)`` for velocity and (optional) divergence right-hand sides."""
        nu, npr = self._sizes
        dtype = np.result_type(rhs_u, self.matrix.dtype, float)
        b = np.zeros(self.n, dtype=dtype)
        b[:nu] = rhs_u
        if rhs_p is not None:
            b[nu:nu + npr] = rhs_p
        if np.iscomplexobj(b) and not np.iscomplexobj(self.matrix):
            x = self.lu.solve(b.real.copy(), trans=trans) + 1j * self.lu.solve(b.imag.copy(), trans=trans)
        else:
            x = self.lu.solve(b, trans=trans)
        if not np.all(np.isfinite(x)):
            raise SaddleSolveError("non-finite saddle solution")
        return x[:nu], x[nu:nu + npr], x[nu + npr]

    def condition_estimate(self):
        """1-norm condition number estimate (Hager/Higham)."""
        n = self.n
        lu = self.lu
        dtype = self.matrix.dtype
        inv = spla.LinearOperator((n, n), dtype=dtype,
                                  matvec=lambda x: lu.solve(np.asarray(x, dtype=dtype)),
                                  rmatvec=lambda x: lu.solve(np.asarray(x, dtype=dtype), trans="H"))
        return float(spla.onenormest(self.matrix) * spla.onenormest(inv))


# ----------------------------------------------------------------- assembly


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def consistent_tangent(mesh: Mesh, B_full):
    """Unit tangents at the boundary nodes, normal to ``int phi_i n_h ds``.

    The column sums of ``B_full`` are ``-int_{boundary} phi_i n_h ds`` per
    velocity dof, zero at interior nodes.  Orientation follows the exact frame.
    """
    c = np.asarray(B_full.sum(axis=0)).ravel().reshape(-1, 2)
    nrm = -c[mesh.boundary_nodes]
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    tau = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1)
    tau *= np.sign(np.sum(tau * mesh.boundary_tangent, axis=1))[:, None]
    return tau


def _constraint_map(mesh: Mesh, tau):
    """Sparse Q: reduced -> full, with boundary dofs along ``tau``."""
    nn = mesh.n_nodes
    bnodes = mesh.boundary_nodes
    is_b = np.zeros(nn, dtype=bool)
    is_b[bnodes] = True
    interior = np.nonzero(~is_b)[0]
    ni = len(interior)
    rows = np.concatenate([2 * interior, 2 * interior + 1, 2 * bnodes, 2 * bnodes + 1])
    cols = np.concatenate([2 * np.arange(ni), 2 * np.arange(ni) + 1,
                           2 * ni + np.arange(len(bnodes)), 2 * ni + np.arange(len(bnodes))])
    vals = np.concatenate([np.ones(2 * ni), tau[:, 0], tau[:, 1]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nn, 2 * ni + len(bnodes))), ni


def _boundary_mass(mesh: Mesh):
    nbv = mesh.n_boundary_vertices
    n = 2 * nbv
    delta = mesh.length / nbv
    loc = delta / 30 * np.array([[4, 2, -1], [2, 16, 2], [-1, 2, 4]], dtype=float)
    idx = np.stack([np.arange(0, n, 2), np.arange(1, n, 2), (np.arange(0, n, 2) + 2) % n], axis=1)
    rows = np.repeat(idx, 3, axis=1)
    cols = np.tile(idx, (1, 3))
    vals = np.broadcast_to(loc.ravel(), (nbv, 9))
    return _coo(rows, cols, vals, (n, n))


def _flux_operator(mesh: Mesh, n_gauss=6):
    """Rows: boundary nodes; columns: full velocity dofs."""
    nbv = mesh.n_boundary_vertices
    nn = mesh.n_nodes
    delta = mesh.length / nbv
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    xi, wq = 0.5 * (xg + 1), 0.5 * wg
    shape = np.stack([(1 - xi) * (1 - 2 * xi), 4 * xi * (1 - xi), xi * (2 * xi - 1)], axis=1)
    curve = mesh.spec.curve()
    cells = mesh.boundary_cells
    X = mesh.geometry_nodes()
    rows, cols, vals = [], [], []
    for e in range(nbv):
        t, j, fwd = cells[e]
        a, b = (j, (j + 1) % 3) if fwd else ((j + 1) % 3, j)
        ref = (1 - xi)[:, None] * _REF_VERTS[a] + xi[:, None] * _REF_VERTS[b]
        _, dref = p2_basis(ref)
        _, _, inv = _map(X[t][None], dref[None])
        grad = np.einsum("qrd,qar->qad", inv[0], dref)  # (nq, 6, 2)
        _, nu, tau, _ = curve.frame(delta * (e + xi))
        dn = np.einsum("qad,qd->qa", grad, nu)
        dt = np.einsum("qad,qd->qa", grad, tau)
        # (2 D(phi_a e_i) nu) . tau = tau_i d_nu phi_a + nu_i d_tau phi_a
        fl = tau[:, None, :] * dn[:, :, None] + nu[:, None, :] * dt[:, :, None]  # (nq, 6, 2)
        local = np.einsum("q,qk,qai->kai", wq * delta, shape, fl)
        nodes = mesh.p2_cells[t]
        bidx = np.array([2 * e, 2 * e + 1, (2 * e + 2) % (2 * nbv)])
        dof = (2 * nodes[:, None] + np.arange(2)[None, :])
        rows.append(np.broadcast_to(bidx[:, None, None], local.shape))
        cols.append(np.broadcast_to(dof[None], local.shape))
        vals.append(local)
    return _coo(np.concatenate([r.ravel() for r in rows]), np.concatenate([c.ravel() for c in cols]),
                np.concatenate([v.ravel() for v in vals]), (2 * nbv, 2 * nn))


def assemble(mesh: Mesh, alpha: float = 0.0, beta: float = 1.0) -> OperatorBundle:
    """Assemble every matrix of the resolvent weak form on ``mesh``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    geo = element_geometry(mesh)
    nn, nv = mesh.n_nodes, mesh.n_vertices
    cells = mesh.p2_cells
    wdet = geo.detJ * geo.weights  # (nt, nq)

    Ms = np.einsum("tq,qa,qb->tab", wdet, geo.phi, geo.phi)
    Ls = np.einsum("tq,tqad,tqbd->tab", wdet, geo.dphi, geo.dphi)
    r = np.repeat(cells, 6, axis=1)
    c = np.tile(cells, (1, 6))
    M_scalar = _coo(r, c, Ms, (nn, nn))
    L_scalar = _coo(r, c, Ls, (nn, nn))

    # 2 D(phi_a e_i) : D(phi_b e_j) = delta_ij grad a . grad b + d_j phi_a d_i phi_b
    cross = np.einsum("tq,tqaj,tqbi->taibj", wdet, geo.dphi, geo.dphi)
    Kloc = cross + np.einsum("tab,ij->taibj", Ls, np.eye(2))
    dof = (2 * cells[:, :, None] + np.arange(2)[None, None, :]).reshape(len(cells), 12)
    Kloc = Kloc.reshape(len(cells), 12, 12)
    K_full = _coo(np.repeat(dof, 12, axis=1), np.tile(dof, (1, 12)), Kloc, (2 * nn, 2 * nn))
    K_full = 0.5 * (K_full + K_full.T)

    Bloc = -np.einsum("tq,qp,tqai->tpai", wdet, geo.psi, geo.dphi).reshape(len(cells), 3, 12)
    tri = mesh.triangles
    B_full = _coo(np.repeat(tri, 12, axis=1), np.tile(dof, (1, 3)), Bloc, (nv, 2 * nn))

    Mploc = np.einsum("tq,qa,qb->tab", wdet, geo.psi, geo.psi)
    Kploc = np.einsum("tq,tqad,tqbd->tab", wdet, geo.dpsi, geo.dpsi)
    rp, cp = np.repeat(tri, 3, axis=1), np.tile(tri, (1, 3))
    Mp = _coo(rp, cp, Mploc, (nv, nv))
    Kp = _coo(rp, cp, Kploc, (nv, nv))

    I2 = sp.identity(2, format="csr")
    M_full = sp.kron(M_scalar, I2, format="csr")
    G_full = sp.kron(M_scalar + L_scalar, I2, format="csr")

    Q, ni = _constraint_map(mesh, consistent_tangent(mesh, B_full))
    nu = Q.shape[1]
    nb = nu - 2 * ni

    def red(A):
        out = (Q.T @ A @ Q).tocsr()
        return 0.5 * (out + out.T)

    T = sp.csr_matrix((np.ones(nb), (np.arange(nb), 2 * ni + np.arange(nb))), shape=(nb, nu))
    flux = (_flux_operator(mesh) @ Q).tocsr()

    return OperatorBundle(mesh, float(alpha), float(beta), Q, red(M_full), red(K_full),
                          red(G_full), (B_full @ Q).tocsr(), T, _boundary_mass(mesh), flux,
                          Mp, Kp, M_full, M_scalar, geo)


# --------------------------------------------------------------- operations


def tangential_trace(bundle: OperatorBundle, u) -> BoundaryScalar:
    u = np.asarray(u)
    if len(u) != bundle.n_u:
        raise ValueError(f"velocity vector of length {len(u)}, expected {bundle.n_u}")
    return BoundaryScalar(bundle.T @ u)


def x0_norm(bundle: OperatorBundle, bp, F) -> float:
    """``||f||_{L2} + ||h||_{H^1/2}``."""
    f, h = F
    bp = bundle if bp is None else bp
    return bundle.l2_norm(f) + boundary_h12_norm(bp, h, 0.5)


def h_norm(bundle: OperatorBundle, U: State) -> float:
    """``(||u||^2 + beta ||u_b||^2_{L2(boundary)})^{1/2}``."""
    a = np.vdot(U.u, bundle.M @ U.u).real
    b = np.vdot(U.ub, bundle.Mb @ U.ub).real
    return float(np.sqrt(a + bundle.beta * b))


def v_norm(bundle: OperatorBundle, u) -> float:
    """``(2 ||Du||^2 + ||T u||^2_{L2(boundary)})^{1/2}``; the boundary weight is 1, not beta."""
    u = np.asarray(u)
    g = bundle.T @ u
    return float(np.sqrt(abs(np.vdot(u, bundle.K @ u).real + np.vdot(g, bundle.Mb @ g).real)))


def leray_project(bundle: OperatorBundle, f) -> np.ndarray:
    """Mass-orthogonal projection onto discretely divergence-free fields."""
    u, _, _ = bundle.projection_solver().solve(bundle.load(f))
    return u


# ------------------------------------------------------------ interpolation


def interpolate_velocity(bundle: OperatorBundle, fn, full=False):
    """Nodal interpolant of ``fn(x, y) -> (ux, uy)``; reduced unless ``full``."""
    P = bundle.mesh.nodes
    ux, uy = fn(P[:, 0], P[:, 1])
    out = np.empty(2 * len(P), dtype=np.result_type(ux, uy, float))
    out[0::2] = ux
    out[1::2] = uy
    return out if full else bundle.restrict(out)


def interpolate_trace(bundle: OperatorBundle, fn):
    """Tangential component of ``fn(x, y) -> (ux, uy)`` at the boundary nodes."""
    mesh = bundle.mesh
    P = mesh.nodes[mesh.boundary_nodes]
    ux, uy = fn(P[:, 0], P[:, 1])
    tau = bundle.tangent
    return ux * tau[:, 0] + uy * tau[:, 1]


def interpolate_boundary(bundle: OperatorBundle, fn):
    """Boundary scalar from ``fn(s)`` evaluated at the boundary node arclengths."""
    return np.asarray(fn(bundle.mesh.boundary_s))


def interpolate_pressure(bundle: OperatorBundle, fn):
    V = bundle.mesh.vertices
    return np.asarray(fn(V[:, 0], V[:, 1]))


def velocity_at_quadrature(bundle: OperatorBundle, u):
    full = bundle.extend(u) if not bundle.is_full(u) else np.asarray(u)
    U = full.reshape(-1, 2)[bundle.mesh.p2_cells]  # (nt, 6, 2)
    return np.einsum("qa,tad->tqd", bundle.geo.phi, U)


def l2_error(bundle: OperatorBundle, u, exact):
    """Return ``(||u_h - u||, ||u||)`` with ``exact(x, y) -> (ux, uy)``, by quadrature."""
    geo = bundle.geo
    uh = velocity_at_quadrature(bundle, u)
    ex, ey = exact(geo.points[..., 0], geo.points[..., 1])
    ue = np.stack(np.broadcast_arrays(ex, ey), axis=-1)
    wdet = geo.detJ * geo.weights
    err = np.sqrt(np.sum(wdet * np.sum(np.abs(uh - ue) ** 2, axis=-1)))
    nrm = np.sqrt(np.sum(wdet * np.sum(np.abs(ue) ** 2, axis=-1)))
    return float(err), float(nrm)


def pressure_l2_error(bundle: OperatorBundle, p, exact):
    geo = bundle.geo
    ph = np.einsum("qa,ta->tq", geo.psi, np.asarray(p)[bundle.mesh.triangles])
    pe = exact(geo.points[..., 0], geo.points[..., 1])
    wdet = geo.detJ * geo.weights
    return (float(np.sqrt(np.sum(wdet * np.abs(ph - pe) ** 2))),
            float(np.sqrt(np.sum(wdet * np.abs(pe) ** 2))))


def export_matrix(A, path):
    """Write ``A`` in coordinate text format: one ``row col real imag`` line per entry."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"% {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {float(np.real(v))!r} {float(np.imag(v))!r}\n")


def import_matrix(path):
    with open(path) as fh:
        n, m, _ = (int(x) for x in fh.readline()[1:].split())
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, m))
    vals = data[:, 2] + 1j * data[:, 3]
    if not np.any(data[:, 3]):
        vals = data[:, 2]
    return sp.coo_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(n, m)).tocsr()
