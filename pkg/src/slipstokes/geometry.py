"""
Smooth planar domains, their boundary frames and curved triangulations.

Every supported domain is star-shaped about the origin and bounded by a
C-infinity closed curve.  Boundary quantities are parametrized by arclength
``s`` in ``[0, L)``, traversed counterclockwise, with outward normal ``nu``
and unit tangent ``tau`` related by ``nu = (tau_y, -tau_x)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

MESH_FORMAT_VERSION = 1

_KINDS = ("disk", "ellipse", "fourier_boundary")


class MeshError(RuntimeError):
    """Raised when a triangulation cannot be produced or fails a quality check."""

    def __init__(self, msg, region=None):
        if region is not None:
            msg = f"{msg} (near x={region[0]:.4g}, y={region[1]:.4g})"
        super().__init__(msg)
        self.region = region


@dataclass(frozen=True)
class DomainSpec:
    """Description of a smooth bounded domain.

    Use the constructors :meth:`disk`, :meth:`ellipse` and
    :meth:`fourier_boundary` rather than the raw initializer.
    """

    kind: str
    radius: float = 1.0
    semi_axes: tuple = ()
    cos_amps: tuple = ()
    sin_amps: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ellipse":
            if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0:
                raise ValueError("ellipse needs two positive semi-axes")
            return
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind == "disk" and (self.cos_amps or self.sin_amps):
            raise ValueError("disk takes no Fourier amplitudes")
        total = sum(abs(c) for c in self.cos_amps) + sum(abs(c) for c in self.sin_amps)
        # the amplitude cap keeps r(theta) >= 0.1 r0
        if total > 0.9 * self.radius:
            raise ValueError(
                f"Fourier amplitudes sum to {total:.4g} > 0.9*r0 = {0.9 * self.radius:.4g}"
            )

    @classmethod
    def disk(cls, radius=1.0):
        return cls("disk", radius=float(radius))

    @classmethod
    def ellipse(cls, a, b):
        return cls("ellipse", semi_axes=(float(a), float(b)))

    @classmethod
    def fourier_boundary(cls, r0, cos_amps=(), sin_amps=()):
        return cls("fourier_boundary", radius=float(r0),
                   cos_amps=tuple(float(c) for c in cos_amps),
                   sin_amps=tuple(float(c) for c in sin_amps))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        if kind == "disk":
            return cls.disk(d.get("radius", 1.0))
        if kind == "ellipse":
            return cls.ellipse(d["a"], d["b"])
        if kind == "fourier_boundary":
            return cls.fourier_boundary(d.get("r0", 1.0), d.get("cos", ()), d.get("sin", ()))
        raise ValueError(f"unknown domain kind {kind!r}")

    def to_dict(self):
        if self.kind == "disk":
            return {"kind": "disk", "radius": self.radius}
        if self.kind == "ellipse":
            return {"kind": "ellipse", "a": self.semi_axes[0], "b": self.semi_axes[1]}
        return {"kind": self.kind, "r0": self.radius,
                "cos": list(self.cos_amps), "sin": list(self.sin_amps)}

    @property
    def label(self):
        if self.kind == "disk":
            return f"disk({self.radius:g})"
        if self.kind == "ellipse":
            return "ellipse({:g},{:g})".format(*self.semi_axes)
        return f"fourier_boundary({self.radius:g})"

    @property
    def area(self):
        """Exact area of the domain."""
        if self.kind == "ellipse":
            a, b = self.semi_axes
            return math.pi * a * b
        # (1/2) int r^2 dtheta
        r0 = self.radius
        extra = sum(c * c for c in self.cos_amps) + sum(c * c for c in self.sin_amps)
        return math.pi * (r0 * r0 + 0.5 * extra)

    def curve(self):
        return _Curve(self)


def is_axisymmetric(spec: DomainSpec) -> bool:
    """True iff the domain is a disk, i.e. invariant under rotations about its center."""
    if spec.kind == "disk":
        return True
    if spec.kind == "ellipse":
        a, b = spec.semi_axes
        return a == b
    return not any(spec.cos_amps) and not any(spec.sin_amps)


class _Curve:
    """Exact boundary curve ``X(t)``, ``t`` in ``[0, 2 pi)``, with arclength tables."""

    _n_fft = 2048

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        t = 2 * np.pi * np.arange(self._n_fft) / self._n_fft
        speed = self.speed(t)
        c = np.fft.rfft(speed) / self._n_fft
        self._c0 = c[0].real
        keep = np.abs(c) > 1e-17 * self._c0
        keep[0] = False
        self._k = np.nonzero(keep)[0]
        # real-signal rfft: the positive half carries twice the weight
        self._ck = 2 * c[self._k]
        self.length = 2 * np.pi * self._c0

    def radial(self, theta):
        theta = np.asarray(theta, dtype=float)
        spec = self.spec
        if spec.kind == "ellipse":
            a, b = spec.semi_axes
            return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        r = np.full_like(theta, spec.radius)
        for k, c in enumerate(spec.cos_amps, start=1):
            r = r + c * np.cos(k * theta)
        for k, c in enumerate(spec.sin_amps, start=1):
            r = r + c * np.sin(k * theta)
        return r

    def derivs(self, t):
        """Return ``X, X', X''`` at parameter values ``t`` (each of shape (n, 2))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ct, st = np.cos(t), np.sin(t)
        spec = self.spec
        if spec.kind == "ellipse":
            a, b = spec.semi_axes
            X = np.column_stack([a * ct, b * st])
            dX = np.column_stack([-a * st, b * ct])
            ddX = -X
            return X, dX, ddX
        r = np.full_like(t, spec.radius)
        dr = np.zeros_like(t)
        ddr = np.zeros_like(t)
        for k, c in enumerate(spec.cos_amps, start=1):
            r += c * np.cos(k * t)
            dr -= k * c * np.sin(k * t)
            ddr -= k * k * c * np.cos(k * t)
        for k, c in enumerate(spec.sin_amps, start=1):
            r += c * np.sin(k * t)
            dr += k * c * np.cos(k * t)
            ddr -= k * k * c * np.sin(k * t)
        e = np.column_stack([ct, st])
        e_perp = np.column_stack([-st, ct])
        X = r[:, None] * e
        dX = dr[:, None] * e + r[:, None] * e_perp
        ddX = ddr[:, None] * e + 2 * dr[:, None] * e_perp - r[:, None] * e
        return X, dX, ddX

    def speed(self, t):
        return np.linalg.norm(self.derivs(t)[1], axis=1)

    def arclength(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = self._c0 * t
        if self._k.size:
            k = self._k
            phase = np.exp(1j * np.outer(t, k)) - 1.0
            s = s + (phase * (self._ck / (1j * k))).real.sum(axis=1)
        return s

    def param_of(self, s):
        """Invert the arclength map by Newton iteration."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = 2 * np.pi * s / self.length
        for _ in range(50):
            dt = (self.arclength(t) - s) / self.speed(t)
            t = t - dt
            if np.max(np.abs(dt), initial=0.0) < 1e-15:
                break
        return t

    def frame(self, s):
        """Positions, outward normals, tangents and signed curvature at arclength ``s``."""
        t = self.param_of(s)
        X, dX, ddX = self.derivs(t)
        sp = np.linalg.norm(dX, axis=1)
        tau = dX / sp[:, None]
        nu = np.column_stack([tau[:, 1], -tau[:, 0]])
        kappa = (dX[:, 0] * ddX[:, 1] - dX[:, 1] * ddX[:, 0]) / sp ** 3
        return X, nu, tau, kappa


@dataclass(frozen=True, eq=False)
class BoundaryParam:
    """Arclength-sampled boundary of a domain."""

    length: float
    s: np.ndarray
    x: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    curvature: np.ndarray
    curve: _Curve = field(repr=False)

    def at(self, s):
        """Exact ``(x, nu, tau, kappa)`` at arbitrary arclengths."""
        return self.curve.frame(np.mod(s, self.length))

    def total_curvature(self):
        ds = self.length / len(self.s)
        return float(np.sum(self.curvature) * ds)


def build_boundary_param(spec: DomainSpec, n_samples: int) -> BoundaryParam:
    if n_samples < 16:
        raise ValueError("n_samples must be at least 16")
    curve = spec.curve()
    L = curve.length
    s = L * np.arange(n_samples) / n_samples
    x, nu, tau, kappa = curve.frame(s)
    return BoundaryParam(L, s, x, nu, tau, kappa, curve)


@dataclass(eq=False)
class Mesh:
    """Triangulation with quadratic (curved) boundary edges.

    Vertices ``0..nb-1`` are the boundary vertices in counterclockwise order,
    vertex ``i`` sitting at arclength ``i*L/nb``.  ``boundary_edges[i]`` joins
    vertex ``i`` to ``i+1``.  Boundary P2 nodes are numbered cyclically: even
    positions are vertices, odd positions are boundary edge midpoints, so node
    ``k`` sits at arclength ``k*L/(2 nb)``.
    """

    spec: DomainSpec
    h: float
    length: float
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_mid: np.ndarray
    boundary_edges: np.ndarray
    boundary_s: np.ndarray
    boundary_normal: np.ndarray
    boundary_tangent: np.ndarray

    @property
    def n_boundary_vertices(self):
        return len(self.boundary_edges)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_nodes(self):
        """Number of P2 nodes (vertices plus edge midpoints)."""
        return len(self.vertices) + len(self.edges)

    @cached_property
    def nodes(self):
        return np.vstack([self.vertices, self.edge_mid])

    @cached_property
    def p2_cells(self):
        """(nt, 6) P2 node indices: three vertices then edges 01, 12, 20."""
        return np.hstack([self.triangles, self.tri_edges + self.n_vertices])

    @cached_property
    def boundary_nodes(self):
        """Global P2 node ids of the boundary nodes in cyclic order."""
        nb = self.n_boundary_vertices
        out = np.empty(2 * nb, dtype=np.int64)
        out[0::2] = np.arange(nb)
        out[1::2] = self.boundary_edges + self.n_vertices
        return out

    @cached_property
    def boundary_cells(self):
        """For each boundary edge: (triangle id, local edge id, forward flag)."""
        nb = self.n_boundary_vertices
        where = {}
        for t, row in enumerate(self.tri_edges):
            for j, e in enumerate(row):
                where.setdefault(int(e), (t, j))
        out = np.empty((nb, 3), dtype=np.int64)
        for i, e in enumerate(self.boundary_edges):
            t, j = where[int(e)]
            a = self.triangles[t, j]
            out[i] = (t, j, int(a == i))
        return out

    def geometry_nodes(self):
        """(nt, 6, 2) coordinates of the isoparametric geometry nodes."""
        return self.nodes[self.p2_cells]

    def area(self):
        from .spaces import element_geometry  # local import: spaces depends on geometry
        geo = element_geometry(self)
        return float(np.sum(geo.detJ * geo.weights))

    def angles(self):
        """(nt, 3) interior angles in degrees of the straight-sided triangles."""
        P = self.vertices[self.triangles]
        out = np.empty((len(P), 3))
        for i in range(3):
            u = P[:, (i + 1) % 3] - P[:, i]
            v = P[:, (i + 2) % 3] - P[:, i]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(c, -1, 1)))
        return out

    def min_angle(self):
        return float(self.angles().min())

    def boundary_length(self):
        """Length of the quadratic boundary edges (5-point Gauss per edge)."""
        xg, wg = np.polynomial.legendre.leggauss(5)
        xi = 0.5 * (xg + 1)
        dphi = np.stack([4 * xi - 3, 4 - 8 * xi, 4 * xi - 1], axis=1)
        bn = self.boundary_nodes
        nb = self.n_boundary_vertices
        P = self.nodes[bn]
        idx = np.stack([np.arange(0, 2 * nb, 2), np.arange(1, 2 * nb, 2),
                        (np.arange(0, 2 * nb, 2) + 2) % (2 * nb)], axis=1)
        X = P[idx]  # (nb, 3, 2)
        dX = np.einsum("qj,ejd->eqd", dphi, X)
        return float(np.sum(np.linalg.norm(dX, axis=2) @ (0.5 * wg)))

    def boundary_distance(self):
        """Max distance of boundary vertices and midpoints from the exact curve."""
        curve = self.spec.curve()
        P = self.nodes[self.boundary_nodes]
        theta = np.arctan2(P[:, 1], P[:, 0])
        return float(np.max(np.abs(np.hypot(P[:, 0], P[:, 1]) - curve.radial(theta))))

    def save(self, path):
        path = Path(path)
        np.savez(
            path,
            version=np.array(MESH_FORMAT_VERSION),
            spec=np.array(json.dumps(self.spec.to_dict(), sort_keys=True)),
            h=np.array(self.h), length=np.array(self.length),
            vertices=self.vertices, triangles=self.triangles, edges=self.edges,
            tri_edges=self.tri_edges, edge_mid=self.edge_mid,
            boundary_edges=self.boundary_edges, boundary_s=self.boundary_s,
            boundary_normal=self.boundary_normal, boundary_tangent=self.boundary_tangent,
        )

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            version = int(z["version"])
            if version != MESH_FORMAT_VERSION:
                raise ValueError(f"mesh file version {version}, expected {MESH_FORMAT_VERSION}")
            spec = DomainSpec.from_dict(json.loads(str(z["spec"])))
            return cls(spec, float(z["h"]), float(z["length"]), z["vertices"], z["triangles"],
                       z["edges"], z["tri_edges"], z["edge_mid"], z["boundary_edges"],
                       z["boundary_s"], z["boundary_normal"], z["boundary_tangent"])


def _edges_of(triangles):
    local = np.array([[0, 1], [1, 2], [2, 0]])
    pairs = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 3)


def _inside(curve, p):
    theta = np.arctan2(p[:, 1], p[:, 0])
    return np.hypot(p[:, 0], p[:, 1]) < curve.radial(theta)


def _triangulate(curve, p):
    tri = Delaunay(p).simplices
    cen = p[tri].mean(axis=1)
    return tri[_inside(curve, cen)]


def generate_mesh(spec: DomainSpec, h: float, *, max_iter: int = 300) -> Mesh:
    """Triangulate ``spec`` with target edge length ``h``.

    Boundary vertices are equispaced in arclength; interior vertices start on
    a hexagonal lattice and are relaxed with a truss-force smoother (boundary
    vertices held fixed).
    """
    curve = spec.curve()
    L = curve.length
    if not 0 < h < L / 8:
        raise ValueError(f"mesh size h={h} outside (0, L/8) with L={L:.6g}")
    nb = max(int(math.ceil(L / h - 1e-9)), 8)
    sb = L * np.arange(nb) / nb
    pb, _, _, _ = curve.frame(sb)

    # dense boundary samples for distance queries
    nd = 16 * nb
    sd = L * np.arange(nd) / nd
    pd, nud, _, _ = curve.frame(sd)
    tree = cKDTree(pd)

    hs = L / nb
    xmin, ymin = pd.min(axis=0)
    xmax, ymax = pd.max(axis=0)
    dy = hs * math.sqrt(3) / 2
    rows = []
    for j, y in enumerate(np.arange(ymin, ymax + dy, dy)):
        x = np.arange(xmin + (j % 2) * hs / 2, xmax + hs, hs)
        rows.append(np.column_stack([x, np.full_like(x, y)]))
    pi = np.vstack(rows)
    pi = pi[_inside(curve, pi)]
    pi = pi[tree.query(pi)[0] > 0.6 * hs]

    margin = 0.4 * hs
    anchor = None
    for _ in range(max_iter):
        p = np.vstack([pb, pi])
        if anchor is None or np.max(np.linalg.norm(pi - anchor, axis=1), initial=0.0) > 0.1 * hs:
            # retriangulate only after noticeable motion
            anchor = pi.copy()
            edges, _ = _edges_of(_triangulate(curve, p))
        vec = p[edges[:, 1]] - p[edges[:, 0]]
        lens = np.linalg.norm(vec, axis=1)
        L0 = 1.2 * math.sqrt(np.mean(lens ** 2))
        force = np.maximum(L0 - lens, 0.0) / lens
        fvec = force[:, None] * vec
        ftot = np.zeros_like(p)
        np.add.at(ftot, edges[:, 0], -fvec)
        np.add.at(ftot, edges[:, 1], fvec)
        move = 0.2 * ftot[nb:]
        new = pi + move
        dist, near = tree.query(new)
        bad = (~_inside(curve, new)) | (dist < margin)
        new[bad] = pd[near[bad]] - margin * nud[near[bad]]
        step = np.max(np.linalg.norm(new - pi, axis=1), initial=0.0)
        pi = new
        if step < 2e-3 * hs:
            break

    p = np.vstack([pb, pi])
    tri = _triangulate(curve, p)
    P = p[tri]
    orient = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
              - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0]))
    tri[orient < 0] = tri[orient < 0][:, [0, 2, 1]]
    # drop vertices left unreferenced by the final triangulation
    used = np.zeros(len(p), dtype=bool)
    used[tri] = True
    if not used[:nb].all():
        raise MeshError("boundary vertex not attached to any triangle", pb[np.argmin(used[:nb])])
    remap = np.cumsum(used) - 1
    p = p[used]
    tri = remap[tri]

    edges, tri_edges = _edges_of(tri)
    key = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    bedges = np.empty(nb, dtype=np.int64)
    for i in range(nb):
        a, b = sorted((i, (i + 1) % nb))
        e = key.get((a, b))
        if e is None:
            raise MeshError("boundary segment missing from triangulation", pb[i])
        bedges[i] = e
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    if np.any(counts[bedges] != 1):
        i = int(np.argmax(counts[bedges] != 1))
        raise MeshError("boundary segment shared by two triangles", pb[i])
    if np.any(counts == 1) and np.sum(counts == 1) != nb:
        e = int(np.nonzero(counts == 1)[0][0])
        raise MeshError("triangulation has a hole or interior free edge", p[edges[e]].mean(axis=0))

    mid = 0.5 * (p[edges[:, 0]] + p[edges[:, 1]])
    bs = L * np.arange(2 * nb) / (2 * nb)
    xb, nub, taub, _ = curve.frame(bs)
    mid[bedges] = xb[1::2]
    p[:nb] = xb[0::2]

    mesh = Mesh(spec, float(h), float(L), p, tri, edges, tri_edges, mid, bedges, bs, nub, taub)
    worst = mesh.angles().min(axis=1)
    if worst.min() < 20.0:
        t = int(np.argmin(worst))
        raise MeshError(f"minimum angle {worst[t]:.1f} deg below 20",
                        mesh.vertices[mesh.triangles[t]].mean(axis=0))
    return mesh
