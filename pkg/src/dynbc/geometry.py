"""Discrete domains: 1D interval and 2D disk with circular boundary.

A mesh carries node coordinates, quadrature weights for the bulk measure and
the boundary measure, the boundary structure (ordering, outward normals),
membership masks for the control arc ``gamma`` and the observation arc
``gamma0``, and the finite-difference stencils that the operator assembly
and the diagnostic evaluators share.

Conventions:

* Interval ``[0, L]`` with ``n + 1`` equispaced nodes.  The boundary is the
  two endpoints; each carries unit boundary weight (counting measure), so
  the boundary integral of ``u`` is ``u(0) + u(L)``.  There is no boundary
  diffusion in 1D.
* Disk of radius ``R`` on a polar tensor grid: a center node plus ``n_r``
  rings of ``n_theta`` nodes.  Angular nodes are cell-centered,
  ``theta_k = 2*pi*(k + 1/2)/n_theta``, so arc masks never land exactly on
  a node.  Bulk weights are exact polar cell areas (they sum to ``pi R^2``
  in exact arithmetic); boundary weights are ``2 pi R / n_theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError

IntervalSide = Literal["left", "right", "both"]

_INTERVAL_SIDES = {"left": (True, False), "right": (False, True), "both": (True, True)}


@dataclass(frozen=True)
class ArcSpec:
    """Boundary arc on the circle: center angle and half-width (radians)."""

    center: float = 0.0
    half_width: float = np.pi / 8

    def contains_angle(self, theta: float | np.ndarray) -> np.ndarray:
        d = np.angle(np.exp(1j * (np.asarray(theta) - self.center)))
        return np.abs(d) < self.half_width

    def strictly_inside(self, outer: "ArcSpec") -> bool:
        """True if this arc is strictly contained in ``outer`` (angle comparison)."""
        if outer.half_width >= np.pi:
            return self.half_width < np.pi
        gap = abs(np.angle(np.exp(1j * (self.center - outer.center))))
        return gap + self.half_width < outer.half_width


@dataclass(frozen=True)
class DomainSpec:
    """Geometry, resolution and subboundary descriptors for one domain.

    ``kind='interval'``: ``size`` is the length, ``n`` the cell count;
    ``gamma``/``gamma0`` name endpoint subsets.  ``kind='disk'``: ``size``
    is the radius, ``n_r`` x ``n_theta`` the polar resolution;
    ``gamma``/``gamma0`` are :class:`ArcSpec` with gamma strictly inside
    gamma0.
    """

    kind: Literal["interval", "disk"]
    size: float = 1.0
    n: int = 32
    n_r: int = 8
    n_theta: int = 32
    gamma: IntervalSide | ArcSpec = "right"
    gamma0: IntervalSide | ArcSpec | None = None

    def __post_init__(self):
        if self.size <= 0:
            raise GeometryError(f"domain size must be positive, got {self.size}")
        if self.kind == "interval":
            if self.n < 4:
                raise GeometryError(f"interval needs n >= 4 cells, got n={self.n}")
            if self.gamma not in _INTERVAL_SIDES:
                raise GeometryError(f"interval gamma must be left/right/both, got {self.gamma!r}")
            g0 = self.gamma0 if self.gamma0 is not None else self.gamma
            if g0 not in _INTERVAL_SIDES:
                raise GeometryError(f"interval gamma0 must be left/right/both, got {g0!r}")
            gm, g0m = _INTERVAL_SIDES[self.gamma], _INTERVAL_SIDES[g0]
            if any(a and not b for a, b in zip(gm, g0m)):
                raise GeometryError("gamma must be contained in gamma0")
        elif self.kind == "disk":
            if self.n_r < 2 or self.n_theta < 4:
                raise GeometryError(
                    f"disk needs n_r >= 2 and n_theta >= 4, got {self.n_r}x{self.n_theta}"
                )
            if not isinstance(self.gamma, ArcSpec):
                raise GeometryError("disk gamma must be an ArcSpec")
            if not 0 < self.gamma.half_width < np.pi:
                raise GeometryError(
                    f"gamma half-width must lie in (0, pi), got {self.gamma.half_width}"
                )
            g0 = self.gamma0 if self.gamma0 is not None else ArcSpec(
                self.gamma.center, min(2 * self.gamma.half_width, 0.99 * np.pi)
            )
            if not isinstance(g0, ArcSpec):
                raise GeometryError("disk gamma0 must be an ArcSpec")
            if not self.gamma.strictly_inside(g0):
                raise GeometryError("gamma arc must lie strictly inside gamma0 arc")
        else:
            raise GeometryError(f"unknown domain kind {self.kind!r}")

    @property
    def gamma0_effective(self) -> IntervalSide | ArcSpec:
        if self.gamma0 is not None:
            return self.gamma0
        if self.kind == "interval":
            return self.gamma
        return ArcSpec(self.gamma.center, min(2 * self.gamma.half_width, 0.99 * np.pi))


@dataclass
class Mesh:
    """Discretized domain with quadrature, masks and shared FD stencils."""

    spec: DomainSpec
    coords: np.ndarray            # (n_nodes, 2); interval uses y = 0
    interior_idx: np.ndarray      # indices of interior nodes
    boundary_idx: np.ndarray      # boundary nodes, cyclic (disk) or [left, right]
    w_bulk: np.ndarray            # (n_nodes,) bulk quadrature weights
    w_surf: np.ndarray            # (n_bdry,) boundary quadrature weights
    normals: np.ndarray           # (n_bdry, 2) outward unit normals
    gamma_mask: np.ndarray        # (n_bdry,) bool
    gamma0_mask: np.ndarray       # (n_bdry,) bool
    # stencils, filled by the builder
    stiff_bulk: sp.csr_matrix = field(default=None, repr=False)
    stiff_surf: sp.csr_matrix = field(default=None, repr=False)   # (n_bdry, n_bdry)
    lap_bulk: sp.csr_matrix = field(default=None, repr=False)
    lap_surf: sp.csr_matrix = field(default=None, repr=False)     # (n_bdry, n_bdry)
    dnu: sp.csr_matrix = field(default=None, repr=False)          # (n_bdry, n_nodes)
    grad_components: tuple = field(default=None, repr=False)      # matrices G_i, |grad u|^2 = sum (G_i u)^2
    grad_surf: sp.csr_matrix = field(default=None, repr=False)    # (n_bdry, n_bdry) tangential derivative

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_bdry(self) -> int:
        return self.boundary_idx.size

    def boundary_values(self, dof: np.ndarray) -> np.ndarray:
        """Trace of a nodal vector on the boundary (shared-DOF layout)."""
        return np.asarray(dof)[..., self.boundary_idx]

    def grad_squared(self, dof: np.ndarray) -> np.ndarray:
        """Nodal estimate of |grad u|^2 from the component stencils."""
        out = np.zeros(self.n_nodes)
        for g in self.grad_components:
            out += np.asarray(g @ dof) ** 2
        return out


def build_mesh(spec: DomainSpec) -> Mesh:
    """Build the discrete domain for ``spec``.

    Raises :class:`GeometryError` if the control arc contains no boundary
    node at this resolution.
    """
    if spec.kind == "interval":
        mesh = _build_interval(spec)
    else:
        mesh = _build_disk(spec)
    if not mesh.gamma_mask.any():
        raise GeometryError(
            "gamma contains no boundary node at this resolution; "
            "widen the arc or refine the angular grid"
        )
    if not mesh.gamma0_mask.any():
        raise GeometryError("gamma0 contains no boundary node at this resolution")
    if np.any(mesh.gamma_mask & ~mesh.gamma0_mask):
        raise GeometryError("gamma mask escapes gamma0 mask after discretization")
    return mesh


def _build_interval(spec: DomainSpec) -> Mesh:
    n, L = spec.n, spec.size
    h = L / n
    x = np.linspace(0.0, L, n + 1)
    coords = np.column_stack([x, np.zeros_like(x)])

    w_bulk = np.full(n + 1, h)
    w_bulk[0] = w_bulk[-1] = h / 2  # trapezoid weights
    w_surf = np.array([1.0, 1.0])   # counting measure at the endpoints

    boundary_idx = np.array([0, n])
    interior_idx = np.arange(1, n)
    normals = np.array([[-1.0, 0.0], [1.0, 0.0]])

    gm = _INTERVAL_SIDES[spec.gamma]
    g0 = _INTERVAL_SIDES[spec.gamma0_effective]
    gamma_mask = np.array(gm)
    gamma0_mask = np.array(g0)

    mesh = Mesh(spec, coords, interior_idx, boundary_idx, w_bulk, w_surf,
                normals, gamma_mask, gamma0_mask)
    _interval_stencils(mesh, n, h)
    return mesh


def _interval_stencils(mesh: Mesh, n: int, h: float) -> None:
    nn = n + 1
    # Dirichlet-energy edges: sum_e (u_i - u_j)^2 / h
    rows, cols, vals = [], [], []
    for i in range(n):
        c = 1.0 / h
        for (a, b, v) in ((i, i, c), (i + 1, i + 1, c), (i, i + 1, -c), (i + 1, i, -c)):
            rows.append(a), cols.append(b), vals.append(v)
    mesh.stiff_bulk = sp.csr_matrix((vals, (rows, cols)), shape=(nn, nn))
    mesh.stiff_surf = sp.csr_matrix((2, 2))  # endpoints carry no diffusion

    # pointwise Laplacian: 3-point interior, 2nd-order one-sided at the ends
    lap = sp.lil_matrix((nn, nn))
    for i in range(1, n):
        lap[i, i - 1] = 1.0 / h**2
        lap[i, i] = -2.0 / h**2
        lap[i, i + 1] = 1.0 / h**2
    lap[0, [0, 1, 2, 3]] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    lap[n, [n, n - 1, n - 2, n - 3]] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    mesh.lap_bulk = lap.tocsr()
    mesh.lap_surf = sp.csr_matrix((2, 2))  # Laplace-Beltrami of a point set is 0

    dnu = sp.lil_matrix((2, nn))
    dnu[0, [0, 1, 2]] = np.array([3.0, -4.0, 1.0]) / (2 * h)   # outward = -d/dx at x=0
    dnu[1, [n, n - 1, n - 2]] = np.array([3.0, -4.0, 1.0]) / (2 * h)
    mesh.dnu = dnu.tocsr()

    g = sp.lil_matrix((nn, nn))
    for i in range(1, n):
        g[i, i - 1] = -1.0 / (2 * h)
        g[i, i + 1] = 1.0 / (2 * h)
    g[0, [0, 1, 2]] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    g[n, [n, n - 1, n - 2]] = np.array([3.0, -4.0, 1.0]) / (2 * h)
    mesh.grad_components = (g.tocsr(),)
    mesh.grad_surf = sp.csr_matrix((2, 2))


def _build_disk(spec: DomainSpec) -> Mesh:
    n_r, n_t, R = spec.n_r, spec.n_theta, spec.size
    dr = R / n_r
    dth = 2 * np.pi / n_t
    theta = (np.arange(n_t) + 0.5) * dth   # cell-centered angles
    radii = (np.arange(1, n_r + 1)) * dr

    # node 0 is the center; node 1 + (j-1)*n_t + k is ring j, angle k
    nn = 1 + n_r * n_t
    coords = np.zeros((nn, 2))
    for j, r in enumerate(radii, start=1):
        base = 1 + (j - 1) * n_t
        coords[base:base + n_t, 0] = r * np.cos(theta)
        coords[base:base + n_t, 1] = r * np.sin(theta)

    # polar cell areas; ring cells are annulus sectors, boundary ring a half cell
    w_bulk = np.zeros(nn)
    w_bulk[0] = np.pi * (dr / 2) ** 2
    for j, r in enumerate(radii, start=1):
        base = 1 + (j - 1) * n_t
        if j < n_r:
            w_bulk[base:base + n_t] = 2 * np.pi * r * dr / n_t
        else:
            w_bulk[base:base + n_t] = np.pi * (R**2 - (R - dr / 2) ** 2) / n_t
    w_surf = np.full(n_t, 2 * np.pi * R / n_t)

    boundary_idx = np.arange(1 + (n_r - 1) * n_t, nn)
    interior_idx = np.arange(0, 1 + (n_r - 1) * n_t)
    normals = np.column_stack([np.cos(theta), np.sin(theta)])

    gamma_mask = spec.gamma.contains_angle(theta)
    gamma0_mask = spec.gamma0_effective.contains_angle(theta)

    mesh = Mesh(spec, coords, interior_idx, boundary_idx, w_bulk, w_surf,
                normals, gamma_mask, gamma0_mask)
    _disk_stencils(mesh, n_r, n_t, R, dr, dth)
    return mesh


def _node(j: int, k: int, n_t: int) -> int:
    """Polar index -> flat index; j = 0 is the center."""
    if j == 0:
        return 0
    return 1 + (j - 1) * n_t + (k % n_t)


def _disk_stencils(mesh: Mesh, n_r: int, n_t: int, R: float, dr: float, dth: float) -> None:
    nn = mesh.n_nodes
    radii = np.arange(1, n_r + 1) * dr

    # Dirichlet energy on the polar grid, finite-volume edge coefficients.
    rows, cols, vals = [], [], []

    def add_edge(a: int, b: int, c: float):
        rows.extend((a, b, a, b))
        cols.extend((a, b, b, a))
        vals.extend((c, c, -c, -c))

    for k in range(n_t):
        add_edge(_node(0, 0, n_t), _node(1, k, n_t), (dr / 2) * dth / dr)
    for j in range(1, n_r):
        r_half = (radii[j - 1] + radii[j]) / 2
        for k in range(n_t):
            add_edge(_node(j, k, n_t), _node(j + 1, k, n_t), r_half * dth / dr)
    for j in range(1, n_r + 1):
        r = radii[j - 1]
        width = dr if j < n_r else dr / 2   # boundary ring is a half cell
        for k in range(n_t):
            add_edge(_node(j, k, n_t), _node(j, k + 1, n_t), width / (r * dth))
    mesh.stiff_bulk = sp.csr_matrix((vals, (rows, cols)), shape=(nn, nn))

    # circle stiffness: sum_k (u_{k+1} - u_k)^2 / (R dth)
    srows, scols, svals = [], [], []
    for k in range(n_t):
        c = 1.0 / (R * dth)
        a, b = k, (k + 1) % n_t
        srows.extend((a, b, a, b))
        scols.extend((a, b, b, a))
        svals.extend((c, c, -c, -c))
    mesh.stiff_surf = sp.csr_matrix((svals, (srows, scols)), shape=(n_t, n_t))

    # pointwise bulk Laplacian: u_rr + u_r / r + u_tt / r^2, 5-point;
    # center row is the first-ring-average scheme; boundary ring one-sided.
    lap = sp.lil_matrix((nn, nn))
    lap[0, 0] = -4.0 / dr**2
    for k in range(n_t):
        lap[0, _node(1, k, n_t)] = 4.0 / (n_t * dr**2)
    for j in range(1, n_r):
        r = radii[j - 1]
        for k in range(n_t):
            me = _node(j, k, n_t)
            inner = _node(j - 1, k, n_t)
            outer = _node(j + 1, k, n_t)
            lap[me, inner] += 1.0 / dr**2 - 1.0 / (2 * r * dr)
            lap[me, me] += -2.0 / dr**2
            lap[me, outer] += 1.0 / dr**2 + 1.0 / (2 * r * dr)
            lap[me, _node(j, k + 1, n_t)] += 1.0 / (r * dth) ** 2
            lap[me, me] += -2.0 / (r * dth) ** 2
            lap[me, _node(j, k - 1, n_t)] += 1.0 / (r * dth) ** 2
    for k in range(n_t):
        me = _node(n_r, k, n_t)
        if n_r >= 3:   # one-sided second-order radial second derivative
            st = [(n_r, 2.0), (n_r - 1, -5.0), (n_r - 2, 4.0), (n_r - 3, -1.0)]
        else:          # first-order fallback on very coarse grids
            st = [(n_r, 1.0), (n_r - 1, -2.0), (n_r - 2, 1.0)]
        for jj, c in st:
            lap[me, _node(jj, k, n_t)] += c / dr**2
        for jj, c in ((n_r, 3.0), (n_r - 1, -4.0), (n_r - 2, 1.0)):
            lap[me, _node(jj, k, n_t)] += c / (2 * dr * R)
        lap[me, _node(n_r, k + 1, n_t)] += 1.0 / (R * dth) ** 2
        lap[me, me] += -2.0 / (R * dth) ** 2
        lap[me, _node(n_r, k - 1, n_t)] += 1.0 / (R * dth) ** 2
    mesh.lap_bulk = lap.tocsr()

    # Laplace-Beltrami on the circle: periodic second difference / R^2
    ls = sp.lil_matrix((n_t, n_t))
    for k in range(n_t):
        ls[k, k] = -2.0 / (R * dth) ** 2
        ls[k, (k + 1) % n_t] = 1.0 / (R * dth) ** 2
        ls[k, (k - 1) % n_t] = 1.0 / (R * dth) ** 2
    mesh.lap_surf = ls.tocsr()

    # outward normal derivative at r = R: one-sided second-order radial
    dnu = sp.lil_matrix((n_t, nn))
    for k in range(n_t):
        for jj, c in ((n_r, 3.0), (n_r - 1, -4.0), (n_r - 2, 1.0)):
            dnu[k, _node(jj, k, n_t)] += c / (2 * dr)
    mesh.dnu = dnu.tocsr()

    # gradient components (d/dr, (1/r) d/dtheta); center via first-ring trig sums
    gr = sp.lil_matrix((nn, nn))
    gt = sp.lil_matrix((nn, nn))
    theta = (np.arange(n_t) + 0.5) * dth
    for k in range(n_t):   # center row approximates d/dx; gt row holds d/dy
        gr[0, _node(1, k, n_t)] = 2.0 * np.cos(theta[k]) / (n_t * dr)
        gt[0, _node(1, k, n_t)] = 2.0 * np.sin(theta[k]) / (n_t * dr)
    for j in range(1, n_r):
        r = radii[j - 1]
        for k in range(n_t):
            me = _node(j, k, n_t)
            gr[me, _node(j + 1, k, n_t)] += 1.0 / (2 * dr)
            gr[me, _node(j - 1, k, n_t)] += -1.0 / (2 * dr)
            gt[me, _node(j, k + 1, n_t)] += 1.0 / (2 * dth * r)
            gt[me, _node(j, k - 1, n_t)] += -1.0 / (2 * dth * r)
    for k in range(n_t):
        me = _node(n_r, k, n_t)
        for jj, c in ((n_r, 3.0), (n_r - 1, -4.0), (n_r - 2, 1.0)):
            gr[me, _node(jj, k, n_t)] += c / (2 * dr)
        gt[me, _node(n_r, k + 1, n_t)] += 1.0 / (2 * dth * R)
        gt[me, _node(n_r, k - 1, n_t)] += -1.0 / (2 * dth * R)
    mesh.grad_components = (gr.tocsr(), gt.tocsr())

    gs = sp.lil_matrix((n_t, n_t))
    for k in range(n_t):
        gs[k, (k + 1) % n_t] = 1.0 / (2 * dth * R)
        gs[k, (k - 1) % n_t] = -1.0 / (2 * dth * R)
    mesh.grad_surf = gs.tocsr()


def export_mesh_csv(mesh: Mesh, eta: np.ndarray | None = None) -> tuple[list[str], list[tuple]]:
    """Rows for the node-table CSV: (index, x, y, is_boundary, in_gamma, in_gamma0, w, eta)."""
    header = ["index", "x", "y", "is_boundary", "in_gamma", "in_gamma0", "w", "eta"]
    on_bdry = np.zeros(mesh.n_nodes, dtype=bool)
    on_bdry[mesh.boundary_idx] = True
    in_g = np.zeros(mesh.n_nodes, dtype=bool)
    in_g0 = np.zeros(mesh.n_nodes, dtype=bool)
    in_g[mesh.boundary_idx] = mesh.gamma_mask
    in_g0[mesh.boundary_idx] = mesh.gamma0_mask
    rows = []
    for i in range(mesh.n_nodes):
        rows.append((
            i, mesh.coords[i, 0], mesh.coords[i, 1],
            int(on_bdry[i]), int(in_g[i]), int(in_g0[i]),
            mesh.w_bulk[i],
            (eta[i] if eta is not None else ""),
        ))
    return header, rows
