"""Coupled bulk-surface generator, mass matrices and the stationary solve.

The state pairs a bulk field with a boundary field.  Boundary nodes are
shared DOFs: one unknown serves both the bulk trace and the boundary field,
so the trace condition is structural.  The generator couples bulk diffusion
(coefficient ``d``) with boundary diffusion (``delta``, zero in 1D) through
the normal flux at the boundary.

Assembly works with the weighted matrix ``MA`` built from the two Dirichlet
stiffness forms, ``MA = -(d K_bulk + delta K_surf)``, which is symmetric by
construction; the generator is ``A = M^{-1} MA`` with the diagonal total
mass ``M`` (bulk weight plus boundary weight at shared nodes).  This makes
the generator exactly self-adjoint and dissipative in the discrete product,
annihilates constants, and reproduces the 5-point polar Laplacian (with the
first-ring-average origin scheme) at interior nodes.  A literal one-sided
difference in the boundary rows cannot be mass-symmetric, so the one-sided
second-order normal-derivative map is kept as a separate diagnostic block
``dnu`` used by the weighted-inequality evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .geometry import Mesh

#: assembly gate on the pre-symmetrization defect of MA
SYMMETRY_DEFECT_LIMIT = 1e-8


@dataclass
class CoupledField:
    """A (bulk values, boundary values) pair.

    Trajectory snapshots keep ``boundary == bulk[boundary_idx]`` (shared
    DOFs); initial data may violate that and are projected, boundary values
    winning at boundary nodes.
    """

    bulk: np.ndarray
    boundary: np.ndarray

    @classmethod
    def from_dof(cls, mesh: Mesh, dof: np.ndarray) -> "CoupledField":
        dof = np.asarray(dof, dtype=float)
        return cls(bulk=dof.copy(), boundary=dof[mesh.boundary_idx].copy())

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "CoupledField":
        return cls(bulk=np.full(mesh.n_nodes, float(value)),
                   boundary=np.full(mesh.n_bdry, float(value)))

    @classmethod
    def zero(cls, mesh: Mesh) -> "CoupledField":
        return cls.constant(mesh, 0.0)

    def to_dof(self, mesh: Mesh) -> np.ndarray:
        """Shared-DOF projection: boundary DOFs take the boundary values."""
        dof = np.asarray(self.bulk, dtype=float).copy()
        dof[mesh.boundary_idx] = self.boundary
        return dof

    def check(self, mesh: Mesh) -> None:
        if self.bulk.shape != (mesh.n_nodes,) or self.boundary.shape != (mesh.n_bdry,):
            raise ValueError("field dimensions do not match the mesh")


@dataclass
class WentzellOperator:
    """Assembled generator with mass, stiffness and diagnostic blocks."""

    mesh: Mesh
    d: float
    delta: float
    M: np.ndarray                 # (n_nodes,) total diagonal mass (shared DOFs)
    M_omega: np.ndarray           # bulk quadrature weights
    M_gamma: np.ndarray           # boundary quadrature weights
    MA: sp.csr_matrix             # symmetric, negative semidefinite
    A: sp.csr_matrix              # generator, M^{-1} MA
    lap_bulk: sp.csr_matrix       # pointwise bulk Laplacian (diagnostics)
    lap_surf: sp.csr_matrix       # pointwise surface Laplacian (diagnostics)
    dnu: sp.csr_matrix            # one-sided normal-derivative map (diagnostics)
    sym_defect: float             # pre-symmetrization relative defect of MA
    _stiff_bulk: sp.csr_matrix = field(repr=False, default=None)
    _stiff_surf_full: sp.csr_matrix = field(repr=False, default=None)

    @property
    def n_dof(self) -> int:
        return self.mesh.n_nodes

    def apply_A(self, dof: np.ndarray) -> np.ndarray:
        return np.asarray(self.A @ dof).ravel()

    def dirichlet_energy(self, dof: np.ndarray) -> tuple[float, float]:
        """Stiffness-quadrature values of (|grad u|^2 integral, boundary one).

        These are exactly the two energies appearing in
        ``<A u, u> = -d * bulk - delta * surf``.
        """
        bulk = float(dof @ (self._stiff_bulk @ dof))
        surf = float(dof @ (self._stiff_surf_full @ dof))
        return bulk, surf

    def m_inner(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(x * self.M, y))

    def m_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(self.m_inner(x, x), 0.0)))


def assemble_operator(mesh: Mesh, d: float, delta: float = 0.0) -> WentzellOperator:
    """Assemble the generator for diffusivities ``d`` (bulk) and ``delta``.

    ``delta`` is ignored on the interval (no diffusion on a two-point
    boundary).  Fails if the assembled weighted matrix is asymmetric beyond
    :data:`SYMMETRY_DEFECT_LIMIT`, which would indicate a stencil defect.
    """
    if d <= 0:
        raise ValueError(f"bulk diffusivity must be positive, got {d}")
    if delta < 0:
        raise ValueError(f"surface diffusivity must be nonnegative, got {delta}")
    if mesh.spec.kind == "interval":
        delta = 0.0

    nn = mesh.n_nodes
    bidx = mesh.boundary_idx
    scatter = sp.csr_matrix(
        (np.ones(bidx.size), (bidx, np.arange(bidx.size))), shape=(nn, bidx.size)
    )
    stiff_surf_full = (scatter @ mesh.stiff_surf @ scatter.T).tocsr()

    MA = (-(d * mesh.stiff_bulk + delta * stiff_surf_full)).tocsr()
    defect_num = spla.norm(MA - MA.T, np.inf)
    defect = float(defect_num / max(spla.norm(MA, np.inf), 1e-300))
    if defect > SYMMETRY_DEFECT_LIMIT:
        raise SolverError(f"operator assembly defect {defect:.3e} exceeds limit")
    MA = ((MA + MA.T) * 0.5).tocsr()

    M = mesh.w_bulk.copy()
    M[bidx] += mesh.w_surf
    A = (sp.diags(1.0 / M) @ MA).tocsr()

    return WentzellOperator(
        mesh=mesh, d=d, delta=delta,
        M=M, M_omega=mesh.w_bulk.copy(), M_gamma=mesh.w_surf.copy(),
        MA=MA, A=A,
        lap_bulk=mesh.lap_bulk, lap_surf=mesh.lap_surf, dnu=mesh.dnu,
        sym_defect=defect,
        _stiff_bulk=mesh.stiff_bulk, _stiff_surf_full=stiff_surf_full,
    )


def inner_l2(mesh: Mesh, Y: CoupledField, Z: CoupledField) -> float:
    """Discrete product: bulk quadrature plus boundary quadrature."""
    Y.check(mesh)
    Z.check(mesh)
    return float(np.dot(mesh.w_bulk * Y.bulk, Z.bulk)
                 + np.dot(mesh.w_surf * Y.boundary, Z.boundary))


def norm_l2(mesh: Mesh, Y: CoupledField) -> float:
    return float(np.sqrt(max(inner_l2(mesh, Y, Y), 0.0)))


def elliptic_solve(op: WentzellOperator, f: np.ndarray, g: np.ndarray) -> CoupledField:
    """Solve the stationary coupled problem.

    Bulk equation ``d lap u = f``; boundary equation
    ``delta lap_surf u - d dnu u - u = g``; shared trace.  In weak form the
    system is ``(MA - E) u = M_omega f + scatter(M_gamma g)`` with ``E`` the
    boundary mass, which is symmetric negative definite, so the direct
    sparse solve cannot break down on a connected mesh.
    """
    mesh = op.mesh
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (mesh.n_nodes,) or g.shape != (mesh.n_bdry,):
        raise ValueError("right-hand sides do not match the mesh")

    bidx = mesh.boundary_idx
    E = sp.csr_matrix((mesh.w_surf, (bidx, bidx)), shape=(mesh.n_nodes,) * 2)
    lhs = (op.MA - E).tocsc()
    rhs = op.M_omega * f
    rhs[bidx] += op.M_gamma * g
    try:
        u = spla.spsolve(lhs, rhs)
    except Exception as exc:
        raise SolverError(f"elliptic solve failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError("elliptic solve returned non-finite values")
    return CoupledField.from_dof(mesh, u)


def elliptic_residuals(op: WentzellOperator, u: CoupledField,
                       f: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Relative residuals of the two discrete equations at ``u``."""
    mesh = op.mesh
    bidx = mesh.boundary_idx
    dof = u.to_dof(mesh)
    E = sp.csr_matrix((mesh.w_surf, (bidx, bidx)), shape=(mesh.n_nodes,) * 2)
    res = (op.MA - E) @ dof
    rhs = op.M_omega * f
    rhs[bidx] += op.M_gamma * g
    resid = res - rhs
    interior = mesh.interior_idx
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    r_bulk = float(np.linalg.norm(resid[interior])) / scale
    r_bdry = float(np.linalg.norm(resid[bidx])) / scale
    return r_bulk, r_bdry


def h2_norm(op: WentzellOperator, u: CoupledField) -> float:
    """Second-order norm proxy: quadrature of (lap u)^2, (lap_surf u)^2, u^2."""
    mesh = op.mesh
    dof = u.to_dof(mesh)
    lap = np.asarray(op.lap_bulk @ dof).ravel()
    laps = np.asarray(op.lap_surf @ u.boundary).ravel()
    val = (np.dot(mesh.w_bulk, lap**2) + np.dot(mesh.w_surf, laps**2)
           + np.dot(mesh.w_surf, np.asarray(u.boundary)**2))
    return float(np.sqrt(max(val, 0.0)))


def export_sparse_coo(mat: sp.spmatrix) -> tuple[list[str], list[tuple]]:
    """(row, col, value) rows for coordinate-format CSV export."""
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows = [(int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order]
    return ["row", "col", "value"], rows
