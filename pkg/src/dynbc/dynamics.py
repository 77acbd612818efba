"""Time integration of the coupled system and its discrete adjoint.

One-step theta scheme on a uniform grid,

    (M - dt*th*MA) Y_{k+1} = (M + dt*(1-th)*MA) Y_k + dt * rhs_k,

with ``th = 1`` (implicit Euler, the default) or ``th = 1/2``
(Crank-Nicolson).  Sources are supplied as node-time samples and reduced to
per-cell samples consistent with the scheme (right endpoint for implicit
Euler, endpoint average for Crank-Nicolson).

The adjoint is discretize-then-optimize: because mass and stiffness are
symmetric, the transpose of the forward step map equals the forward scheme
run in reversed time, so the backward solver reuses the same factorization
and the forward/backward duality pairing holds to machine precision.  The
pairing evaluates the adjoint at the complementary sample point (left
endpoint for implicit Euler, endpoint average for Crank-Nicolson).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .operators import CoupledField, WentzellOperator

Scheme = Literal["implicit-euler", "crank-nicolson"]
_THETA = {"implicit-euler": 1.0, "crank-nicolson": 0.5}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] with an attached one-step scheme."""

    T: float
    n_t: int
    scheme: Scheme = "implicit-euler"

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if self.n_t < 4:
            raise ValueError(f"need at least 4 time steps, got {self.n_t}")
        if self.scheme not in _THETA:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def theta_s(self) -> float:
        return _THETA[self.scheme]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def midpoints(self) -> np.ndarray:
        t = self.times
        return 0.5 * (t[:-1] + t[1:])

    def cell_sample_times(self) -> np.ndarray:
        """Times at which the scheme samples cell data."""
        t = self.times
        if self.scheme == "implicit-euler":
            return t[1:]
        return self.midpoints


@dataclass
class Trajectory:
    """Snapshots of the evolving state at every time node."""

    grid: TimeGrid
    mesh: object
    snapshots: np.ndarray  # (n_t + 1, n_nodes) shared-DOF vectors

    def field(self, k: int) -> CoupledField:
        return CoupledField.from_dof(self.mesh, self.snapshots[k])

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def boundary_snapshots(self) -> np.ndarray:
        return self.snapshots[:, self.mesh.boundary_idx]


class ThetaStepper:
    """Prefactored theta-scheme step map for one (operator, grid) pair."""

    def __init__(self, op: WentzellOperator, grid: TimeGrid):
        self.op = op
        self.grid = grid
        th, dt = grid.theta_s, grid.dt
        M = sp.diags(op.M)
        self._L = (M - dt * th * op.MA).tocsc()
        self._R = (M + dt * (1.0 - th) * op.MA).tocsr()
        try:
            self._solve = spla.factorized(self._L)
        except Exception as exc:
            raise SolverError(f"step-matrix factorization failed: {exc}") from exc

    def propagate(self, y0: np.ndarray, cell_rhs: np.ndarray | None = None) -> np.ndarray:
        """March n_t steps; ``cell_rhs[k]`` is the mass-weighted source of cell k."""
        n_t = self.grid.n_t
        dt = self.grid.dt
        out = np.empty((n_t + 1, y0.size))
        out[0] = y0
        y = y0
        for k in range(n_t):
            b = self._R @ y
            if cell_rhs is not None:
                b = b + dt * cell_rhs[k]
            y = self._solve(b)
            if not np.all(np.isfinite(y)):
                raise SolverError(f"time step {k} produced non-finite values")
            out[k + 1] = y
        return out


def _cells_from_nodes(grid: TimeGrid, samples: np.ndarray) -> np.ndarray:
    """Reduce (n_t+1, ...) node samples to (n_t, ...) scheme cell samples."""
    if grid.scheme == "implicit-euler":
        return samples[1:]
    return 0.5 * (samples[:-1] + samples[1:])


def _mass_weighted_cells(op: WentzellOperator, grid: TimeGrid,
                         f: np.ndarray | None, g: np.ndarray | None,
                         v: np.ndarray | None, v_is_cells: bool = False) -> np.ndarray | None:
    """Assemble dt-cell source vectors M_omega f + scatter(M_gamma (g + v))."""
    mesh = op.mesh
    if f is None and g is None and v is None:
        return None
    n_t = grid.n_t
    rhs = np.zeros((n_t, mesh.n_nodes))
    if f is not None:
        f = np.asarray(f, dtype=float)
        if f.shape != (n_t + 1, mesh.n_nodes):
            raise ValueError("bulk source must have shape (n_t+1, n_nodes)")
        rhs += _cells_from_nodes(grid, f) * op.M_omega
    bsum = np.zeros((n_t, mesh.n_bdry))
    if g is not None:
        g = np.asarray(g, dtype=float)
        if g.shape != (n_t + 1, mesh.n_bdry):
            raise ValueError("boundary source must have shape (n_t+1, n_bdry)")
        bsum += _cells_from_nodes(grid, g)
    if v is not None:
        v = np.asarray(v, dtype=float)
        expect = (n_t, mesh.n_bdry) if v_is_cells else (n_t + 1, mesh.n_bdry)
        if v.shape != expect:
            raise ValueError(f"control must have shape {expect}")
        vc = v if v_is_cells else _cells_from_nodes(grid, v)
        bsum += vc * mesh.gamma0_mask  # control acts on the observation arc only
    rhs[:, mesh.boundary_idx] += bsum * op.M_gamma
    return rhs


def solve_forward(op: WentzellOperator, grid: TimeGrid, Y0: CoupledField,
                  f: np.ndarray | None = None, g: np.ndarray | None = None,
                  v: np.ndarray | None = None, *, v_is_cells: bool = False,
                  stepper: ThetaStepper | None = None) -> Trajectory:
    """March the controlled system from ``Y0``.

    ``f`` is a bulk source sampled at time nodes over all mesh nodes, ``g``
    a boundary source, ``v`` a boundary control which is restricted to the
    gamma0 mask (values elsewhere are ignored).  Pass ``v_is_cells=True``
    when the control is already per-cell (as produced by the duality map).
    """
    Y0.check(op.mesh)
    stepper = stepper or ThetaStepper(op, grid)
    rhs = _mass_weighted_cells(op, grid, f, g, v, v_is_cells=v_is_cells)
    snaps = stepper.propagate(Y0.to_dof(op.mesh), rhs)
    return Trajectory(grid=grid, mesh=op.mesh, snapshots=snaps)


def solve_adjoint(op: WentzellOperator, grid: TimeGrid, PhiT: CoupledField,
                  f: np.ndarray | None = None, g: np.ndarray | None = None,
                  *, stepper: ThetaStepper | None = None) -> Trajectory:
    """March the backward system from terminal data ``PhiT``.

    Solves ``-Phi' = A Phi + F`` with ``F = (f, g)``: the time axis is
    reversed, the forward scheme applied, and the snapshots flipped back.
    By symmetry of the generator this equals the exact transpose of the
    forward step map.
    """
    PhiT.check(op.mesh)
    stepper = stepper or ThetaStepper(op, grid)
    f_rev = None if f is None else np.asarray(f, dtype=float)[::-1]
    g_rev = None if g is None else np.asarray(g, dtype=float)[::-1]
    rhs = _mass_weighted_cells(op, grid, f_rev, g_rev, None)
    snaps = stepper.propagate(PhiT.to_dof(op.mesh), rhs)
    return Trajectory(grid=grid, mesh=op.mesh, snapshots=snaps[::-1].copy())


def adjoint_pairing_cells(traj: Trajectory) -> np.ndarray:
    """Adjoint samples dual to the forward source cells.

    For cell k these are the snapshots at the left endpoint (implicit
    Euler) or the endpoint average (Crank-Nicolson); with them the discrete
    duality identity holds to machine precision.
    """
    s = traj.snapshots
    if traj.grid.scheme == "implicit-euler":
        return s[:-1]
    return 0.5 * (s[:-1] + s[1:])


def duality_gap(op: WentzellOperator, grid: TimeGrid, Y0: CoupledField,
                PhiT: CoupledField, f: np.ndarray | None = None,
                g: np.ndarray | None = None, v: np.ndarray | None = None) -> tuple[float, float]:
    """Both sides of the discrete duality identity.

    Returns ``(<Y(T), Phi_T>,  <Y0, Phi(0)> + sum_k dt <(f, g+v)_k, Phi_k>)``
    where the source cells and the adjoint pairing cells match the scheme.
    """
    mesh = op.mesh
    stepper = ThetaStepper(op, grid)
    fwd = solve_forward(op, grid, Y0, f=f, g=g, v=v, stepper=stepper)
    adj = solve_adjoint(op, grid, PhiT, stepper=stepper)

    lhs = op.m_inner(fwd.final, PhiT.to_dof(mesh))
    rhs = op.m_inner(Y0.to_dof(mesh), adj.snapshots[0])
    pair = adjoint_pairing_cells(adj)
    dt = grid.dt
    if f is not None:
        fc = _cells_from_nodes(grid, np.asarray(f, dtype=float))
        rhs += dt * float(np.sum((fc * op.M_omega) * pair))
    bsum = np.zeros((grid.n_t, mesh.n_bdry))
    if g is not None:
        bsum += _cells_from_nodes(grid, np.asarray(g, dtype=float))
    if v is not None:
        bsum += _cells_from_nodes(grid, np.asarray(v, dtype=float)) * mesh.gamma0_mask
    if g is not None or v is not None:
        rhs += dt * float(np.sum((bsum * op.M_gamma) * pair[:, mesh.boundary_idx]))
    return lhs, rhs


def trajectory_mass(op: WentzellOperator, traj: Trajectory) -> np.ndarray:
    ones = np.ones(op.n_dof)
    return traj.snapshots @ (op.M * ones)


def trajectory_norms(op: WentzellOperator, traj: Trajectory) -> np.ndarray:
    return np.sqrt(np.maximum(np.einsum("kn,n,kn->k", traj.snapshots, op.M,
                                        traj.snapshots), 0.0))


# ---------------------------------------------------------------------------
# regularity diagnostics for the sourced backward problem
# ---------------------------------------------------------------------------

@dataclass
class RegularityReport:
    """Smoothing-ratio diagnostics of the backward solve with source."""

    r1: float
    r2: float
    r3: float | None
    source_norm: float
    grad_energy_direct: float      # dt-sum of d*bulk + delta*surf stiffness energies
    grad_energy_identity: float    # same quantity via the discrete energy identity
    extras: dict = field(default_factory=dict)


def _pair_h1_sq(op: WentzellOperator, dof: np.ndarray) -> float:
    bulk, surf = op.dirichlet_energy(dof)
    tr = dof[op.mesh.boundary_idx]
    return bulk + surf + float(np.dot(op.M_gamma, tr**2))


def _pair_h2_sq(op: WentzellOperator, bulk_vals: np.ndarray, bdry_vals: np.ndarray) -> float:
    lb = np.asarray(op.lap_bulk @ bulk_vals).ravel()
    ls = np.asarray(op.lap_surf @ bdry_vals).ravel()
    return (float(np.dot(op.M_omega, lb**2)) + float(np.dot(op.M_gamma, ls**2))
            + float(np.dot(op.M_gamma, bdry_vals**2)))


def _pair_h4_sq(op: WentzellOperator, bulk_vals: np.ndarray, bdry_vals: np.ndarray) -> float:
    lb2 = np.asarray(op.lap_bulk @ (op.lap_bulk @ bulk_vals)).ravel()
    ls2 = np.asarray(op.lap_surf @ (op.lap_surf @ bdry_vals)).ravel()
    return (float(np.dot(op.M_omega, lb2**2)) + float(np.dot(op.M_gamma, ls2**2))
            + float(np.dot(op.M_gamma, bdry_vals**2)))


def regularity_ratios(op: WentzellOperator, grid: TimeGrid,
                      f: np.ndarray, g: np.ndarray,
                      with_r3: bool = True) -> RegularityReport:
    """Ratios of solution norms to source norms for the backward problem.

    ``r1`` measures first-order smoothing, ``r2`` second order plus the time
    derivative, ``r3`` the fourth-order proxy plus the second time
    derivative; each is normalized by ``(1 + T)`` times the corresponding
    source strength.  ``r3`` requires a source vanishing at the final time
    and is rejected otherwise.
    """
    mesh = op.mesh
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n_t, dt, T = grid.n_t, grid.dt, grid.T
    if f.shape != (n_t + 1, mesh.n_nodes) or g.shape != (n_t + 1, mesh.n_bdry):
        raise ValueError("source samples must cover every time node")
    if with_r3 and (np.any(f[-1] != 0.0) or np.any(g[-1] != 0.0)):
        raise ValueError("third ratio requires a source vanishing at the final time")

    traj = solve_adjoint(op, grid, CoupledField.zero(mesh), f=f, g=g)
    snaps = traj.snapshots
    mids = 0.5 * (snaps[:-1] + snaps[1:])
    mid_bdry = mids[:, mesh.boundary_idx]

    # source strength |F|_{L2(0,T; L2)} with midpoint cells
    fm = 0.5 * (f[:-1] + f[1:])
    gm = 0.5 * (g[:-1] + g[1:])
    src_sq = dt * (np.einsum("kn,n,kn->", fm, op.M_omega, fm)
                   + np.einsum("kb,b,kb->", gm, op.M_gamma, gm))
    src = float(np.sqrt(max(src_sq, 0.0)))

    h1_sq = dt * sum(_pair_h1_sq(op, mids[k]) for k in range(n_t))
    h2_sq = dt * sum(_pair_h2_sq(op, mids[k], mid_bdry[k]) for k in range(n_t))
    ddt = (snaps[1:] - snaps[:-1]) / dt
    dt_sq = dt * np.einsum("kn,n,kn->", ddt, op.M, ddt)

    denom = (1.0 + T) * src
    if denom == 0.0:
        r1 = r2 = 0.0
    else:
        r1 = float(np.sqrt(h1_sq) / denom)
        r2 = float((np.sqrt(h2_sq) + np.sqrt(dt_sq)) / denom)

    # cross-check: accumulated stiffness energy vs the discrete energy identity
    # (exact for the implicit-Euler recursion, where cell k samples F at t_k)
    left = snaps[:-1]
    energy_direct = 0.0
    for k in range(n_t):
        bulk, surf = op.dirichlet_energy(left[k])
        energy_direct += dt * (op.d * bulk + op.delta * surf)
    fcell = f[:-1]
    gcell = g[:-1]
    src_pair = dt * (np.einsum("kn,n,kn->", fcell, op.M_omega, left)
                     + np.einsum("kb,b,kb->", gcell, op.M_gamma, left[:, mesh.boundary_idx]))
    jumps = snaps[1:] - snaps[:-1]
    jump_sq = float(np.einsum("kn,n,kn->", jumps, op.M, jumps))
    phi0_sq = float(np.dot(snaps[0] * op.M, snaps[0]))
    energy_identity = float(src_pair - 0.5 * phi0_sq - 0.5 * jump_sq)

    r3 = None
    if with_r3:
        h4_sq = dt * sum(_pair_h4_sq(op, mids[k], mid_bdry[k]) for k in range(n_t))
        d2 = (snaps[2:] - 2.0 * snaps[1:-1] + snaps[:-2]) / dt**2
        d2_sq = dt * np.einsum("kn,n,kn->", d2, op.M, d2)
        fh2_sq = dt * sum(_pair_h2_sq(op, fm[k], gm[k]) for k in range(n_t))
        df = (f[1:] - f[:-1]) / dt
        dg = (g[1:] - g[:-1]) / dt
        dF_sq = dt * (np.einsum("kn,n,kn->", df, op.M_omega, df)
                      + np.einsum("kb,b,kb->", dg, op.M_gamma, dg))
        d3 = (1.0 + T) * (np.sqrt(fh2_sq) + np.sqrt(dF_sq))
        r3 = 0.0 if d3 == 0.0 else float((np.sqrt(h4_sq) + np.sqrt(d2_sq)) / d3)

    return RegularityReport(
        r1=r1, r2=r2, r3=r3, source_norm=src,
        grad_energy_direct=float(energy_direct),
        grad_energy_identity=energy_identity,
        extras={"h1_sq": float(h1_sq), "h2_sq": float(h2_sq), "dt_sq": float(dt_sq)},
    )


def export_trajectory_rows(op: WentzellOperator, traj: Trajectory) -> tuple[list[str], list[tuple]]:
    """(k, t, norm, mass) rows for the trajectory CSV."""
    norms = trajectory_norms(op, traj)
    masses = trajectory_mass(op, traj)
    t = traj.grid.times
    rows = [(k, t[k], norms[k], masses[k]) for k in range(t.size)]
    return ["k", "t", "norm_l2", "mass"], rows
