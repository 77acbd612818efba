"""Boundary null-control synthesis and observability estimation.

The control problem is posed through duality.  Marching the homogeneous
backward system from terminal data and reading its trace on the observation
arc defines the observation map; injecting a boundary control and marching
forward from zero defines the control-to-state map.  Because the backward
solver is the exact transpose of the forward solver, composing the two
yields a control Gramian that is symmetric positive semidefinite in the
discrete product to machine precision, and positive definite after the
``epsilon`` shift of the penalized formulation.

``solve_hum`` runs conjugate gradients in the discrete product on

    (Gramian + epsilon I) q = -(free final state),

reads the control off the backward trajectory of the minimizer, recomputes
the controlled trajectory, and reports the final norm together with the
penalized-duality bound ``final^2 <= 2 epsilon J`` (``J`` is the dual value
in maximization form, a nonnegative number).

``observability_constant`` estimates the largest ratio of initial energy to
observed trace energy by power iteration on the operator pencil
(initial-value Gramian, observation Gramian), matrix-free, with inner CG
solves of the observation Gramian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .dynamics import (ThetaStepper, TimeGrid, Trajectory, adjoint_pairing_cells,
                       solve_adjoint, solve_forward)
from .errors import NormDivergenceError
from .operators import CoupledField, WentzellOperator, norm_l2
from .rng import SplitMix64

#: weighted integrands beyond this magnitude are declared divergent
OVERFLOW_THRESHOLD = 1e300
_LOG_OVERFLOW = math.log(OVERFLOW_THRESHOLD)


@dataclass
class HUMProblem:
    """Data of one penalized control solve."""

    op: WentzellOperator
    grid: TimeGrid
    Y0: CoupledField
    f: np.ndarray | None = None
    g: np.ndarray | None = None
    epsilon: float = 1e-8
    cg_tol: float = 1e-10
    cg_max_iter: int = 500

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"penalty must be positive, got {self.epsilon}")
        if not 0 < self.cg_tol < 1:
            raise ValueError(f"cg tolerance must lie in (0, 1), got {self.cg_tol}")


class GramianOp:
    """Matrix-free penalized control Gramian on terminal data."""

    def __init__(self, op: WentzellOperator, grid: TimeGrid, epsilon: float = 0.0,
                 stepper: ThetaStepper | None = None):
        self.op = op
        self.grid = grid
        self.epsilon = float(epsilon)
        self.stepper = stepper or ThetaStepper(op, grid)

    def control_from_terminal(self, phiT_dof: np.ndarray) -> tuple[np.ndarray, Trajectory]:
        """Duality map: backward solve, trace restricted to the arc (cells)."""
        mesh = self.op.mesh
        adj = solve_adjoint(self.op, self.grid, CoupledField.from_dof(mesh, phiT_dof),
                            stepper=self.stepper)
        pair = adjoint_pairing_cells(adj)[:, mesh.boundary_idx]
        return pair * mesh.gamma0_mask, adj

    def inject(self, v_cells: np.ndarray) -> np.ndarray:
        """Control-to-final-state map: forward from zero with the control."""
        fwd = solve_forward(self.op, self.grid, CoupledField.zero(self.op.mesh),
                            v=v_cells, v_is_cells=True, stepper=self.stepper)
        return fwd.final

    def observation_energy(self, v_cells: np.ndarray) -> float:
        """Squared trace norm sum_k dt sum w_surf v^2 on the arc."""
        mesh = self.op.mesh
        w = mesh.w_surf * mesh.gamma0_mask
        return float(self.grid.dt * np.einsum("kb,b,kb->", v_cells, w, v_cells))

    def apply(self, phiT_dof: np.ndarray) -> np.ndarray:
        """Gramian action plus the epsilon shift."""
        v, _ = self.control_from_terminal(phiT_dof)
        out = self.inject(v)
        if self.epsilon:
            out = out + self.epsilon * phiT_dof
        return out

    __call__ = apply


def apply_gramian(G: GramianOp, phiT: CoupledField) -> CoupledField:
    """Gramian action on a coupled field (shared-DOF projection applied)."""
    dof = phiT.to_dof(G.op.mesh)
    return CoupledField.from_dof(G.op.mesh, G.apply(dof))


def _cg_m(apply_op: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
          op: WentzellOperator, tol: float, max_iter: int,
          track_energy: bool = False, x0: np.ndarray | None = None,
          stall_window: int = 40) -> dict:
    """Conjugate gradients in the discrete (mass-weighted) inner product.

    Supports a warm start and stops early when the residual has not improved
    over ``stall_window`` iterations (ill-conditioned unregularized Gramians
    hit a roundoff floor long before ``max_iter``).
    """
    bnorm = op.m_norm(b)
    if bnorm == 0.0:
        return {"x": np.zeros_like(b), "iterations": 0, "residual": 0.0,
                "converged": True, "energy_path": []}
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.copy()
        r = b - apply_op(x)
    p = r.copy()
    rho = op.m_inner(r, r)
    energy_path = []
    converged = False
    best = np.inf   # first computed iterate always replaces the start
    best_x = x.copy()
    since_best = 0
    it = 0
    for it in range(1, max_iter + 1):
        Ap = apply_op(p)
        pAp = op.m_inner(p, Ap)
        if pAp <= 0.0:  # loss of positivity at roundoff level
            break
        alpha = rho / pAp
        x += alpha * p
        r -= alpha * Ap
        if track_energy:
            # value of the quadratic functional 1/2 <Gx,x> - <b,x> = -1/2 <b+r, x>
            energy_path.append(-0.5 * op.m_inner(b + r, x))
        rho_new = op.m_inner(r, r)
        res = math.sqrt(max(rho_new, 0.0))
        if res < best:
            best, best_x, since_best = res, x.copy(), 0
        else:
            since_best += 1
        if res <= tol * bnorm:
            converged = True
            rho = rho_new
            break
        if since_best >= stall_window:
            break
        p = r + (rho_new / rho) * p
        rho = rho_new
    if not converged:
        x = best_x
        final_res = best
    else:
        final_res = math.sqrt(max(rho, 0.0))
    return {"x": x, "iterations": it, "residual": final_res / bnorm,
            "converged": converged, "energy_path": energy_path}


@dataclass
class HUMResult:
    """Synthesized control and its certificates."""

    v: np.ndarray                  # (n_t, n_bdry) per-cell control, zero off the arc
    v_times: np.ndarray            # sample time of each cell
    phiT_star: CoupledField        # minimizer terminal datum
    trajectory: Trajectory         # controlled forward solution
    final_norm: float
    control_norm: float
    iterations: int
    cg_residual: float
    converged: bool
    epsilon: float
    dual_value: float              # J at the minimizer, maximization form (>= 0)
    uncontrolled_final_norm: float
    energy_path: list = field(default_factory=list, repr=False)

    @property
    def penalized_bound(self) -> float:
        """sqrt(2 epsilon J), the guaranteed bound on the final norm."""
        return math.sqrt(max(2.0 * self.epsilon * self.dual_value, 0.0))


def solve_hum(p: HUMProblem, *, track_energy: bool = False) -> HUMResult:
    """Penalized control synthesis by CG on the shifted Gramian."""
    op, grid = p.op, p.grid
    mesh = op.mesh
    stepper = ThetaStepper(op, grid)

    free = solve_forward(op, grid, p.Y0, f=p.f, g=p.g, stepper=stepper)
    b = -free.final
    G = GramianOp(op, grid, epsilon=p.epsilon, stepper=stepper)

    sol = _cg_m(G.apply, b, op, p.cg_tol, p.cg_max_iter, track_energy=track_energy)
    q = sol["x"]

    v, _ = G.control_from_terminal(q)
    controlled = solve_forward(op, grid, p.Y0, f=p.f, g=p.g, v=v, v_is_cells=True,
                               stepper=stepper)
    final_norm = op.m_norm(controlled.final)
    control_norm = math.sqrt(max(G.observation_energy(v), 0.0))
    # dual value in maximization form: -(1/2 <G q, q> + <free_final, q>) = -1/2 <b, q> ... with b = -free
    dual_value = 0.5 * op.m_inner(b, q)

    return HUMResult(
        v=v, v_times=grid.cell_sample_times(),
        phiT_star=CoupledField.from_dof(mesh, q),
        trajectory=controlled,
        final_norm=final_norm,
        control_norm=control_norm,
        iterations=sol["iterations"],
        cg_residual=sol["residual"],
        converged=sol["converged"],
        epsilon=p.epsilon,
        dual_value=float(dual_value),
        uncontrolled_final_norm=op.m_norm(free.final),
        energy_path=sol["energy_path"],
    )


@dataclass
class ObservabilityReport:
    """Estimated worst-case ratio of initial energy to observed energy."""

    T: float
    K_est: float
    iterations: int
    converged: bool
    flag: str = ""
    eigenvector: np.ndarray | None = None
    quotient_path: list = field(default_factory=list, repr=False)


def observability_constant(op: WentzellOperator, grid: TimeGrid,
                           power_tol: float = 1e-3, power_max_iter: int = 40,
                           cg_tol: float = 1e-8, cg_max_iter: int = 400,
                           rng: SplitMix64 | None = None) -> ObservabilityReport:
    """Power iteration for the largest initial-energy / observation ratio.

    One iteration: backward solve from the current iterate (giving both the
    Rayleigh quotient and the initial snapshot), forward solve of that
    snapshot (the initial-value Gramian action), then an inner CG solve of
    the unregularized observation Gramian.  Every reported quotient is a
    true achieved ratio, so the estimate is a lower bound of the supremum
    by construction.

    Convergence means the last three quotients agree to ``power_tol``
    relative; the returned value is their median (robust against a single
    inexact inner solve).  When the observation Gramian is numerically
    singular for this mesh and horizon (observation arc too small), the
    inner solves stagnate and the iteration can settle far below the
    supremum; this is reported through ``flag`` rather than patched by
    regularization, which would bias the estimate.
    """
    mesh = op.mesh
    if not mesh.gamma0_mask.any():
        raise ValueError("observation arc contains no boundary node")
    rng = rng or SplitMix64(0)
    stepper = ThetaStepper(op, grid)
    G0 = GramianOp(op, grid, epsilon=0.0, stepper=stepper)

    # start from the constant field (always observed) plus a seeded perturbation
    x = np.ones(mesh.n_nodes) + 0.01 * rng.normals(mesh.n_nodes)
    x /= op.m_norm(x)
    quotients: list[float] = []
    flag = ""
    converged = False
    it = 0
    for it in range(1, power_max_iter + 1):
        v, adj = G0.control_from_terminal(x)
        obs_sq = G0.observation_energy(v)
        if obs_sq <= 0.0:
            return ObservabilityReport(T=grid.T, K_est=np.inf, iterations=it,
                                       converged=False, flag="observation_singular",
                                       eigenvector=x, quotient_path=quotients)
        phi0 = adj.snapshots[0]
        init_sq = op.m_inner(phi0, phi0)
        quotients.append(init_sq / obs_sq)

        y = solve_forward(op, grid, CoupledField.from_dof(mesh, phi0),
                          stepper=stepper).final
        inner = _cg_m(G0.apply, y, op, cg_tol, cg_max_iter, stall_window=60)
        if inner["residual"] > 1e-2:
            flag = "inner_cg_stagnation"
        z = inner["x"]
        zn = op.m_norm(z)
        if zn == 0.0:
            flag = "observation_singular"
            break
        x = z / zn
        if len(quotients) >= 3:
            tail = quotients[-3:]
            spread = (max(tail) - min(tail)) / max(abs(tail[-1]), 1e-300)
            if spread <= power_tol:
                converged = True
                break

    if not converged and not flag:
        flag = "power_iteration_max_iter"
    tail = quotients[-3:] if len(quotients) >= 3 else quotients
    k_est = float(np.median(tail))
    return ObservabilityReport(T=grid.T, K_est=k_est, iterations=it,
                               converged=converged, flag=flag, eigenvector=x,
                               quotient_path=quotients)


def rayleigh_ratio(op: WentzellOperator, grid: TimeGrid, phiT: CoupledField,
                   stepper: ThetaStepper | None = None) -> float:
    """Initial energy over observed trace energy for one terminal datum."""
    G0 = GramianOp(op, grid, epsilon=0.0, stepper=stepper)
    v, adj = G0.control_from_terminal(phiT.to_dof(op.mesh))
    obs = G0.observation_energy(v)
    init = op.m_inner(adj.snapshots[0], adj.snapshots[0])
    return init / obs if obs > 0 else np.inf


# ---------------------------------------------------------------------------
# weighted norms of the cost estimate
# ---------------------------------------------------------------------------

WeightedKind = Literal["Z_Omega", "Z_Gamma", "X"]


def weighted_norm(field_vals: np.ndarray, s: float, grid: TimeGrid,
                  op: WentzellOperator, kind: WeightedKind) -> float:
    """Weighted space-time norm with midpoint time quadrature.

    ``Z_Omega``/``Z_Gamma`` weight the squared field by
    ``exp(2 s theta) theta^{-3}`` with bulk/boundary quadrature; ``X``
    weights the squared coupled norm by ``exp(2 s t theta)``.  Cells whose
    field vanishes contribute nothing; a nonzero cell whose weight exceeds
    the overflow threshold makes the norm divergent on this grid, which is
    reported by raising :class:`NormDivergenceError`.
    """
    field_vals = np.asarray(field_vals, dtype=float)
    n_t, T = grid.n_t, grid.T
    mesh = op.mesh
    if kind == "Z_Omega":
        qw = op.M_omega
        expect = (n_t + 1, mesh.n_nodes)
    elif kind == "Z_Gamma":
        qw = op.M_gamma
        expect = (n_t + 1, mesh.n_bdry)
    elif kind == "X":
        expect = (n_t + 1, mesh.n_nodes)
    else:
        raise ValueError(f"unknown weighted-norm kind {kind!r}")
    if field_vals.shape != expect:
        raise ValueError(f"{kind} norm expects samples of shape {expect}")

    mids = 0.5 * (field_vals[:-1] + field_vals[1:])
    tm = grid.midpoints
    theta = 1.0 / (tm * (T - tm))
    if kind == "X":
        log_weight = 2.0 * s * tm * theta
    else:
        log_weight = 2.0 * s * theta - 3.0 * np.log(theta)

    total = 0.0
    for k in range(n_t):
        if kind == "X":
            cell_sq = float(np.dot(op.M * mids[k], mids[k]))
        else:
            cell_sq = float(np.dot(qw * mids[k], mids[k]))
        if cell_sq == 0.0:
            continue
        log_cell = log_weight[k] + math.log(cell_sq) + math.log(grid.dt)
        if log_cell > _LOG_OVERFLOW:
            raise NormDivergenceError(
                f"{kind} norm diverges on this grid (cell {k}, log integrand "
                f"{log_cell:.1f})")
        total += math.exp(log_cell)
    if total > OVERFLOW_THRESHOLD:
        raise NormDivergenceError(f"{kind} norm diverges on this grid")
    return math.sqrt(total)


@dataclass
class CostSample:
    """One draw of the cost-estimate study."""

    index: int
    ratio: float
    output_norm: float             # |Y|_X + |v|
    data_norm: float               # |Y0| + |f|_Z + |g|_Z
    final_norm: float
    skipped: bool = False
    note: str = ""


@dataclass
class CostStudyReport:
    samples: list[CostSample]
    max_ratio: float
    n_skipped: int


def cost_ratio_study(op: WentzellOperator, grid: TimeGrid, epsilon: float,
                     samples: int, s: float, rng: SplitMix64,
                     cg_tol: float = 1e-10, cg_max_iter: int = 500) -> CostStudyReport:
    """Ratio of weighted output size to data size over random draws.

    Sources are supported in the middle half of the time window so their
    weighted norms are finite; draws with divergent norms (or identically
    zero data) are skipped with a note.
    """
    mesh = op.mesh
    n_t = grid.n_t
    t = grid.times
    support = (t > grid.T / 4) & (t < 3 * grid.T / 4)

    out: list[CostSample] = []
    max_ratio = 0.0
    n_skipped = 0
    for i in range(samples):
        Y0 = CoupledField(bulk=rng.normals(mesh.n_nodes), boundary=rng.normals(mesh.n_bdry))
        f = rng.normals((n_t + 1) * mesh.n_nodes).reshape(n_t + 1, mesh.n_nodes)
        g = rng.normals((n_t + 1) * mesh.n_bdry).reshape(n_t + 1, mesh.n_bdry)
        f *= support[:, None]
        g *= support[:, None]

        data = norm_l2(mesh, Y0)
        try:
            zf = weighted_norm(f, s, grid, op, "Z_Omega")
            zg = weighted_norm(g, s, grid, op, "Z_Gamma")
        except NormDivergenceError as exc:
            out.append(CostSample(i, np.nan, np.nan, np.nan, np.nan, True, str(exc)))
            n_skipped += 1
            continue
        data += zf + zg
        if data == 0.0:
            out.append(CostSample(i, np.nan, np.nan, 0.0, np.nan, True, "zero data"))
            n_skipped += 1
            continue

        res = solve_hum(HUMProblem(op=op, grid=grid, Y0=Y0, f=f, g=g,
                                   epsilon=epsilon, cg_tol=cg_tol,
                                   cg_max_iter=cg_max_iter))
        try:
            yx = weighted_norm(res.trajectory.snapshots, s, grid, op, "X")
        except NormDivergenceError as exc:
            out.append(CostSample(i, np.nan, np.nan, data, res.final_norm, True, str(exc)))
            n_skipped += 1
            continue
        output = yx + res.control_norm
        ratio = output / data
        max_ratio = max(max_ratio, ratio)
        out.append(CostSample(i, ratio, output, data, res.final_norm))
    return CostStudyReport(samples=out, max_ratio=max_ratio, n_skipped=n_skipped)
