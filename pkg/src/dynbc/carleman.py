"""Anisotropic space-time weights and both sides of the weighted inequality.

Weights built from a certified profile ``eta`` and parameters ``lam``, ``s``:

    theta(t) = 1 / (t (T - t))
    alpha(t, x) = theta(t) * (exp(2 lam max|eta|) - exp(lam eta(x)))
    xi(t, x)    = theta(t) * exp(lam eta(x))

``alpha`` and ``xi`` blow up at the time endpoints; the damping factors
``exp(-2 s alpha)`` tend to zero there faster than any polynomial and are
defined as exactly zero at t in {0, T}.

All weighted time-space integrals use midpoint quadrature on interior time
cells (the singular endpoints are never evaluated) with trajectory values
averaged onto midpoints and per-cell difference quotients for the time
derivative.  Because ``exp(-2 s alpha)`` ranges over thousands of orders of
magnitude, every integral is accumulated in log space (log-sum-exp); the
reports carry both the log value (always finite or -inf) and its linear
value (which may underflow to zero in double precision).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dynamics import ThetaStepper, TimeGrid, Trajectory, solve_adjoint
from .eta import EtaField
from .operators import CoupledField, WentzellOperator
from .rng import SplitMix64

#: names of the eight left-hand-side integrals, in report order
LHS_TERM_NAMES = (
    "bulk_time",      # s^-1 xi^-1 |d_t phi|^2          over the bulk
    "bulk_lap",       # s^-1 xi^-1 |lap phi|^2          over the bulk
    "bulk_grad",      # s lam^2 xi |grad phi|^2         over the bulk
    "surf_time_lap",  # s^-1 xi^-1 (|d_t|^2 + |lap|^2)  on the boundary
    "surf_grad",      # s lam xi |tangential grad|^2    on the boundary
    "bulk_zero",      # s^3 lam^4 xi^3 |phi|^2          over the bulk
    "surf_zero",      # s^3 lam^3 xi^3 |phi|^2          on the boundary
    "normal",         # s lam xi |normal derivative|^2  on the boundary
)


def s_min(T: float, C: float) -> float:
    """Smallest admissible weight strength, ``C (T + T^{8/3})``."""
    if T <= 0 or C <= 0:
        raise ValueError("s_min needs T > 0 and C > 0")
    return C * (T + T ** (8.0 / 3.0))


@dataclass
class CarlemanWeights:
    """Weight evaluators bound to a profile and parameters (lam, s, T)."""

    eta: EtaField
    lam: float
    s: float
    T: float
    eta_max: float = field(init=False)

    def __post_init__(self):
        if self.lam < 1.0:
            raise ValueError(f"lam must be >= 1, got {self.lam}")
        if self.s <= 0.0:
            raise ValueError(f"s must be positive, got {self.s}")
        if self.T <= 0.0:
            raise ValueError(f"T must be positive, got {self.T}")
        self.eta_max = self.eta.max_abs

    def theta(self, t: float) -> float:
        self._check_interior(t)
        return 1.0 / (t * (self.T - t))

    def _check_interior(self, t: float) -> None:
        if not 0.0 < t < self.T:
            raise ValueError(f"t = {t} is not inside (0, {self.T})")

    def _check_closed(self, t: float) -> None:
        if not 0.0 <= t <= self.T:
            raise ValueError(f"t = {t} is outside [0, {self.T}]")

    def _space_profile(self) -> np.ndarray:
        return np.exp(self.lam * self.eta.values)

    def alpha(self, t: float) -> np.ndarray:
        """alpha(t, .) over all nodes."""
        th = self.theta(t)
        return th * (math.exp(2 * self.lam * self.eta_max) - self._space_profile())

    def xi(self, t: float) -> np.ndarray:
        th = self.theta(t)
        return th * self._space_profile()

    def alpha_star(self, t: float) -> float:
        """max over nodes of alpha(t, .) (attained where eta is smallest)."""
        th = self.theta(t)
        return th * (math.exp(2 * self.lam * self.eta_max)
                     - math.exp(self.lam * float(np.min(self.eta.values))))

    def log_damping(self, t: float, factor: float = 2.0) -> np.ndarray:
        """log of exp(-factor * s * alpha(t, .)); -inf at t in {0, T}."""
        self._check_closed(t)
        if t == 0.0 or t == self.T:
            return np.full(self.eta.values.shape, -np.inf)
        return -factor * self.s * self.alpha(t)

    def damping(self, t: float, factor: float = 2.0) -> np.ndarray:
        """exp(-factor * s * alpha); exactly zero at the time endpoints."""
        with np.errstate(under="ignore"):
            return np.exp(self.log_damping(t, factor))


def eval_weights(w: CarlemanWeights, t: float, node: int) -> dict[str, float]:
    """Point values {theta, alpha, xi} at time t and one mesh node."""
    th = w.theta(t)
    profile = math.exp(w.lam * float(w.eta.values[node]))
    return {
        "theta": th,
        "alpha": th * (math.exp(2 * w.lam * w.eta_max) - profile),
        "xi": th * profile,
    }


@dataclass
class CarlemanReport:
    """Both sides of the inequality for one trajectory and one (s, lam)."""

    s: float
    lam: float
    T: float
    lhs_terms: dict[str, float]
    log_lhs_terms: dict[str, float]
    lhs: float
    log_lhs: float
    rhs: float
    log_rhs: float
    ratio: float
    log_ratio: float
    sample: int = -1

    @property
    def rhs_positive(self) -> bool:
        return self.log_rhs > -np.inf


def _log_quad(log_weights: np.ndarray, values_sq: np.ndarray) -> float:
    """log of sum(exp(log_weights) * values_sq) over all entries."""
    mask = values_sq > 0.0
    if not np.any(mask):
        return -np.inf
    return float(logsumexp(log_weights[mask] + np.log(values_sq[mask])))


def _finite_exp(logval: float) -> float:
    with np.errstate(under="ignore", over="ignore"):
        return float(np.exp(logval))


def carleman_lhs(traj: Trajectory, w: CarlemanWeights, op: WentzellOperator) -> CarlemanReport:
    """All eight left-hand-side integrals for a homogeneous backward trajectory.

    Spatial operators are the mesh stencils (pointwise Laplacians, gradient
    components, one-sided normal derivative); the time derivative is the
    per-cell difference quotient.  Returns a report whose right-hand-side
    fields are unset (zero); combine with :func:`carleman_rhs`.
    """
    mesh = op.mesh
    grid = traj.grid
    dt = grid.dt
    snaps = traj.snapshots
    mids = 0.5 * (snaps[:-1] + snaps[1:])
    ddt = (snaps[1:] - snaps[:-1]) / dt

    n_cells = grid.n_t
    bidx = mesh.boundary_idx
    lam, s = w.lam, w.s
    log_coef = {
        "bulk_time": -math.log(s),
        "bulk_lap": -math.log(s),
        "bulk_grad": math.log(s) + 2 * math.log(lam),
        "surf_time_lap": -math.log(s),
        "surf_grad": math.log(s) + math.log(lam),
        "bulk_zero": 3 * math.log(s) + 4 * math.log(lam),
        "surf_zero": 3 * math.log(s) + 3 * math.log(lam),
        "normal": math.log(s) + math.log(lam),
    }

    log_wq_bulk = np.log(dt * op.M_omega)
    log_wq_surf = np.log(dt * op.M_gamma)
    cell_logs = {name: np.full(n_cells, -np.inf) for name in LHS_TERM_NAMES}
    for k in range(n_cells):
        tm = 0.5 * (grid.times[k] + grid.times[k + 1])
        log_damp = w.log_damping(tm)              # over all nodes
        log_xi = np.log(w.xi(tm))
        phi = mids[k]
        dphi = ddt[k]
        lapb = np.asarray(op.lap_bulk @ phi).ravel()
        grad_sq = mesh.grad_squared(phi)
        tr = phi[bidx]
        dtr = dphi[bidx]
        laps = np.asarray(op.lap_surf @ tr).ravel()
        gsurf = np.asarray(mesh.grad_surf @ tr).ravel()
        dnu = np.asarray(op.dnu @ phi).ravel()

        lw_bulk_inv = log_wq_bulk + log_damp - log_xi
        lw_bulk_xi = log_wq_bulk + log_damp + log_xi
        lw_bulk_xi3 = log_wq_bulk + log_damp + 3 * log_xi
        ld_b = log_damp[bidx]
        lx_b = log_xi[bidx]
        lw_surf_inv = log_wq_surf + ld_b - lx_b
        lw_surf_xi = log_wq_surf + ld_b + lx_b
        lw_surf_xi3 = log_wq_surf + ld_b + 3 * lx_b

        cell_logs["bulk_time"][k] = _log_quad(lw_bulk_inv, dphi**2)
        cell_logs["bulk_lap"][k] = _log_quad(lw_bulk_inv, lapb**2)
        cell_logs["bulk_grad"][k] = _log_quad(lw_bulk_xi, grad_sq)
        cell_logs["surf_time_lap"][k] = _log_quad(lw_surf_inv, dtr**2 + laps**2)
        cell_logs["surf_grad"][k] = _log_quad(lw_surf_xi, gsurf**2)
        cell_logs["bulk_zero"][k] = _log_quad(lw_bulk_xi3, phi**2)
        cell_logs["surf_zero"][k] = _log_quad(lw_surf_xi3, tr**2)
        cell_logs["normal"][k] = _log_quad(lw_surf_xi, dnu**2)

    log_terms = {}
    lin_terms = {}
    for name in LHS_TERM_NAMES:
        with np.errstate(invalid="ignore"):
            lt = float(logsumexp(cell_logs[name])) + log_coef[name]
        if np.isnan(lt):
            lt = -np.inf
        log_terms[name] = lt
        lin_terms[name] = _finite_exp(lt)

    finite = [v for v in log_terms.values() if v > -np.inf]
    log_total = float(logsumexp(finite)) if finite else -np.inf
    return CarlemanReport(
        s=s, lam=lam, T=w.T,
        lhs_terms=lin_terms, log_lhs_terms=log_terms,
        lhs=_finite_exp(log_total), log_lhs=log_total,
        rhs=0.0, log_rhs=-np.inf, ratio=np.nan, log_ratio=np.nan,
    )


def carleman_rhs(traj: Trajectory, w: CarlemanWeights, mesh) -> tuple[float, float]:
    """Observation-arc integral ``s^6 lam^6 int exp(-s alpha) xi^6 |trace|^2``.

    Note the single-strength damping ``exp(-s alpha)`` (the two sides of the
    printed inequality carry different damping).  The multiplicative
    constant of the inequality is not included; it is the fitted quantity.
    Returns ``(linear value, log value)``.
    """
    grid = traj.grid
    dt = grid.dt
    bidx = mesh.boundary_idx
    snaps = traj.snapshots[:, bidx]
    mids = 0.5 * (snaps[:-1] + snaps[1:])
    mask = mesh.gamma0_mask
    w_obs = mesh.w_surf[mask]

    cell_logs = np.full(grid.n_t, -np.inf)
    for k in range(grid.n_t):
        tm = 0.5 * (grid.times[k] + grid.times[k + 1])
        log_damp = w.log_damping(tm, factor=1.0)[bidx][mask]
        log_xi6 = 6.0 * np.log(w.xi(tm)[bidx][mask])
        lw = np.log(dt * w_obs) + log_damp + log_xi6
        cell_logs[k] = _log_quad(lw, mids[k][mask] ** 2)
    with np.errstate(invalid="ignore"):
        log_total = float(logsumexp(cell_logs))
    if np.isnan(log_total):
        log_total = -np.inf
    if log_total > -np.inf:
        log_total += 6.0 * (math.log(w.s) + math.log(w.lam))
    return _finite_exp(log_total), log_total


def evaluate_inequality(traj: Trajectory, w: CarlemanWeights,
                        op: WentzellOperator) -> CarlemanReport:
    """LHS and RHS together, with the fitted ratio in linear and log form."""
    rep = carleman_lhs(traj, w, op)
    rhs, log_rhs = carleman_rhs(traj, w, op.mesh)
    rep.rhs, rep.log_rhs = rhs, log_rhs
    if log_rhs == -np.inf:
        rep.ratio, rep.log_ratio = np.nan, np.nan
    elif rep.log_lhs == -np.inf:
        rep.ratio, rep.log_ratio = 0.0, -np.inf
    else:
        rep.log_ratio = rep.log_lhs - log_rhs
        rep.ratio = _finite_exp(rep.log_ratio)
    return rep


@dataclass
class SweepSummary:
    """Per-(s, lam) aggregate of a random-sample sweep."""

    s: float
    lam: float
    max_ratio: float
    max_log_ratio: float
    n_samples: int
    n_skipped: int


def carleman_sweep(op: WentzellOperator, grid: TimeGrid, eta: EtaField,
                   samples: int, s_values: list[float], lam_values: list[float],
                   rng: SplitMix64, *, s_floor: float | None = None,
                   lam_floor: float = 1.0) -> tuple[list[CarlemanReport], list[SweepSummary]]:
    """Evaluate the inequality on random unit terminal data.

    For each sample, one homogeneous backward solve; for each (s, lam) the
    weighted integrals of that trajectory.  Samples whose observation-arc
    integral vanishes are skipped with a note in the summary.  Preconditions:
    every ``s`` at least ``s_floor`` (when given) and every ``lam`` at least
    ``lam_floor``.
    """
    if s_floor is not None:
        bad = [s for s in s_values if s < s_floor]
        if bad:
            raise ValueError(f"s values below the admissible floor {s_floor}: {bad}")
    bad = [l for l in lam_values if l < lam_floor]
    if bad:
        raise ValueError(f"lam values below the admissible floor {lam_floor}: {bad}")

    mesh = op.mesh
    stepper = ThetaStepper(op, grid)
    reports: list[CarlemanReport] = []
    trajs = []
    for _ in range(samples):
        phi = rng.normals(mesh.n_nodes)
        dof_norm = op.m_norm(phi)
        phi = phi / dof_norm if dof_norm > 0 else phi
        phiT = CoupledField.from_dof(mesh, phi)
        trajs.append(solve_adjoint(op, grid, phiT, stepper=stepper))

    summaries = []
    for s in s_values:
        for lam in lam_values:
            weights = CarlemanWeights(eta=eta, lam=lam, s=s, T=grid.T)
            max_ratio = -np.inf
            max_log = -np.inf
            skipped = 0
            for i, traj in enumerate(trajs):
                rep = evaluate_inequality(traj, weights, op)
                rep.sample = i
                reports.append(rep)
                if not rep.rhs_positive:
                    skipped += 1
                    continue
                max_ratio = max(max_ratio, rep.ratio)
                max_log = max(max_log, rep.log_ratio)
            summaries.append(SweepSummary(
                s=s, lam=lam,
                max_ratio=float(max_ratio) if samples - skipped else np.nan,
                max_log_ratio=float(max_log) if samples - skipped else np.nan,
                n_samples=samples, n_skipped=skipped,
            ))
    return reports, summaries


def sweep_rows(reports: list[CarlemanReport]) -> tuple[list[str], list[tuple]]:
    """CSV rows (s, lambda, T, sample, lhs_term_1..8, rhs, ratio)."""
    header = ["s", "lambda", "T", "sample"]
    header += [f"lhs_term_{i + 1}" for i in range(len(LHS_TERM_NAMES))]
    header += ["rhs", "ratio"]
    rows = []
    for r in reports:
        row = [r.s, r.lam, r.T, r.sample]
        row += [r.lhs_terms[name] for name in LHS_TERM_NAMES]
        row += [r.rhs, r.ratio]
        rows.append(tuple(row))
    return header, rows
