"""Spatial weight profile ``eta`` and its certification.

The anisotropic space-time weights downstream need a profile that is
positive inside the domain, has a nonvanishing gradient everywhere, slopes
strictly inward on the boundary away from the control arc, and vanishes
there together with its tangential derivative.

On the interval we can take the exact linear profile.  On the disk we build
eta numerically: Dirichlet data given by a C^2 polynomial bump supported on
the control arc, extended harmonically into the disk (the interior rows of
the finite-volume Laplace system).  The construction is certified a
posteriori by :func:`verify_eta`, which scans every node and returns the
largest margin ``c0`` for which all four conditions hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import GeometryError
from .geometry import Mesh

def default_flatness_tol(mesh: Mesh) -> float:
    """Certification tolerance for condition (iv), matched to the stencils.

    On the interval the linear profile gives exact zeros, so the tolerance
    is essentially roundoff.  On the disk the central tangential stencil at
    nodes adjacent to the control arc picks up the bump's interior values,
    a floor that measures ~8 * dtheta^2; the default allows 1.5x that.
    """
    if mesh.spec.kind == "interval":
        return 1e-9
    dtheta = 2 * np.pi / mesh.spec.n_theta
    return 12.0 * dtheta**2


def bump(u: np.ndarray, power: int = 3) -> np.ndarray:
    """C^2 bump profile ``(1 - u^2)^power`` on |u| < 1, zero outside.

    With ``power = 3`` the value and the first two derivatives vanish at
    |u| = 1, which is exactly the flatness the boundary conditions off the
    control arc require.
    """
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, (1.0 - u**2) ** power, 0.0)


@dataclass
class EtaField:
    """Nodal weight profile with its finite-difference derivative estimates."""

    values: np.ndarray            # (n_nodes,)
    grad_sq: np.ndarray           # (n_nodes,) estimate of |grad eta|^2
    tangential: np.ndarray        # (n_bdry,) tangential derivative on the boundary
    normal: np.ndarray            # (n_bdry,) outward normal derivative

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class EtaReport:
    """Certification result: per-condition extrema and the margin ``c0``."""

    c0: float
    min_interior: float           # condition (i): min eta over interior nodes
    min_grad: float               # condition (ii): min |grad eta| over all nodes
    max_normal_off_arc: float     # condition (iii): max d_nu eta over boundary \ gamma
    max_value_off_arc: float      # condition (iv): max |eta| there
    max_tangential_off_arc: float  # condition (iv): max |tangential derivative| there
    passed: bool
    failures: tuple[str, ...] = ()


def build_eta(mesh: Mesh, power: int = 3) -> EtaField:
    """Construct the weight profile for the mesh's control arc.

    Interval: the exact linear profile (``x`` for gamma = right endpoint,
    ``L - x`` for left; ``x`` as well when gamma is both endpoints, where the
    off-arc conditions are vacuous).  Disk: harmonic extension of the bump
    boundary data; raises :class:`GeometryError` on a singular interior
    solve, which indicates a defective mesh.
    """
    if mesh.spec.kind == "interval":
        x = mesh.coords[:, 0]
        values = mesh.spec.size - x if mesh.spec.gamma == "left" else x.copy()
    else:
        arc = mesh.spec.gamma
        xy = mesh.coords[mesh.boundary_idx]
        theta = np.arctan2(xy[:, 1], xy[:, 0])
        d = np.angle(np.exp(1j * (theta - arc.center)))
        beta = bump(d / arc.half_width, power=power)
        K = mesh.stiff_bulk.tocsc()
        ii = mesh.interior_idx
        bb = mesh.boundary_idx
        rhs = -K[ii][:, bb] @ beta
        try:
            inner = spla.spsolve(K[ii][:, ii], rhs)
        except Exception as exc:  # pragma: no cover - defensive
            raise GeometryError(f"interior Laplace solve failed: {exc}") from exc
        if not np.all(np.isfinite(inner)):
            raise GeometryError("interior Laplace solve returned non-finite values")
        values = np.zeros(mesh.n_nodes)
        values[ii] = inner
        values[bb] = beta
    return _with_derivatives(mesh, values)


def _with_derivatives(mesh: Mesh, values: np.ndarray) -> EtaField:
    grad_sq = mesh.grad_squared(values)
    tangential = np.asarray(mesh.grad_surf @ values[mesh.boundary_idx]).ravel()
    normal = np.asarray(mesh.dnu @ values).ravel()
    return EtaField(values=values, grad_sq=grad_sq, tangential=tangential, normal=normal)


def verify_eta(eta: EtaField, mesh: Mesh, gamma_mask: np.ndarray | None = None,
               tol: float | None = None) -> EtaReport:
    """Certify the four weight-profile conditions node by node.

    (i) positivity at interior nodes, (ii) gradient bounded below everywhere,
    (iii) outward normal derivative <= -c0 off the control arc, and
    (iv) value and tangential derivative below ``tol`` there (defaulting to
    :func:`default_flatness_tol`).  The returned ``c0`` is the largest
    margin compatible with (ii) and (iii); ``passed`` additionally requires
    (i) and (iv).
    """
    if gamma_mask is None:
        gamma_mask = mesh.gamma_mask
    if tol is None:
        tol = default_flatness_tol(mesh)
    off = ~np.asarray(gamma_mask, dtype=bool)

    min_interior = float(np.min(eta.values[mesh.interior_idx]))
    min_grad = float(np.min(np.sqrt(np.maximum(eta.grad_sq, 0.0))))
    if off.any():
        max_normal = float(np.max(eta.normal[off]))
        max_value = float(np.max(np.abs(eta.values[mesh.boundary_idx][off])))
        max_tang = float(np.max(np.abs(eta.tangential[off])))
    else:  # gamma covers the whole boundary: off-arc conditions are vacuous
        max_normal, max_value, max_tang = -np.inf, 0.0, 0.0

    failures = []
    if min_interior <= 0:
        failures.append(f"(i) interior positivity: min eta = {min_interior:.3e}")
    if min_grad <= 0:
        failures.append(f"(ii) gradient lower bound: min |grad eta| = {min_grad:.3e}")
    if max_normal >= 0:
        failures.append(f"(iii) inward slope off arc: max d_nu eta = {max_normal:.3e}")
    if max_value > tol:
        failures.append(f"(iv) trace flatness: max |eta| off arc = {max_value:.3e}")
    if max_tang > tol:
        failures.append(f"(iv) tangential flatness: max = {max_tang:.3e}")

    c0 = min(min_grad, -max_normal) if np.isfinite(max_normal) else min_grad
    passed = not failures and c0 > 0
    return EtaReport(
        c0=float(max(c0, 0.0)) if passed else float(c0),
        min_interior=min_interior,
        min_grad=min_grad,
        max_normal_off_arc=max_normal,
        max_value_off_arc=max_value,
        max_tangential_off_arc=max_tang,
        passed=passed,
        failures=tuple(failures),
    )
