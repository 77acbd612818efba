"""Desk-scale laboratory for boundary null control of coupled bulk-surface
heat systems with dynamic boundary conditions."""

from .carleman import (CarlemanReport, CarlemanWeights, SweepSummary,
                       carleman_lhs, carleman_rhs, carleman_sweep,
                       eval_weights, evaluate_inequality, s_min)
from .control import (CostStudyReport, GramianOp, HUMProblem, HUMResult,
                      ObservabilityReport, apply_gramian, cost_ratio_study,
                      observability_constant, rayleigh_ratio, solve_hum,
                      weighted_norm)
from .dynamics import (RegularityReport, ThetaStepper, TimeGrid, Trajectory,
                       duality_gap, regularity_ratios, solve_adjoint,
                       solve_forward, trajectory_mass, trajectory_norms)
from .errors import (ConfigError, DynbcError, GeometryError,
                     NormDivergenceError, SolverError)
from .eta import EtaField, EtaReport, build_eta, bump, verify_eta
from .geometry import ArcSpec, DomainSpec, Mesh, build_mesh
from .operators import (CoupledField, WentzellOperator, assemble_operator,
                        elliptic_residuals, elliptic_solve, h2_norm, inner_l2,
                        norm_l2)
from .rng import SplitMix64

__version__ = "0.1.0"

__all__ = [
    "ArcSpec", "CarlemanReport", "CarlemanWeights", "ConfigError",
    "CostStudyReport", "CoupledField", "DomainSpec", "DynbcError", "EtaField",
    "EtaReport", "GeometryError", "GramianOp", "HUMProblem", "HUMResult",
    "Mesh", "NormDivergenceError", "ObservabilityReport", "RegularityReport",
    "SolverError", "SplitMix64", "SweepSummary", "ThetaStepper", "TimeGrid",
    "Trajectory", "WentzellOperator", "apply_gramian", "assemble_operator",
    "build_eta", "build_mesh", "bump", "carleman_lhs", "carleman_rhs",
    "carleman_sweep", "cost_ratio_study", "duality_gap", "elliptic_residuals",
    "elliptic_solve", "eval_weights", "evaluate_inequality", "h2_norm",
    "inner_l2", "norm_l2", "observability_constant", "rayleigh_ratio",
    "regularity_ratios", "s_min", "solve_adjoint", "solve_forward",
    "solve_hum", "trajectory_mass", "trajectory_norms", "verify_eta",
    "weighted_norm",
]
