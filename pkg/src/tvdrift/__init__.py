"""tvdrift: weighted total-variation-with-drift minimization on masked grids.

Solves min over u of  int a |Du + F| + H u  under mean-zero (Neumann) or
relaxed Dirichlet boundary conditions, returns the dual vector field that
certifies optimality, and provides level-set perimeter machinery for
checking minimality of super-level sets.
"""

from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    BoundaryTrace,
    gradient,
    divergence,
    normal_trace,
    ibp_defect,
    mean_zero_project,
    operator_norm,
    poincare_constant,
)
from .problem import (
    BoundaryCondition,
    ProblemSpec,
    EnergyReport,
    heisenberg_drift,
    primal_energy,
    dual_value,
    feasibility_residuals,
    reduce_dirichlet,
    existence_threshold,
)
from .solver import SolverConfig, Certificate, solve, dual_polish, duality_gap
from .oracle import OracleConfig, oracle_value
from .levelset import (
    LevelSet,
    PsiReport,
    super_level_set,
    psi_perimeter,
    chi_epsilon,
    lsc_check,
    density_boundary,
    check_minimality_exhaustive,
    check_minimality_random,
    barrier_probe,
)
from . import certify
from .scenarios import builtin_scenarios, get_scenario

__all__ = [
    "GridSpec", "ScalarField", "VectorField", "BoundaryTrace",
    "gradient", "divergence", "normal_trace", "ibp_defect",
    "mean_zero_project", "operator_norm", "poincare_constant",
    "BoundaryCondition", "ProblemSpec", "EnergyReport",
    "heisenberg_drift", "primal_energy", "dual_value",
    "feasibility_residuals", "reduce_dirichlet", "existence_threshold",
    "SolverConfig", "Certificate", "solve", "dual_polish", "duality_gap",
    "OracleConfig", "oracle_value",
    "LevelSet", "PsiReport", "super_level_set", "psi_perimeter",
    "chi_epsilon", "lsc_check", "density_boundary",
    "check_minimality_exhaustive", "check_minimality_random", "barrier_probe",
    "certify", "builtin_scenarios", "get_scenario",
]

__version__ = "0.1.0"
