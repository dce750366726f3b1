"""Periodic homogenization toolkit.

Solves the two cell problems of periodic homogenization on the unit
cell, computes the effective tensor, builds the two-scale expansion up
to second order, and verifies its convergence rates against resolved
fine-scale solves.
"""

from .coeff_fields import (
    CoefficientField,
    ConstantField,
    InclusionField,
    LaminateField,
    SmoothField,
    field_from_config,
    make_preset,
    preset_names,
)
from .correctors import (
    CorrectorSet,
    compute_correctors,
    energy_form_tensor,
    homogenized_tensor,
    second_corrector_rhs,
    solve_first_correctors,
    solve_second_correctors,
)
from .fine_reference import (
    DirichletGrid,
    FineSolution,
    ResolutionTooCoarse,
    energy_identity_gap,
    oscillatory_coefficients,
    solve_fine,
)
from .harness import ExperimentConfig, ConfigError, RunSummary, run, validate_config
from .periodic_fem import (
    CellGrid,
    IncompatibleRhs,
    NoConvergence,
    PeriodicField,
    SparseSystem,
    assemble_linear_functional,
    assemble_stiffness,
    build_grid,
    solve_mean_zero,
)
from .two_scale import (
    DegenerateData,
    ErrorReport,
    ExpansionOrder,
    InsufficientData,
    MacroSolution,
    MismatchedInputs,
    error_report,
    evaluate_expansion,
    fit_rate,
    manufactured_macro,
)

__version__ = "0.1.0"
