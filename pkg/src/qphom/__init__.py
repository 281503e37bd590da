"""Numerical homogenization of quasiperiodic monotone operators.

Quasiperiodic coefficients are modeled as slices of periodic functions on a
higher-dimensional torus through a tall projection matrix with orthonormal
columns.  The package verifies the lattice irrationality criterion exactly,
solves corrector problems spectrally, homogenizes macroscopic Dirichlet
problems, and measures two-scale convergence of the resolved oscillatory
solutions against the effective ones.
"""

__version__ = "0.1.0"

from .projection import (AlgebraicTag, CriterionReport, ProjectionError,
                         ProjectionMatrix, builtin_matrices, check_criterion,
                         make_tag, matrix_from_config, matrix_to_config,
                         new_projection, physical_projector)
from .fields import (CollocationGrid, FieldError, FourierField,
                     ergodic_average, ergodic_mode_bound, dot_product,
                     green_identity_residual, pointwise_product,
                     projected_divergence, projected_gradient, slice_sample,
                     subspace_split, torus_mean)
from .flux import (AuditReport, FluxError, FluxModel, audit_assumptions,
                   make_model, monotonicity_floor, scalar_coefficient)
from .cell import (CellCache, CellProblem, CellSolution, CellSolverError,
                   corrector_trace, solve_cell)
from .fem import (ConstantLaw, FEMError, FineLaw, HomogenizedLaw,
                  MacroProblem, MacroSolution, RadialLaw, UnderResolvedError,
                  lp_error, lp_norm, solve_fine, solve_homogenized,
                  solve_macro)
from .symbolic import Expression, ExpressionError, compile_macro_expression
from .config import ConfigError, RunConfig, load_config, parse_config
from .harness import (ConvergenceReport, TwoScaleTestFunction, canonical_json,
                      convergence_study, ergodic_study, pairing_limit,
                      two_scale_pairing, weak_pairing, write_csv, write_json)
from .cli import main, run_cli

__all__ = [name for name in dir() if not name.startswith("_")]
