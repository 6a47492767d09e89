"""Linear-quadratic optimal control of graphon-coupled mean-field systems.

The package solves the backward system characterizing the optimal control of
a continuum of label-indexed linear SDEs coupled through kernel-weighted mean
fields: a per-label matrix Riccati equation, a kernel-valued Riccati equation
on the label square, and two linear closers (an affine term and a scalar
term), then synthesizes the optimal affine feedback law, integrates the
closed-loop mean flow, simulates Monte Carlo ensembles, and certifies
optimality numerically through the exact decomposition of the cost into the
candidate value plus a nonnegative quadratic penalty in the control
deviation.

Typical use:

    from graphonlq import build_grid, default_grid, solve_system
    from graphonlq.systemic_risk import build_model, heterogeneous_preset

    grid = build_grid(16)
    problem = build_model(heterogeneous_preset(), grid)
    sol = solve_system(problem, default_grid(problem.t0, problem.T))
"""

from .control import (
    AffinePolicy,
    FeedbackLaw,
    InitialCondition,
    MeanFlow,
    build_feedback,
    solve_mean_flow,
    value_function,
)
from .grid import LabelGrid, build_grid
from .kernel_riccati import BarKPath, diagnostics, f_rhs, psi, solve_abstract_riccati, v_gain
from .kernels import (
    Kernel,
    apply_kernel,
    check_flip_symmetry,
    compose,
    constant_kernel,
    flip_transpose,
    operator_norm,
    sample_kernel,
    symmetrize,
    zero_kernel,
)
from .linear_terms import (
    LambdaPath,
    YPath,
    gamma_term,
    solve_Lambda,
    solve_Y,
    solve_linear_closers,
)
from .model import (
    CoefficientField,
    ProblemData,
    ValidationReport,
    coefficients_from_scalars,
    from_centered,
    from_symmetric,
    validate,
)
from .pipeline import SolutionBundle, solve_system
from .problem_io import ProblemFormatError, load_problem, save_problem
from .riccati import KPath, o_gain, phi, solve_standard_riccati, u_gain
from .simulate import (
    CostEstimate,
    Ensemble,
    GapReport,
    check_fundamental_relation,
    evaluate_cost,
    simulate,
    simulate_particles,
)
from .timegrid import TimeGrid, default_grid

__version__ = "0.1.0"

__all__ = [
    "AffinePolicy", "BarKPath", "CoefficientField", "CostEstimate", "Ensemble",
    "FeedbackLaw", "GapReport", "InitialCondition", "KPath", "Kernel", "LabelGrid",
    "LambdaPath", "MeanFlow", "ProblemData", "ProblemFormatError", "SolutionBundle",
    "TimeGrid", "ValidationReport", "YPath", "apply_kernel", "build_feedback",
    "build_grid", "check_flip_symmetry", "check_fundamental_relation",
    "coefficients_from_scalars", "compose", "constant_kernel", "default_grid",
    "diagnostics", "evaluate_cost", "f_rhs", "flip_transpose", "from_centered",
    "from_symmetric", "gamma_term", "load_problem", "o_gain", "operator_norm",
    "phi", "psi", "sample_kernel", "save_problem", "simulate", "simulate_particles",
    "solve_Lambda", "solve_Y", "solve_abstract_riccati", "solve_linear_closers",
    "solve_mean_flow", "solve_standard_riccati", "solve_system", "symmetrize",
    "u_gain", "v_gain", "validate", "value_function", "zero_kernel",
]
