"""Augmented mixed finite elements for steady incompressible flow in
velocity-vorticity-pressure form with spatially variable viscosity."""

from .assembly import (
    AssembledSystem,
    ProblemCoefficients,
    SystemAssembler,
    apply_dirichlet,
    assemble_gram_X,
    assemble_newton,
    assemble_oseen,
    default_quad_degree,
)
from .elements import reference_basis, scalar_element, vector_element
from .mesh import Mesh, build_structured, cell_geometry, refine_uniform
from .quadrature import QuadratureRule, quadrature
from .solver import (
    DiagnosticsConfig,
    NonlinearSettings,
    SmallDataReport,
    SolveReport,
    SolverFailure,
    check_small_data,
    grad_nu_norm,
    solve_linear,
    solve_newton,
    solve_picard,
)
from .spaces import (
    DiscreteField,
    FunctionSpace,
    boundary_values,
    build_space,
    eval_cell,
    interpolate,
    method_spaces,
    vertex_values,
)
from .verify import (
    ConvergenceReport,
    ManufacturedCase,
    coefficients_from_case,
    div_norm,
    eoc,
    error_norms,
    example1_case_2d,
    forcing_from_momentum,
    run_cavity,
    run_convergence,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
