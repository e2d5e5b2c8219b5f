"""Dirichlet problem for graphs of constant curvature function over planar domains."""
from .core import (
    InadmissibleError,
    NestingError,
    NewtonParams,
    ScalarField,
    SolveReport,
    SolverConfig,
    SweepResult,
    discretize,
    eps_continuation,
    initial_guess,
    jacobian,
    newton_solve,
    residual,
    sigma_sweep,
)
from .domain import DomainSpec, parse_domain
from .grid import ConfigurationError, Grid, build_grid
from .radial import RadialProfile, first_curvature, radial_solve

__all__ = [
    "ConfigurationError",
    "DomainSpec",
    "Grid",
    "InadmissibleError",
    "NestingError",
    "NewtonParams",
    "RadialProfile",
    "ScalarField",
    "SolveReport",
    "SolverConfig",
    "SweepResult",
    "build_grid",
    "discretize",
    "eps_continuation",
    "first_curvature",
    "initial_guess",
    "jacobian",
    "newton_solve",
    "parse_domain",
    "radial_solve",
    "residual",
    "sigma_sweep",
]
