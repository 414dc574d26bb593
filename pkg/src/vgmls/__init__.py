"""Meshfree GMLS vector Laplacians and covariant derivatives on point clouds."""

from .geometry import (MANIFOLDS, NeighborIndex, PointCloud, analytic_frame, get_manifold,
                       sample_manifold)
from .laplacian import VectorLaplacianGMLS, assemble_covariant, assemble_operator
from .operators import BlockOperator, SolverError, Spectrum, eigenvalues, solve_shifted, stabilize
from .pde import EvolutionProblem, ScreenedPoissonSolver, TimeStepper, integrate
from .study import ErrorReport, ExperimentConfig, run_convergence_study
from .tangents import FrameField, TangentFrameEstimator, estimate_frames

__version__ = "0.1.0"

__all__ = [
    "MANIFOLDS", "NeighborIndex", "PointCloud", "analytic_frame", "get_manifold", "sample_manifold",
    "VectorLaplacianGMLS", "assemble_covariant", "assemble_operator",
    "BlockOperator", "SolverError", "Spectrum", "eigenvalues", "solve_shifted", "stabilize",
    "EvolutionProblem", "ScreenedPoissonSolver", "TimeStepper", "integrate",
    "ErrorReport", "ExperimentConfig", "run_convergence_study",
    "FrameField", "TangentFrameEstimator", "estimate_frames",
]
