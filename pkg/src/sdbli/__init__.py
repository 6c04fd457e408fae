"""Stochastic data-driven Bouligand-Landweber iteration for a non-smooth inverse source problem."""

from .data_driven import DataDrivenOperator, TrainingSet, build_data_driven, generate_training
from .forward import NewtonConfig, StateSolution, fixed_point_oracle, solve_forward
from .grid import GridFunction, GridSpec, apply_laplacian, inner, norm
from .solver import IterationTrace, SolverConfig, run_sdbli
from .system import InverseProblem, ObservationPartition, make_partition

__version__ = "0.1.0"
