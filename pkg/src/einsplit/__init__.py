"""Multiscale explicit-implicit-null splitting for nonlinear high-contrast diffusion."""
from .errors import ConfigurationError, DivergenceError, NumericalError, SingularSystemError
from .mesh import MeshHierarchy, build_hierarchy, oversample_region
from .media import (CompressibleLaw, ExpLaw, NonlinearLaw, PermeabilityField, ProblemSpec, UnitLaw,
                    builtin_spec)
from .fine_solver import NewtonConfig, Trajectory, run_reference, step_implicit_newton
from .multiscale import (MultiscaleBasis, build_enlmc_basis, build_nlmc_basis, coarse_operators,
                         partition_continua, prolongate)
from .deim import DeimModel, build_deim_model, collect_snapshots, deim_indices, pod
from .splitting import Scheme, SchemeConfig, SplitState, run_scheme
from .stability import StabilityReport, check

__all__ = [
    "ConfigurationError", "DivergenceError", "NumericalError", "SingularSystemError",
    "MeshHierarchy", "build_hierarchy", "oversample_region",
    "CompressibleLaw", "ExpLaw", "NonlinearLaw", "PermeabilityField", "ProblemSpec", "UnitLaw",
    "builtin_spec", "NewtonConfig", "Trajectory", "run_reference", "step_implicit_newton",
    "MultiscaleBasis", "build_enlmc_basis", "build_nlmc_basis", "coarse_operators",
    "partition_continua", "prolongate", "DeimModel", "build_deim_model", "collect_snapshots",
    "deim_indices", "pod", "Scheme", "SchemeConfig", "SplitState", "run_scheme",
    "StabilityReport", "check",
]
