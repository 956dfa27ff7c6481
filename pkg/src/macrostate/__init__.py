"""Nonequilibrium macrostates of small quantum lattice systems.

Generalized Gibbs states, maximum-entropy inversion, preparation operators,
first-order memory dynamics of the Lagrange multipliers and a coarse-grained
semigroup, all checked against exact diagonalization.
"""
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    InvariantError,
    MacrostateError,
    NonRealizableError,
    NumericalError,
    SingularMatrixError,
)
from .evolution import (
    MemorySettings,
    ModeBasis,
    Trajectory,
    entropy_report,
    estimate_tau,
    exact_macrostate_trajectory,
    integrate_zeta,
    memory_kernel_term,
    mode_relevant_set,
    mode_transform,
    zeta_dot_solve,
)
from .gibbs import (
    GibbsState,
    MacrostateParams,
    cumulant_expectation,
    entropy,
    gibbs_state,
    kubo_covariance,
    kubo_inner,
    log_partition,
)
from .hilbert import (
    Eigensystem,
    ModelKind,
    ModelSpec,
    ObservableSet,
    RelevantSet,
    build_model,
    heisenberg_evolve,
    unitary_evolve_state,
)
from .kernels import BACKEND
from .maxent import InversionSettings, invert_macrostate, project_macrostate
from .preparation import (
    Control,
    PreparationSchedule,
    TestFunction,
    evolved_prepared_state,
    preparation_exponent,
    rewriting_identity_residual,
)
from .semigroup import (
    coarse_grained_generator,
    decompose,
    decompose_relevant,
    reduced_dynamics_step,
    tau_independence_diagnostic,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "Control",
    "ConvergenceError",
    "DimensionError",
    "Eigensystem",
    "GibbsState",
    "InvariantError",
    "InversionSettings",
    "MacrostateError",
    "MacrostateParams",
    "MemorySettings",
    "ModeBasis",
    "ModelKind",
    "ModelSpec",
    "NonRealizableError",
    "NumericalError",
    "ObservableSet",
    "PreparationSchedule",
    "RelevantSet",
    "SingularMatrixError",
    "TestFunction",
    "Trajectory",
    "build_model",
    "coarse_grained_generator",
    "cumulant_expectation",
    "decompose",
    "decompose_relevant",
    "entropy",
    "entropy_report",
    "estimate_tau",
    "evolved_prepared_state",
    "exact_macrostate_trajectory",
    "gibbs_state",
    "heisenberg_evolve",
    "integrate_zeta",
    "invert_macrostate",
    "kubo_covariance",
    "kubo_inner",
    "log_partition",
    "memory_kernel_term",
    "mode_relevant_set",
    "mode_transform",
    "preparation_exponent",
    "project_macrostate",
    "reduced_dynamics_step",
    "rewriting_identity_residual",
    "tau_independence_diagnostic",
    "unitary_evolve_state",
    "zeta_dot_solve",
    "__version__",
]
