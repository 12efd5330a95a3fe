"""Optimal control of the stochastic Cahn-Hilliard equation.

Spectral Neumann-box discretization, stabilized Euler-Maruyama state solver,
exact discrete-transpose adjoints, projected gradient descent, and a
verification harness for the structural identities of the control problem.
"""

from .errors import (
    BlowUpError,
    ChocError,
    ConfigurationError,
    DomainError,
    PreconditionError,
    ShapeError,
    SnapshotFormatError,
)
from .grid import (
    Field,
    Grid,
    SpectralField,
    check_compactness_inequality,
    from_spectral,
    inner_h,
    inverse_neumann_laplacian,
    laplacian,
    mean,
    norm_h,
    norm_v,
    norm_vstar,
    norm_z,
    prolong,
    to_spectral,
)
from .physics import (
    NO_TRUNCATION,
    NoiseModel,
    Potential,
    TruncationLevel,
    additive_noise,
    apply_B,
    apply_DB,
    apply_DB_adjoint,
    double_well,
    multiplicative_noise,
    no_noise,
    psi_eval,
    psi_second_truncated,
    quadratic_potential,
    validate_assumptions,
    zero_potential,
)
from .state import (
    StateParams,
    TimeGrid,
    Trajectory,
    WienerPath,
    chemical_potential,
    energy,
    mix_seed,
    sample_wiener_path,
    solve_state,
    step_state,
)
from .sensitivity import (
    AdjointSolution,
    LinearizedSolution,
    convergence_in_truncation,
    duality_terms,
    solve_adjoint,
    solve_linearized,
)
from .control import (
    ControlProcess,
    EnsembleSpec,
    OptimizationResult,
    OptimizerOptions,
    Problem,
    evaluate_cost,
    gradient,
    optimality_residual,
    optimize,
    project_admissible,
    reduced_cost,
)
from .config import (
    RunConfig,
    build_problem,
    default_config,
    parse_config,
    serialize_config,
)
from .snapshots import read_snapshot, write_snapshot

__version__ = "0.1.0"
