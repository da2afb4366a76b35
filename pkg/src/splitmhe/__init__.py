"""Time-splitting distributed solvers for nonlinear moving horizon estimation."""

from .errors import (
    DimensionMismatchError,
    FactorizationError,
    LocalSolveError,
    NotPositiveDefiniteError,
    OriginSingularityError,
    PartitionError,
    RankDeficientConstraintsError,
    ScenarioError,
    SingularKktError,
    SingularSchurError,
    SplitMheError,
)
from .model import (
    NoiseSpec,
    SystemModel,
    fd_check,
    gaussian_draws,
    jacobians,
    make_linear_model,
    observe,
    robot_model,
    rollout,
    step_dynamics,
)
from .problem import (
    MheInstance,
    Partition,
    SubProblem,
    build_partition,
    centralized_kkt_residual,
    centralized_objective,
    coupling_residual,
    eval_constraints,
    eval_residual_stack,
    extract_trajectory,
    lift_initial_guess,
    split_instance,
)
from .qp_core import (
    QpBlock,
    QpSolution,
    dense_kkt_oracle,
    kkt_residual_qp,
    schur_terms,
    solve_coupled_qp,
)
from .local_nlp import (
    LocalSolveConfig,
    LocalSolveResult,
    SensitivityPair,
    first_order_conditions,
    kkt_residual,
    lagrangian_hessian,
    sensitivity_matrices,
    solve_local_subproblem,
    tangent_predictor,
)
from .solvers import (
    ConvergenceRecord,
    IterateState,
    SolveResult,
    SolverConfig,
    run_centralized,
    run_distributed_sqp,
    run_gauss_newton_aladin,
    run_sensitivity_aladin,
    solve,
    termination_check,
)
from .harness import (
    Scenario,
    SweepRow,
    WindowOutcome,
    generate_scenario,
    load_scenario,
    run_receding_horizon,
    solve_window,
    sweep_subwindows,
    window_instance,
    write_scenario,
)

__version__ = "0.1.0"
