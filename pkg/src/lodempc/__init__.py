"""Model predictive control by Gaussian-process inference for linear
time-invariant ODE systems.

The prior is a multi-output GP whose realizations satisfy dx/dt = A x + B u
exactly (built via Smith normal form of the system's operator matrix);
control synthesis is plain GP conditioning on the current state, soft box
constraints, past observations, and optional virtual reference points.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .controller import (
    ControllerConfig,
    ControllerState,
    PlantDivergenceError,
    StepDiagnostics,
    build_step_dataset,
    initial_dataset,
    make_d_con,
    make_d_init,
    make_d_past,
    make_d_v,
    mpc_step,
    posterior_from_trajectory,
    run_closed_loop,
)
from .gpcore import (
    DataPoint,
    Dataset,
    DatasetError,
    FactorizationError,
    PosteriorGp,
    assemble_gram,
    log_marginal_likelihood,
    optimize_hyperparams,
)
from .kernelops import (
    GaussPolyTerm,
    Hyperparams,
    OperatorKernel,
    apply_operator_pair,
    build_operator_kernel,
    se_kernel,
)
from .lodegp import (
    InfeasibleReferenceError,
    LinearSystem,
    LodeGpPrior,
    NonControllableSystemError,
    build_h,
    build_prior,
    controllability_check,
    steady_state_input,
)
from .metrics import constraint_violation, control_error
from .plant import ControlSignal, Plant, Trajectory, step_exact, step_rk4
from .polyalg import (
    Poly,
    PolyMatrix,
    SmithDecomposition,
    right_nullspace_columns,
    smith_normal_form,
)

__version__ = "0.1.0"
