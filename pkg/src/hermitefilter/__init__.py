"""Hermite spectral methods for the 1D forward Kolmogorov equation and a
real-time nonlinear filter built on them."""

from .basis import (
    AsymptoticProfile,
    BasisSpec,
    CoeffVector,
    QuadratureRule,
    ScalingChoice,
    Translated,
    choose_scaling,
    default_rule,
    differentiate,
    eval_functions,
    evaluate,
    gauss_hermite_rule,
    l2_error,
    l2_norm,
    moment_vectors,
    multiply_by_shifted_x,
    project,
    rebase,
    rebase_loss,
    sobolev_norm,
    truncation_error,
)
from .errors import (
    BankFormatError,
    DegenerateWeights,
    DomainExhausted,
    FilterDivergence,
    HermiteFilterError,
    LinearSolveError,
    ObservationOutlier,
    SolverBlowUp,
    ToleranceUnreachable,
)
from .fke import (
    CanonicalFke,
    GeneralFke,
    PolynomialPotential,
    Scheme,
    StepperConfig,
    assemble_generator,
    canonicalize,
    nlf_coefficients,
    operator_matrices,
    solve,
    solve_trajectory,
    step,
    well_posedness_check,
)
from .kernels import BACKEND
from .nlf import (
    FilterState,
    ObservationModel,
    Window,
    WindowBank,
    additive_noise_model,
    build_window_bank,
    correct,
    estimate_state,
    init_filter,
    maybe_shift_window,
    precompute_propagator,
    predict,
    run_online,
)
from .baseline import (
    ParticleCloud,
    Path,
    SimConfig,
    discrete_kalman,
    kalman_bucy,
    pf_step,
    rmse,
    run_pf,
    simulate_path,
)

__version__ = "0.1.0"
