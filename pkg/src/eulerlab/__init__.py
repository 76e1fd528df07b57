"""Explicit Euler for ODEs with rough, one-sided Lipschitz vector fields.

Field catalogue, local maximal functions on grids, Euler and reference
flows over quasi-Monte Carlo clouds, and convergence studies that compare
measured L^p errors with an explicit error bound.
"""
from .config import ConfigError, Diagnostic, ExperimentConfig, validate
from .convergence import (
    BoundConstants,
    ConstantsSettings,
    ConvergenceReport,
    ErrorSample,
    estimate_constants,
    fit_order,
    lp_error,
    recursion_bound,
    run_convergence_study,
    theoretical_bound,
)
from .fields import (
    FIELD_KINDS,
    FieldSpec,
    affine_field,
    constant_field,
    convolution_example,
    estimate_osl_constant,
    estimate_sup_norm,
    eval_field,
    grid_field,
    linear_field,
    make_convolution_field,
    power_field,
    rotation_field,
    zero_field,
)
from .grids import GridField, ScalarGrid, grid_from_function, load_grid, save_grid
from .integrator import (
    InitialCloud,
    TimeGrid,
    TrajectoryTable,
    compressibility_estimate,
    euler_flow,
    euler_step,
    make_cloud,
    push_forward_histogram,
    reference_flow,
)
from .maximal import (
    LemmaViolation,
    check_lp_bound,
    check_pointwise_lipschitz,
    gradient_magnitude,
    lemma_suite,
    local_maximal_function,
    lp_ratio,
    pairs_within,
)
from .sampling import DEFAULT_SEED, ball_samples, halton

__version__ = "0.1.0"
