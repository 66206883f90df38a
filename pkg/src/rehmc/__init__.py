"""Trajectory-recycling MCMC: samplers that keep their intermediate states.

Hamiltonian samplers compute a full leapfrog trajectory but traditionally
keep one point per iteration.  This package implements kernels that subject
the intermediate states to their own accept tests (or tree-based selection)
and emit them as weighted posterior draws, plus the estimators and the
comparison harness needed to measure what that recycling buys.
"""

from .adapt import (
    CovarianceAccumulator,
    DualAveragingState,
    TuningResult,
    da_init,
    da_update,
    shrink_covariance,
    tune_chain,
)
from .baseline import CalderheadKernel, calderhead_iteration, window_offset
from .bench import (
    ConfigError,
    EssCell,
    ExperimentConfig,
    ExperimentResult,
    NumericalFailure,
    build_kernel,
    build_target,
    run_experiment,
    run_recycle_count_sweep,
    run_reference_chain,
    run_tuning_comparison,
    write_cells_csv,
    write_experiment_outputs,
)
from .estimators import (
    EstimatorError,
    choose_tau,
    esjd_score,
    ess_from_mse,
    gaussian_iid_mse,
    integrated_autocorr_time,
    mse,
    pca_statistics,
    power_iteration_top,
    weighted_mean,
    weighted_quantile,
    weighted_variance,
)
from .hmc import (
    ChainConfigError,
    ChainResult,
    ChainRngs,
    HmcKernel,
    IterationBatch,
    PathLengthDistribution,
    RecycledDraw,
    SubsetScheme,
    hmc_iteration_recycled,
    hmc_iteration_standard,
    run_chain,
)
from .integrator import DivergenceError, leapfrog_step, simulate_trajectory
from .nuts import (
    NutsKernel,
    NutsTree,
    RecycleStrategy,
    build_tree,
    draw_slice,
    draw_uniform_acceptable,
    nuts_iteration,
    recycle_evenly,
    uturn,
)
from .phase import MassMatrix, PhasePoint, make_phase_point, with_momentum
from .targets import (
    GaussianSpec,
    LogisticRegressionData,
    ReturnsSeries,
    TargetDensity,
    TargetError,
    build_logistic_design,
    load_logistic_csv,
    load_returns_csv,
    make_gaussian,
    make_log_gamma,
    make_logistic_model,
    make_sv_model,
)

__version__ = "0.1.0"
