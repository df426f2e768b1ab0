//! Answering workloads of linear counting queries under differential
//! privacy with the matrix mechanism: build or optimize a query strategy,
//! run the Laplace/Gaussian mechanisms, reconstruct counts by least squares,
//! and account for the exact error of every query — with independent
//! brute-force and Monte Carlo oracles to back the closed forms.

pub mod analysis;
pub mod error;
pub mod io;
pub mod matrix;
pub mod mechanism;
pub mod optimizer;
pub mod oracle;
pub mod strategy;
pub mod workload;

mod rng;

pub use analysis::{
    error_profile, max_error, profile_equivalent, query_error, strategy_from_profile,
    svb_sensitivity, total_error, ErrorProfile, ErrorReport,
};
pub use error::{Error, Result};
pub use matrix::{
    spectral, CountVector, QueryMatrix, SingularDecomposition, SpectralDecomposition,
};
pub use mechanism::{
    estimate_counts, gaussian_mechanism, laplace_mechanism, matrix_mechanism, NoisyAnswer,
    PrivacyParams,
};
pub use optimizer::{
    augment, auto_augment, l2_optimal_profile, min_error_descent, min_sensitivity,
    svb_optimal_strategy, trace_objective_gradient, OptimizeResult, OptimizerOptions,
};
pub use oracle::{
    haar_coefficient_scheme, haar_equivalence_check, least_squares_oracle, monte_carlo_error,
    range_sweep_errors, thm10_growth_check, GrowthKind, GrowthRow, GrowthTable, McReport,
};
pub use strategy::{
    decomposed_sensitivity, decomposed_strategy, eigen_summary, hierarchical_strategy,
    identity_strategy, wavelet_strategy, EigenSummary, Strategy, StrategyFamily,
};
pub use workload::{
    all_predicate_queries, all_range_queries, workload_reduce, WorkloadKind, WorkloadSpec,
};
