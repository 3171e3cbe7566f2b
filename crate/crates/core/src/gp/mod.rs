//! Compositional Gaussian-process kernel search.
//!
//! Kernels are trees of base kernels under `+` and `*` ([`KernelExpr`]);
//! hyperparameters live in log space and are fitted by Adam on the exact log
//! marginal likelihood with analytic gradients.

mod data;
mod fit;
mod kernel;
mod parse;
mod search;

use thiserror::Error;

pub use data::{Normalizer, SeriesSplit, TimeSeriesDataset};
pub use fit::{
    fit_gp, lml_with_gradient, log_marginal_likelihood, mae, predict, sample_prior, FitOptions, GpFitResult,
    GpModel, JITTER_LADDER, NOISE_FLOOR, PERIOD_FRACTIONS,
};
pub use kernel::{BaseKernel, KernelExpr, KernelKind, Mutation};
pub use parse::{parse_kernel, KernelParseError};
pub use search::{
    greedy_search, periodic_baseline, spectral_mixture_fit, GreedyOptions, GreedyResult, GreedyStep,
    SearchCriterion,
};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite after jitter escalation")]
    Cholesky,
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("empty dataset")]
    EmptyData,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{kind} takes {expected} parameters, got {got}")]
    ParamCount { kind: KernelKind, expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("subtree index {site} out of range ({subtrees} subtrees)")]
    InvalidSite { site: usize, subtrees: usize },
    #[error("replacement target at site {site} is not a base kernel")]
    ReplaceNonLeaf { site: usize },
    #[error("empty base kernel set")]
    EmptyBaseSet,
    #[error(transparent)]
    Parse(#[from] KernelParseError),
    #[error("dataset: {0}")]
    Data(String),
}
