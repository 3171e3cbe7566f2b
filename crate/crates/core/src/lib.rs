//! Automated statistical model discovery.
//!
//! The crate runs a propose / fit / criticize search loop over three model
//! families:
//!
//! * [`gp`]: compositional Gaussian-process kernels fitted by marginal likelihood,
//! * [`probprog`]: a small probabilistic-program DSL scored by PSIS-LOO after
//!   Hamiltonian Monte Carlo ([`inference`]),
//! * [`ode`]: mechanistic and hybrid neural ODEs trained by backpropagation
//!   through a fixed-step Runge-Kutta integrator.
//!
//! [`boxloop`] drives the search with pluggable proposers and critics, and
//! [`io`] holds configuration, datasets, reports and plots.

pub mod autodiff;
pub mod boxloop;
pub mod expr;
pub mod fixtures;
pub mod gp;
pub mod inference;
pub mod io;
pub mod ode;
pub mod optim;
pub mod probprog;
pub mod rng;
pub mod stats;

pub use autodiff::{Gradient, Tape, TapeBuilder, Var};
pub use boxloop::{
    Backend, CandidateProgram, CandidateStatus, CriticismState, CriticVariant, LoopConfig,
    RunRecord,
};
pub use gp::{GpFitResult, GpModel, KernelExpr, KernelKind, TimeSeriesDataset};
pub use inference::{PosteriorDraws, SamplerConfig, ScoreReport, Verdict};
pub use ode::{FitPlan, Mlp, OdeSpec, Trajectory};
pub use probprog::{DistributionSpec, ModelProgram};
pub use io::{Report, RunConfig};
