//! Mechanistic and hybrid neural ODEs: spec format, RK4 integration with
//! exact discrete gradients, staged training and the LV / oscillator
//! benchmarks.

pub mod data;
pub mod fit;
pub mod lv;
pub mod mlp;
pub mod model;
pub mod oscillators;
pub mod spec;

pub use data::OdeDataset;
pub use fit::{fit_ode, test_mae, FitPlan, FitResult, Stage, TestError, Trainable};
pub use lv::{build_baselines, simulate_perturbed_lv, BaselineConfig, Baselines, FittedOde, LvParams, LvPreset};
pub use mlp::Mlp;
pub use model::{OdeModel, Trajectory};
pub use oscillators::{oscillator_suite, Oscillator, OscillatorFit};
pub use spec::{MlpSlot, OdeParam, OdeSpec};

use crate::expr::{Pos, SyntaxError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: {message}")]
    Spec { pos: Pos, message: String },
    #[error("data: {0}")]
    Data(String),
    #[error("{0}")]
    Invalid(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
}
