//! A small declarative probabilistic-programming language.
//!
//! Programs declare data columns, parameters with priors, deterministic
//! quantities and likelihood statements. A program compiled against a
//! [`DataTable`] becomes a differentiable log density over an unconstrained
//! parameter vector (see [`CompiledModel`]).

mod ast;
mod compile;
mod data;
mod dist;
mod eval;
mod parse;
mod sample;

use thiserror::Error;

use crate::expr::{Pos, SyntaxError};

pub use ast::{
    DataDecl, DeterministicDecl, DistributionSpec, ElemType, Family, Likelihood, ModelProgram, ParamDecl, Shape, Stmt,
    Support,
};
pub use compile::{CompiledModel, ParamSlot, Transform};
pub use data::DataTable;
pub use parse::parse_model;
pub use sample::{posterior_predictive, sample_prior, PredictiveSummary, PriorDraw};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: unknown distribution `{name}`")]
    UnknownDistribution { name: String, pos: Pos },
    #[error("{pos}: undefined identifier `{name}`")]
    Undefined { name: String, pos: Pos },
    #[error("{pos}: shape mismatch: {message}")]
    ShapeMismatch { message: String, pos: Pos },
    #[error("{pos}: {message}")]
    Invalid { message: String, pos: Pos },
    #[error("data error: {0}")]
    Data(String),
    #[error("prior of `{name}` is improper or too diffuse to simulate from ({reason}); supply a fixed value instead")]
    DiffusePrior { name: String, reason: String },
    #[error("numerical error: {0}")]
    Numeric(String),
}

impl ModelError {
    /// Source position, when the error refers to one.
    pub fn pos(&self) -> Option<Pos> {
        match self {
            ModelError::Syntax(e) => Some(e.pos),
            ModelError::UnknownDistribution { pos, .. }
            | ModelError::Undefined { pos, .. }
            | ModelError::ShapeMismatch { pos, .. }
            | ModelError::Invalid { pos, .. } => Some(*pos),
            _ => None,
        }
    }
}
