use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Pos};

/// Distribution families available to priors and likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Normal,
    HalfNormal,
    Uniform,
    Exponential,
    Beta,
    Gamma,
    LogNormal,
    HalfCauchy,
    StudentT,
    Binomial,
    Poisson,
    BetaBinomial,
    Bernoulli,
}

/// Support of a family, which fixes the unconstraining bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    Positive,
    /// Bounds given by the first two arguments (Uniform) or fixed (0, 1).
    Interval,
    UnitInterval,
    Discrete,
}

impl Family {
    pub const ALL: [Family; 13] = [
        Family::Normal,
        Family::HalfNormal,
        Family::Uniform,
        Family::Exponential,
        Family::Beta,
        Family::Gamma,
        Family::LogNormal,
        Family::HalfCauchy,
        Family::StudentT,
        Family::Binomial,
        Family::Poisson,
        Family::BetaBinomial,
        Family::Bernoulli,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "Normal",
            Family::HalfNormal => "HalfNormal",
            Family::Uniform => "Uniform",
            Family::Exponential => "Exponential",
            Family::Beta => "Beta",
            Family::Gamma => "Gamma",
            Family::LogNormal => "LogNormal",
            Family::HalfCauchy => "HalfCauchy",
            Family::StudentT => "StudentT",
            Family::Binomial => "Binomial",
            Family::Poisson => "Poisson",
            Family::BetaBinomial => "BetaBinomial",
            Family::Bernoulli => "Bernoulli",
        }
    }

    pub fn from_name(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Argument names, in call order.
    pub fn arg_names(self) -> &'static [&'static str] {
        match self {
            Family::Normal | Family::LogNormal => &["mu", "sigma"],
            Family::HalfNormal => &["sigma"],
            Family::Uniform => &["lower", "upper"],
            Family::Exponential => &["rate"],
            Family::Beta => &["alpha", "beta"],
            Family::Gamma => &["shape", "rate"],
            Family::HalfCauchy => &["scale"],
            Family::StudentT => &["nu", "mu", "sigma"],
            Family::Binomial => &["n", "p"],
            Family::Poisson => &["rate"],
            Family::BetaBinomial => &["n", "alpha", "beta"],
            Family::Bernoulli => &["p"],
        }
    }

    pub fn arity(self) -> usize {
        self.arg_names().len()
    }

    pub fn support(self) -> Support {
        match self {
            Family::Normal | Family::StudentT => Support::Real,
            Family::HalfNormal | Family::Exponential | Family::Gamma | Family::LogNormal | Family::HalfCauchy => {
                Support::Positive
            }
            Family::Uniform => Support::Interval,
            Family::Beta => Support::UnitInterval,
            Family::Binomial | Family::Poisson | Family::BetaBinomial | Family::Bernoulli => Support::Discrete,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A distribution with argument expressions.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub family: Family,
    pub args: Vec<Expr>,
    pub pos: Pos,
}

impl PartialEq for DistributionSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.args == other.args
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.family)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Static shape: a scalar, or a vector whose length is the named size symbol.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Vector(String),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => f.write_str("scalar"),
            Shape::Vector(n) => write!(f, "vector[{n}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemType {
    Real,
    Int,
}

#[derive(Debug, Clone)]
pub struct DataDecl {
    pub name: String,
    pub elem: ElemType,
    pub size: String,
    /// Dataset column bound to this name.
    pub column: String,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub prior: DistributionSpec,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub struct DeterministicDecl {
    pub name: String,
    pub expr: Expr,
    pub shape: Shape,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub struct Likelihood {
    pub observed: String,
    pub dist: DistributionSpec,
    pub pos: Pos,
}

/// Statements in source order.
#[derive(Debug, Clone)]
pub enum Stmt {
    Data(DataDecl),
    Param(ParamDecl),
    Deterministic(DeterministicDecl),
    Likelihood(Likelihood),
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Stmt::Data(a), Stmt::Data(b)) => {
                a.name == b.name && a.elem == b.elem && a.size == b.size && a.column == b.column
            }
            (Stmt::Param(a), Stmt::Param(b)) => a.name == b.name && a.shape == b.shape && a.prior == b.prior,
            (Stmt::Deterministic(a), Stmt::Deterministic(b)) => a.name == b.name && a.expr == b.expr,
            (Stmt::Likelihood(a), Stmt::Likelihood(b)) => a.observed == b.observed && a.dist == b.dist,
            _ => false,
        }
    }
}

/// Parsed and checked probabilistic program.
#[derive(Debug, Clone)]
pub struct ModelProgram {
    pub name: String,
    pub stmts: Vec<Stmt>,
    pub source: String,
}

impl PartialEq for ModelProgram {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.stmts == other.stmts
    }
}

impl ModelProgram {
    pub fn data_decls(&self) -> impl Iterator<Item = &DataDecl> {
        self.stmts.iter().filter_map(|s| match s {
            Stmt::Data(d) => Some(d),
            _ => None,
        })
    }

    pub fn param_decls(&self) -> impl Iterator<Item = &ParamDecl> {
        self.stmts.iter().filter_map(|s| match s {
            Stmt::Param(d) => Some(d),
            _ => None,
        })
    }

    pub fn deterministic_decls(&self) -> impl Iterator<Item = &DeterministicDecl> {
        self.stmts.iter().filter_map(|s| match s {
            Stmt::Deterministic(d) => Some(d),
            _ => None,
        })
    }

    pub fn likelihoods(&self) -> impl Iterator<Item = &Likelihood> {
        self.stmts.iter().filter_map(|s| match s {
            Stmt::Likelihood(d) => Some(d),
            _ => None,
        })
    }

    pub fn num_params(&self) -> usize {
        self.param_decls().count()
    }
}

impl fmt::Display for ModelProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {} {{", self.name)?;
        for s in &self.stmts {
            match s {
                Stmt::Data(d) => {
                    let ty = match d.elem {
                        ElemType::Real => "vector",
                        ElemType::Int => "int",
                    };
                    write!(f, "  data {}: {ty}[{}]", d.name, d.size)?;
                    if d.column != d.name {
                        write!(f, " from {}", d.column)?;
                    }
                    writeln!(f)?;
                }
                Stmt::Param(p) => match &p.shape {
                    Shape::Scalar => writeln!(f, "  param {} ~ {}", p.name, p.prior)?,
                    Shape::Vector(n) => writeln!(f, "  param {}[{n}] ~ {}", p.name, p.prior)?,
                },
                Stmt::Deterministic(d) => writeln!(f, "  {} = {}", d.name, d.expr)?,
                Stmt::Likelihood(l) => writeln!(f, "  {} ~ {}", l.observed, l.dist)?,
            }
        }
        write!(f, "}}")
    }
}
