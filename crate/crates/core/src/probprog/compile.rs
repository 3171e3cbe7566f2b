//! Compilation of a program against data into a differentiable log density
//! over unconstrained coordinates.

use serde::{Deserialize, Serialize};

use super::ast::{ElemType, Family, ModelProgram, ParamDecl, Shape, Support};
use super::data::DataTable;
use super::dist::{log_density, valid_observation, Arg};
use super::eval::{eval_dist_args, walk, Arith, Bound, Env, TArg, TVal, F64};
use super::ModelError;
use crate::autodiff::{Evaluation, Gradient, Scratch, Tape, TapeBuilder};

/// Bijection from an unconstrained coordinate to a parameter's support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// `x = exp(u)`.
    Log,
    /// `x = lo + (hi - lo) * logistic(u)`; bounds come from the prior's first
    /// two arguments, which may depend on earlier parameters.
    Interval,
    /// `x = logistic(u)`.
    Logit,
}

impl Transform {
    fn for_family(f: Family) -> Transform {
        match f.support() {
            Support::Real => Transform::Identity,
            Support::Positive => Transform::Log,
            Support::Interval => Transform::Interval,
            Support::UnitInterval => Transform::Logit,
            Support::Discrete => unreachable!("discrete priors are rejected by the checker"),
        }
    }
}

/// Location of one declared parameter in the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub vector: bool,
    pub transform: Transform,
}

/// A program bound to a dataset. Immutable and shareable between threads.
///
/// The tape has outputs `[log joint, log prior (with Jacobian), loglik_1..n]`,
/// where `loglik_i` sums every likelihood statement's term for row `i`.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    program: ModelProgram,
    bound: Bound,
    slots: Vec<ParamSlot>,
    dim: usize,
    tape: Tape,
}

/// Resolves data declarations against the table. With `need_observed` off,
/// observed columns absent from the table are bound to NaN placeholders
/// (they are only read by likelihood statements).
pub(crate) fn bind(program: &ModelProgram, table: &DataTable, need_observed: bool) -> Result<Bound, ModelError> {
    let n = table.len();
    if n == 0 {
        return Err(ModelError::Data("dataset has no rows".into()));
    }
    let observed: Vec<&str> = program.likelihoods().map(|l| l.observed.as_str()).collect();
    let mut columns = Vec::new();
    for d in program.data_decls() {
        let col = match table.column(&d.column) {
            Some(c) => c.to_vec(),
            None if !need_observed && observed.contains(&d.name.as_str()) => vec![f64::NAN; n],
            None => {
                return Err(ModelError::Data(format!(
                    "column `{}` (for `{}`) not found; available: {}",
                    d.column,
                    d.name,
                    table.names.join(", ")
                )))
            }
        };
        if d.elem == ElemType::Int && col.iter().any(|v| v.fract() != 0.0) {
            return Err(ModelError::Data(format!("column `{}` must hold integers", d.column)));
        }
        columns.push((d.name.clone(), col));
    }
    let bound = Bound { n, columns };
    if need_observed {
        for l in program.likelihoods() {
            let col = bound.column(&l.observed);
            if let Some(v) = col.iter().find(|&&v| !valid_observation(l.dist.family, v)) {
                return Err(ModelError::Data(format!(
                    "value {v} in `{}` is outside the support of {}",
                    l.observed, l.dist.family
                )));
            }
        }
    }
    Ok(bound)
}

/// Constrains `u` for one parameter and returns its value and the prior
/// log density plus log-Jacobian.
pub(crate) fn transformed_param<B: Arith>(
    b: &mut B,
    decl: &ParamDecl,
    args: &[TArg<B::V>],
    len: Option<usize>,
    u: &[B::V],
) -> (TVal<B::V>, B::V) {
    let transform = Transform::for_family(decl.prior.family);
    let count = len.unwrap_or(1);
    let mut xs = Vec::with_capacity(count);
    let mut terms = Vec::with_capacity(count);
    for (i, &ui) in u.iter().enumerate().take(count) {
        let a: Vec<Arg<B::V>> = args.iter().map(|t| t.at(i)).collect();
        let (x, log_jac) = match transform {
            Transform::Identity => (ui, None),
            Transform::Log => (b.exp(ui), Some(ui)),
            Transform::Interval => {
                let lo = a[0].value(b);
                let hi = a[1].value(b);
                let w = b.sub(hi, lo);
                let s = b.logistic(ui);
                let ws = b.mul(w, s);
                let x = b.add(lo, ws);
                let lw = b.log(w);
                let j = logistic_log_jac(b, ui);
                (x, Some(b.add(lw, j)))
            }
            Transform::Logit => {
                let x = b.logistic(ui);
                (x, Some(logistic_log_jac(b, ui)))
            }
        };
        let lp = log_density(b, decl.prior.family, &a, x, None);
        terms.push(match log_jac {
            Some(j) => b.add(lp, j),
            None => lp,
        });
        xs.push(x);
    }
    let total = b.sum(&terms);
    let val = match len {
        None => TVal::Scalar(xs[0]),
        Some(_) => TVal::Vector(xs),
    };
    (val, total)
}

/// `log(s (1 - s))` for `s = logistic(u)`.
fn logistic_log_jac<B: Arith>(b: &mut B, u: B::V) -> B::V {
    let nu = b.neg(u);
    let a = b.softplus(nu);
    let c = b.softplus(u);
    let t = b.add(a, c);
    b.neg(t)
}

/// Per-row likelihood terms, summed over likelihood statements.
pub(crate) fn row_logliks<B: Arith>(
    b: &mut B,
    program: &ModelProgram,
    bound: &Bound,
    env: &Env<B::V>,
) -> Result<Vec<B::V>, ModelError> {
    let mut rows: Vec<Vec<B::V>> = vec![Vec::new(); bound.n];
    for l in program.likelihoods() {
        let args = eval_dist_args(b, &l.dist, env)?;
        let obs = bound.column(&l.observed);
        for (i, row) in rows.iter_mut().enumerate() {
            let a: Vec<Arg<B::V>> = args.iter().map(|t| t.at(i)).collect();
            let x = b.c(obs[i]);
            row.push(log_density(b, l.dist.family, &a, x, Some(obs[i])));
        }
    }
    Ok(rows.iter().map(|r| b.sum(r)).collect())
}

impl CompiledModel {
    pub fn new(program: &ModelProgram, table: &DataTable) -> Result<Self, ModelError> {
        let bound = bind(program, table, true)?;
        let mut slots = Vec::new();
        let mut dim = 0;
        for p in program.param_decls() {
            let len = match p.shape {
                Shape::Scalar => 1,
                Shape::Vector(_) => bound.n,
            };
            slots.push(ParamSlot {
                name: p.name.clone(),
                offset: dim,
                len,
                vector: p.shape != Shape::Scalar,
                transform: Transform::for_family(p.prior.family),
            });
            dim += len;
        }
        let mut tb = TapeBuilder::new();
        let u = tb.inputs(dim);
        let mut next = 0usize;
        let mut hook = |b: &mut TapeBuilder, decl: &ParamDecl, args: &[TArg<_>], len: Option<usize>| {
            let count = len.unwrap_or(1);
            let out = transformed_param(b, decl, args, len, &u[next..next + count]);
            next += count;
            Ok(out)
        };
        let (env, log_prior) = walk(&mut tb, program, &bound, &mut hook)?;
        let rows = row_logliks(&mut tb, program, &bound, &env)?;
        let lik = Arith::sum(&mut tb, &rows);
        let joint = Arith::add(&mut tb, log_prior, lik);
        let mut outputs = vec![joint, log_prior];
        outputs.extend(rows);
        let tape = tb.finish_many(&outputs);
        Ok(Self { program: program.clone(), bound, slots, dim, tape })
    }

    pub fn program(&self) -> &ModelProgram {
        &self.program
    }

    pub(crate) fn bound(&self) -> &Bound {
        &self.bound
    }

    /// Number of unconstrained coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_observations(&self) -> usize {
        self.bound.n
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Flat parameter names: `mu`, `theta[1]`, `theta[2]`, ...
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for s in &self.slots {
            if s.vector {
                out.extend((1..=s.len).map(|i| format!("{}[{i}]", s.name)));
            } else {
                out.push(s.name.clone());
            }
        }
        out
    }

    /// Log joint with the domain-error flag.
    pub fn evaluate(&self, u: &[f64]) -> Evaluation {
        self.tape.evaluate(u)
    }

    /// Log joint density up to the evidence; NaN when a domain error occurs.
    pub fn log_joint(&self, u: &[f64]) -> f64 {
        let e = self.evaluate(u);
        if e.domain_error.is_some() {
            f64::NAN
        } else {
            e.value
        }
    }

    pub fn gradient(&self, u: &[f64]) -> Gradient {
        self.tape.gradient(u)
    }

    pub fn gradient_with(&self, u: &[f64], scratch: &mut Scratch) -> Gradient {
        self.tape.gradient_with(u, scratch)
    }

    /// Prior log density (constrained space) plus the log-Jacobian.
    pub fn log_prior(&self, u: &[f64]) -> f64 {
        let mut s = Scratch::new();
        self.tape.forward(u, &mut s);
        self.tape.output_value(&s, 1)
    }

    /// One log-likelihood term per data row.
    pub fn pointwise_loglik(&self, u: &[f64]) -> Vec<f64> {
        let mut s = Scratch::new();
        self.pointwise_loglik_with(u, &mut s)
    }

    pub fn pointwise_loglik_with(&self, u: &[f64], s: &mut Scratch) -> Vec<f64> {
        self.tape.forward(u, s);
        (0..self.bound.n).map(|i| self.tape.output_value(s, 2 + i)).collect()
    }

    /// Maps unconstrained coordinates to parameter values (same layout).
    pub fn constrain(&self, u: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(u.len())?;
        let mut next = 0usize;
        let mut hook = |b: &mut F64, decl: &ParamDecl, args: &[TArg<f64>], len: Option<usize>| {
            let count = len.unwrap_or(1);
            let out = transformed_param(b, decl, args, len, &u[next..next + count]);
            next += count;
            Ok(out)
        };
        let (env, _) = walk(&mut F64, &self.program, &self.bound, &mut hook)?;
        Ok(self.flatten(&env))
    }

    /// Inverse of [`CompiledModel::constrain`]. Errors when a value lies
    /// outside its prior's support.
    pub fn unconstrain(&self, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(theta.len())?;
        let mut u = vec![0.0; self.dim];
        let mut next = 0usize;
        let mut hook = |_: &mut F64, decl: &ParamDecl, args: &[TArg<f64>], len: Option<usize>| {
            let count = len.unwrap_or(1);
            let transform = Transform::for_family(decl.prior.family);
            for i in 0..count {
                let x = theta[next + i];
                let v = match transform {
                    Transform::Identity => Some(x),
                    Transform::Log => (x > 0.0).then(|| x.ln()),
                    Transform::Interval => {
                        let lo = args[0].at(i).value(&mut F64);
                        let hi = args[1].at(i).value(&mut F64);
                        let s = (x - lo) / (hi - lo);
                        (s > 0.0 && s < 1.0).then(|| logit(s))
                    }
                    Transform::Logit => (x > 0.0 && x < 1.0).then(|| logit(x)),
                };
                u[next + i] = v.filter(|v| v.is_finite()).ok_or_else(|| {
                    ModelError::Numeric(format!("value {x} of `{}` is outside its prior support", decl.name))
                })?;
            }
            let vals = theta[next..next + count].to_vec();
            next += count;
            let val = match len {
                None => TVal::Scalar(vals[0]),
                Some(_) => TVal::Vector(vals),
            };
            Ok((val, 0.0))
        };
        walk(&mut F64, &self.program, &self.bound, &mut hook)?;
        Ok(u)
    }

    /// Environment built from constrained parameter values.
    pub(crate) fn env_from_constrained(&self, theta: &[f64]) -> Result<Env<f64>, ModelError> {
        self.check_dim(theta.len())?;
        let mut next = 0usize;
        let mut hook = |_: &mut F64, _: &ParamDecl, _: &[TArg<f64>], len: Option<usize>| {
            let count = len.unwrap_or(1);
            let vals = theta[next..next + count].to_vec();
            next += count;
            Ok((
                match len {
                    None => TVal::Scalar(vals[0]),
                    Some(_) => TVal::Vector(vals),
                },
                0.0,
            ))
        };
        Ok(walk(&mut F64, &self.program, &self.bound, &mut hook)?.0)
    }

    fn flatten(&self, env: &Env<f64>) -> Vec<f64> {
        self.slots.iter().flat_map(|s| env[&s.name].flatten()).collect()
    }

    fn check_dim(&self, got: usize) -> Result<(), ModelError> {
        if got != self.dim {
            return Err(ModelError::Numeric(format!("expected {} coordinates, got {got}", self.dim)));
        }
        Ok(())
    }
}

fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

#[cfg(test)]
mod tests {
    use super::super::parse_model;
    use super::*;

    fn one_obs(src: &str) -> CompiledModel {
        let t = DataTable::from_pairs("d", &[("y", &[0.0])]).unwrap();
        CompiledModel::new(&parse_model(src).unwrap(), &t).unwrap()
    }

    #[test]
    fn standard_normal_prior_at_zero() {
        let m = one_obs("model m {\n data y: vector[N]\n param x ~ Normal(0, 1)\n y ~ Normal(x, 1)\n}");
        assert!((m.log_prior(&[0.0]) - -0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn half_normal_prior_includes_jacobian() {
        let m = one_obs("model m {\n data y: vector[N]\n param s ~ HalfNormal(1)\n y ~ Normal(0, s)\n}");
        let expected = 2f64.ln() - 0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_prior(&[0.0]) - expected).abs() < 1e-12);
        assert!((expected - -0.72579).abs() < 1e-5);
    }

    #[test]
    fn normal_likelihood_at_mean() {
        let t = DataTable::from_pairs("d", &[("y", &[1.5, 1.5, 1.5])]).unwrap();
        let p = parse_model("model m {\n data y: vector[N]\n param mu ~ Normal(0, 1)\n y ~ Normal(mu, 2)\n}").unwrap();
        let m = CompiledModel::new(&p, &t).unwrap();
        let ll = m.pointwise_loglik(&[1.5]);
        let want = -(2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert_eq!(ll.len(), 3);
        assert!(ll.iter().all(|v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn uniform_bounds_from_earlier_params() {
        let t = DataTable::from_pairs("d", &[("y", &[0.3])]).unwrap();
        let p = parse_model(
            "model m {\n data y: vector[N]\n param a ~ Normal(0, 1)\n param b ~ Uniform(a, a + 2)\n y ~ Normal(b, 1)\n}",
        )
        .unwrap();
        let m = CompiledModel::new(&p, &t).unwrap();
        let theta = m.constrain(&[0.4, -1.1]).unwrap();
        assert!(theta[1] > 0.4 && theta[1] < 2.4);
        let u = m.unconstrain(&theta).unwrap();
        assert!((u[1] - -1.1).abs() < 1e-12);
        assert!(m.unconstrain(&[0.4, 3.0]).is_err());
    }

    #[test]
    fn missing_column_and_bad_support() {
        let p = parse_model("model m {\n data k: int[N]\n param r ~ Gamma(2, 1)\n k ~ Poisson(r)\n}").unwrap();
        let t = DataTable::from_pairs("d", &[("y", &[1.0])]).unwrap();
        assert!(matches!(CompiledModel::new(&p, &t), Err(ModelError::Data(_))));
        let t = DataTable::from_pairs("d", &[("k", &[1.5])]).unwrap();
        assert!(CompiledModel::new(&p, &t).is_err());
        let t = DataTable::from_pairs("d", &[("k", &[-1.0])]).unwrap();
        assert!(CompiledModel::new(&p, &t).is_err());
    }

    #[test]
    fn nan_is_flagged() {
        let t = DataTable::from_pairs("d", &[("y", &[0.3])]).unwrap();
        let p = parse_model("model m {\n data y: vector[N]\n param a ~ Normal(0, 1)\n y ~ Normal(0, a)\n}").unwrap();
        let m = CompiledModel::new(&p, &t).unwrap();
        assert!(m.log_joint(&[-1.0]).is_nan());
        assert!(m.log_joint(&[1.0]).is_finite());
    }

    #[test]
    fn logistic_helper_matches() {
        assert!((crate::autodiff::logistic(logit(0.3)) - 0.3).abs() < 1e-15);
    }
}
