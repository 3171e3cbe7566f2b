//! Expression evaluation over an arithmetic backend: plain `f64` for
//! simulation, or a tape builder when a differentiable graph is wanted.

use std::collections::HashMap;

use super::ast::{ModelProgram, ParamDecl, Shape, Stmt};
use super::dist::Arg;
use super::ModelError;
use crate::autodiff::{self, TapeBuilder, Var};
use crate::expr::{BinOp, Expr, Pos};

pub(crate) trait Arith {
    type V: Copy;
    fn c(&mut self, x: f64) -> Self::V;
    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn pow(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn powf(&mut self, a: Self::V, p: f64) -> Self::V;
    fn neg(&mut self, a: Self::V) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    fn log(&mut self, a: Self::V) -> Self::V;
    fn sqrt(&mut self, a: Self::V) -> Self::V;
    fn tanh(&mut self, a: Self::V) -> Self::V;
    fn logistic(&mut self, a: Self::V) -> Self::V;
    fn softplus(&mut self, a: Self::V) -> Self::V;
    fn ln_gamma(&mut self, a: Self::V) -> Self::V;

    fn sum(&mut self, xs: &[Self::V]) -> Self::V {
        match xs.split_first() {
            None => self.c(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &x| self.add(acc, x)),
        }
    }

    fn mul_c(&mut self, a: Self::V, k: f64) -> Self::V {
        let k = self.c(k);
        self.mul(a, k)
    }

    fn add_c(&mut self, a: Self::V, k: f64) -> Self::V {
        let k = self.c(k);
        self.add(a, k)
    }
}

/// Plain floating-point evaluation.
pub(crate) struct F64;

impl Arith for F64 {
    type V = f64;
    fn c(&mut self, x: f64) -> f64 {
        x
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn pow(&mut self, a: f64, b: f64) -> f64 {
        a.powf(b)
    }
    fn powf(&mut self, a: f64, p: f64) -> f64 {
        a.powf(p)
    }
    fn neg(&mut self, a: f64) -> f64 {
        -a
    }
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    fn log(&mut self, a: f64) -> f64 {
        a.ln()
    }
    fn sqrt(&mut self, a: f64) -> f64 {
        a.sqrt()
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn logistic(&mut self, a: f64) -> f64 {
        autodiff::logistic(a)
    }
    fn softplus(&mut self, a: f64) -> f64 {
        autodiff::softplus(a)
    }
    fn ln_gamma(&mut self, a: f64) -> f64 {
        if a > 0.0 {
            statrs::function::gamma::ln_gamma(a)
        } else {
            f64::NAN
        }
    }
}

impl Arith for TapeBuilder {
    type V = Var;
    fn c(&mut self, x: f64) -> Var {
        self.constant(x)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        TapeBuilder::add(self, a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        TapeBuilder::sub(self, a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        TapeBuilder::mul(self, a, b)
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        TapeBuilder::div(self, a, b)
    }
    fn pow(&mut self, a: Var, b: Var) -> Var {
        TapeBuilder::pow(self, a, b)
    }
    fn powf(&mut self, a: Var, p: f64) -> Var {
        TapeBuilder::powf(self, a, p)
    }
    fn neg(&mut self, a: Var) -> Var {
        TapeBuilder::neg(self, a)
    }
    fn exp(&mut self, a: Var) -> Var {
        TapeBuilder::exp(self, a)
    }
    fn log(&mut self, a: Var) -> Var {
        TapeBuilder::log(self, a)
    }
    fn sqrt(&mut self, a: Var) -> Var {
        TapeBuilder::sqrt(self, a)
    }
    fn tanh(&mut self, a: Var) -> Var {
        TapeBuilder::tanh(self, a)
    }
    fn logistic(&mut self, a: Var) -> Var {
        TapeBuilder::logistic(self, a)
    }
    fn softplus(&mut self, a: Var) -> Var {
        TapeBuilder::softplus(self, a)
    }
    fn ln_gamma(&mut self, a: Var) -> Var {
        TapeBuilder::ln_gamma(self, a)
    }
}

/// A scalar or a length-n vector.
#[derive(Debug, Clone)]
pub(crate) enum TVal<V> {
    Scalar(V),
    Vector(Vec<V>),
}

impl<V: Copy> TVal<V> {
    pub fn at(&self, i: usize) -> V {
        match self {
            TVal::Scalar(v) => *v,
            TVal::Vector(xs) => xs[i],
        }
    }

    pub fn flatten(&self) -> Vec<V> {
        match self {
            TVal::Scalar(v) => vec![*v],
            TVal::Vector(xs) => xs.clone(),
        }
    }

    fn map<B: Arith<V = V>>(self, b: &mut B, f: impl Fn(&mut B, V) -> V) -> TVal<V> {
        match self {
            TVal::Scalar(v) => TVal::Scalar(f(b, v)),
            TVal::Vector(xs) => TVal::Vector(xs.into_iter().map(|v| f(b, v)).collect()),
        }
    }
}

fn zip<B: Arith>(
    b: &mut B,
    x: TVal<B::V>,
    y: TVal<B::V>,
    f: impl Fn(&mut B, B::V, B::V) -> B::V,
) -> TVal<B::V> {
    match (x, y) {
        (TVal::Scalar(p), TVal::Scalar(q)) => TVal::Scalar(f(b, p, q)),
        (TVal::Scalar(p), TVal::Vector(qs)) => TVal::Vector(qs.into_iter().map(|q| f(b, p, q)).collect()),
        (TVal::Vector(ps), TVal::Scalar(q)) => TVal::Vector(ps.into_iter().map(|p| f(b, p, q)).collect()),
        // Vector lengths all equal the dataset length (checked statically).
        (TVal::Vector(ps), TVal::Vector(qs)) => TVal::Vector(ps.into_iter().zip(qs).map(|(p, q)| f(b, p, q)).collect()),
    }
}

pub(crate) type Env<V> = HashMap<String, TVal<V>>;

pub(crate) fn eval<B: Arith>(b: &mut B, e: &Expr, env: &Env<B::V>) -> Result<TVal<B::V>, ModelError> {
    Ok(match e {
        Expr::Num(v) => TVal::Scalar(b.c(*v)),
        Expr::Ident(n, pos) => lookup(env, n, *pos)?.clone(),
        Expr::Index(n, i, pos) => match lookup(env, n, *pos)? {
            TVal::Vector(xs) if *i >= 1 && *i <= xs.len() => TVal::Scalar(xs[i - 1]),
            TVal::Vector(xs) => {
                return Err(ModelError::Invalid {
                    pos: *pos,
                    message: format!("index {i} out of range for `{n}` of length {}", xs.len()),
                })
            }
            TVal::Scalar(_) => {
                return Err(ModelError::ShapeMismatch { pos: *pos, message: format!("`{n}` is a scalar") })
            }
        },
        Expr::Neg(a) => eval(b, a, env)?.map(b, |b, v| b.neg(v)),
        Expr::Binary(op, l, r) => {
            let x = eval(b, l, env)?;
            // Constant exponents skip the log-based power rule.
            if let (BinOp::Pow, Expr::Num(p)) = (op, r.as_ref()) {
                let p = *p;
                return Ok(x.map(b, move |b, v| b.powf(v, p)));
            }
            let y = eval(b, r, env)?;
            match op {
                BinOp::Add => zip(b, x, y, |b, p, q| b.add(p, q)),
                BinOp::Sub => zip(b, x, y, |b, p, q| b.sub(p, q)),
                BinOp::Mul => zip(b, x, y, |b, p, q| b.mul(p, q)),
                BinOp::Div => zip(b, x, y, |b, p, q| b.div(p, q)),
                BinOp::Pow => zip(b, x, y, |b, p, q| b.pow(p, q)),
            }
        }
        Expr::Call(name, args, pos) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval(b, a, env)?);
            }
            let mut it = vals.into_iter();
            let a = it.next().ok_or(ModelError::Invalid { pos: *pos, message: format!("`{name}` needs an argument") })?;
            match name.as_str() {
                "exp" => a.map(b, |b, v| b.exp(v)),
                "log" => a.map(b, |b, v| b.log(v)),
                "sqrt" => a.map(b, |b, v| b.sqrt(v)),
                "tanh" => a.map(b, |b, v| b.tanh(v)),
                "logistic" | "inv_logit" => a.map(b, |b, v| b.logistic(v)),
                "softplus" => a.map(b, |b, v| b.softplus(v)),
                "pow" => {
                    let y = it.next().ok_or(ModelError::Invalid { pos: *pos, message: "pow needs 2 arguments".into() })?;
                    zip(b, a, y, |b, p, q| b.pow(p, q))
                }
                _ => return Err(ModelError::Undefined { name: name.clone(), pos: *pos }),
            }
        }
    })
}

fn lookup<'a, V>(env: &'a Env<V>, n: &str, pos: Pos) -> Result<&'a TVal<V>, ModelError> {
    env.get(n).ok_or(ModelError::Undefined { name: n.to_string(), pos })
}

/// Evaluates distribution arguments. A probability written as
/// `logistic(z)` (or a Poisson rate written as `exp(z)`) is passed on in
/// its linear-predictor form, which keeps the log density stable.
pub(crate) fn eval_dist_args<B: Arith>(
    b: &mut B,
    spec: &super::ast::DistributionSpec,
    env: &Env<B::V>,
) -> Result<Vec<TArg<B::V>>, ModelError> {
    use super::ast::Family;
    let mut out = Vec::with_capacity(spec.args.len());
    for (name, e) in spec.family.arg_names().iter().zip(&spec.args) {
        let inner = match e {
            Expr::Call(f, a, _) if a.len() == 1 => Some((f.as_str(), &a[0])),
            _ => None,
        };
        let v = match (spec.family, *name, inner) {
            (Family::Binomial | Family::Bernoulli, "p", Some(("logistic" | "inv_logit", z))) => {
                TArg::Logit(eval(b, z, env)?)
            }
            (Family::Poisson, "rate", Some(("exp", z))) => TArg::Log(eval(b, z, env)?),
            _ => TArg::Plain(eval(b, e, env)?),
        };
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub(crate) enum TArg<V> {
    Plain(TVal<V>),
    Logit(TVal<V>),
    Log(TVal<V>),
}

impl<V: Copy> TArg<V> {
    pub fn at(&self, i: usize) -> Arg<V> {
        match self {
            TArg::Plain(t) => Arg::Plain(t.at(i)),
            TArg::Logit(t) => Arg::Logit(t.at(i)),
            TArg::Log(t) => Arg::Log(t.at(i)),
        }
    }
}

/// Data bound to a program: every data declaration resolved to a column,
/// all of the common length `n`.
#[derive(Debug, Clone)]
pub(crate) struct Bound {
    pub n: usize,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Bound {
    pub fn column(&self, name: &str) -> &[f64] {
        &self.columns.iter().find(|(n, _)| n == name).expect("bound column").1
    }
}

/// Hook deciding the value of each parameter: given the declaration, its
/// evaluated prior arguments and its length (None for scalars), returns the
/// constrained value and its contribution to the log density.
pub(crate) type ParamHook<'h, B> = dyn FnMut(
        &mut B,
        &ParamDecl,
        &[TArg<<B as Arith>::V>],
        Option<usize>,
    ) -> Result<(TVal<<B as Arith>::V>, <B as Arith>::V), ModelError>
    + 'h;

/// Runs the program's data, parameter and deterministic statements.
/// Returns the environment and the summed parameter contributions.
pub(crate) fn walk<B: Arith>(
    b: &mut B,
    prog: &ModelProgram,
    data: &Bound,
    hook: &mut ParamHook<'_, B>,
) -> Result<(Env<B::V>, B::V), ModelError> {
    let mut env: Env<B::V> = HashMap::new();
    let mut terms = Vec::new();
    for s in &prog.stmts {
        match s {
            Stmt::Data(d) => {
                let col = data.column(&d.name);
                let v = col.iter().map(|&x| b.c(x)).collect();
                env.insert(d.name.clone(), TVal::Vector(v));
            }
            Stmt::Param(p) => {
                let args = eval_dist_args(b, &p.prior, &env)?;
                let len = match p.shape {
                    Shape::Scalar => None,
                    Shape::Vector(_) => Some(data.n),
                };
                let (val, lp) = hook(b, p, &args, len)?;
                terms.push(lp);
                env.insert(p.name.clone(), val);
            }
            Stmt::Deterministic(d) => {
                let v = eval(b, &d.expr, &env)?;
                env.insert(d.name.clone(), v);
            }
            Stmt::Likelihood(_) => {}
        }
    }
    let total = b.sum(&terms);
    Ok((env, total))
}
