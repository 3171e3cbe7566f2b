//! Text format for ODE right-hand sides.
//!
//! ```text
//! # comment
//! param alpha = 0.9
//! mlp h(b, c) -> 1            # optional: width 4 depth 1
//! db/dt = alpha * b - beta * b * c
//! dc/dt = -gamma * c + delta * b * (c + 0.1 * h)
//! ```
//!
//! Right-hand sides may use the states, `t`, declared params and MLP
//! outputs (`h` when the slot has one output, `h[i]` 1-based otherwise).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::OdeError;
use crate::autodiff::{Tape, TapeBuilder, Var};
use crate::expr::{BinOp, Expr, Pos, SyntaxError, TokenKind, TokenStream};

pub const DEFAULT_WIDTH: usize = 4;
pub const DEFAULT_DEPTH: usize = 1;

/// Functions allowed in right-hand sides, with arity.
pub const FUNCTIONS: [(&str, usize); 9] = [
    ("exp", 1),
    ("log", 1),
    ("sqrt", 1),
    ("tanh", 1),
    ("logistic", 1),
    ("softplus", 1),
    ("sin", 1),
    ("cos", 1),
    ("pow", 2),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeParam {
    pub name: String,
    pub init: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSlot {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: usize,
    pub width: usize,
    pub depth: usize,
}

impl MlpSlot {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.inputs.len()];
        s.extend(std::iter::repeat_n(self.width, self.depth));
        s.push(self.outputs);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSpec {
    pub states: Vec<String>,
    /// One right-hand side per state, same order.
    pub rhs: Vec<Expr>,
    pub params: Vec<OdeParam>,
    pub mlps: Vec<MlpSlot>,
}

fn spec_err(pos: Pos, message: impl Into<String>) -> OdeError {
    OdeError::Spec { pos, message: message.into() }
}

impl OdeSpec {
    pub fn parse(src: &str) -> Result<Self, OdeError> {
        let mut ts = TokenStream::new(src)?;
        let mut spec = OdeSpec { states: vec![], rhs: vec![], params: vec![], mlps: vec![] };
        let mut rhs_pos = vec![];
        ts.skip_newlines();
        while ts.peek_kind() != &TokenKind::Eof {
            let (word, pos) = ts.expect_ident()?;
            match word.as_str() {
                "param" if matches!(ts.peek_kind(), TokenKind::Ident(_)) => {
                    let (name, _) = ts.expect_ident()?;
                    ts.expect_punct('=')?;
                    let e = ts.parse_expr()?;
                    let init = const_value(&e).ok_or_else(|| spec_err(pos, format!("initial value of `{name}` must be a number")))?;
                    spec.params.push(OdeParam { name, init });
                }
                "mlp" if matches!(ts.peek_kind(), TokenKind::Ident(_)) => {
                    let (name, _) = ts.expect_ident()?;
                    ts.expect_punct('(')?;
                    let mut inputs = vec![];
                    if !ts.at_punct(')') {
                        loop {
                            inputs.push(ts.expect_ident()?.0);
                            if !ts.eat_punct(',') {
                                break;
                            }
                        }
                    }
                    ts.expect_punct(')')?;
                    let t = ts.next();
                    if t.kind != TokenKind::Arrow {
                        return Err(SyntaxError::new(t.pos, "expected `->`").into());
                    }
                    let outputs = expect_count(&mut ts)?;
                    let (mut width, mut depth) = (DEFAULT_WIDTH, DEFAULT_DEPTH);
                    while let TokenKind::Ident(kw) = ts.peek_kind().clone() {
                        ts.next();
                        match kw.as_str() {
                            "width" => width = expect_count(&mut ts)?,
                            "depth" => depth = expect_count(&mut ts)?,
                            _ => return Err(spec_err(pos, format!("unknown mlp option `{kw}`"))),
                        }
                    }
                    spec.mlps.push(MlpSlot { name, inputs, outputs, width, depth });
                }
                w if w.len() > 1 && w.starts_with('d') && ts.at_punct('/') => {
                    ts.expect_punct('/')?;
                    ts.expect_keyword("dt")?;
                    ts.expect_punct('=')?;
                    spec.states.push(w[1..].to_string());
                    spec.rhs.push(ts.parse_expr()?);
                    rhs_pos.push(pos);
                }
                _ => return Err(spec_err(pos, format!("expected `param`, `mlp` or `d<state>/dt`, found `{word}`"))),
            }
            ts.expect_end_of_statement()?;
        }
        spec.validate(&rhs_pos)?;
        Ok(spec)
    }

    fn validate(&self, rhs_pos: &[Pos]) -> Result<(), OdeError> {
        let at = |i: usize| rhs_pos.get(i).copied().unwrap_or_default();
        if self.states.is_empty() {
            return Err(spec_err(Pos::default(), "no `d<state>/dt` equations"));
        }
        let mut seen = HashSet::new();
        for name in self.states.iter().chain(self.params.iter().map(|p| &p.name)).chain(self.mlps.iter().map(|m| &m.name)) {
            if name == "t" || !seen.insert(name.as_str()) {
                return Err(spec_err(Pos::default(), format!("`{name}` is declared twice or reserved")));
            }
        }
        for m in &self.mlps {
            if m.inputs.is_empty() || m.outputs == 0 || m.width == 0 {
                return Err(spec_err(Pos::default(), format!("mlp `{}` needs inputs, outputs and width", m.name)));
            }
            if let Some(bad) = m.inputs.iter().find(|i| !self.states.contains(i)) {
                return Err(spec_err(Pos::default(), format!("mlp `{}` input `{bad}` is not a state", m.name)));
            }
        }
        let mut used = HashSet::new();
        for (i, e) in self.rhs.iter().enumerate() {
            self.check_expr(e, at(i), &mut used)?;
        }
        if let Some(m) = self.mlps.iter().find(|m| !used.contains(m.name.as_str())) {
            return Err(spec_err(Pos::default(), format!("mlp `{}` is never used", m.name)));
        }
        Ok(())
    }

    fn check_expr<'a>(&'a self, e: &'a Expr, line: Pos, used: &mut HashSet<&'a str>) -> Result<(), OdeError> {
        match e {
            Expr::Num(_) => Ok(()),
            Expr::Ident(n, p) => {
                if n == "t" || self.states.contains(n) || self.params.iter().any(|q| &q.name == n) {
                    return Ok(());
                }
                match self.mlps.iter().find(|m| &m.name == n) {
                    Some(m) if m.outputs == 1 => {
                        used.insert(n);
                        Ok(())
                    }
                    Some(m) => Err(spec_err(*p, format!("`{n}` has {} outputs; index it as `{n}[i]`", m.outputs))),
                    None => Err(spec_err(*p, format!("undefined symbol `{n}`"))),
                }
            }
            Expr::Index(n, i, p) => match self.mlps.iter().find(|m| &m.name == n) {
                Some(m) if (1..=m.outputs).contains(i) => {
                    used.insert(n);
                    Ok(())
                }
                Some(m) => Err(spec_err(*p, format!("`{n}[{i}]` out of range 1..={}", m.outputs))),
                None => Err(spec_err(*p, format!("`{n}` is not an mlp"))),
            },
            Expr::Call(f, args, p) => {
                match FUNCTIONS.iter().find(|(g, _)| g == f) {
                    Some((_, k)) if *k == args.len() => {}
                    Some((_, k)) => return Err(spec_err(*p, format!("`{f}` takes {k} argument(s)"))),
                    None => return Err(spec_err(*p, format!("unknown function `{f}`"))),
                }
                args.iter().try_for_each(|a| self.check_expr(a, line, used))
            }
            Expr::Neg(a) => self.check_expr(a, line, used),
            Expr::Binary(_, a, b) => {
                self.check_expr(a, line, used)?;
                self.check_expr(b, line, used)
            }
        }
    }

    /// Total MLP output count.
    pub fn num_mlp_outputs(&self) -> usize {
        self.mlps.iter().map(|m| m.outputs).sum()
    }

    /// Tape with inputs `[states.., t, params.., mlp outputs..]` and one
    /// output per state derivative.
    pub fn compile(&self) -> Tape {
        let mut b = TapeBuilder::new();
        let states = b.inputs(self.states.len());
        let t = b.input();
        let params = b.inputs(self.params.len());
        let outs = b.inputs(self.num_mlp_outputs());
        let mut env: Vec<(&str, Option<usize>, Var)> = Vec::new();
        for (n, v) in self.states.iter().zip(&states) {
            env.push((n, None, *v));
        }
        env.push(("t", None, t));
        for (p, v) in self.params.iter().zip(&params) {
            env.push((&p.name, None, *v));
        }
        let mut k = 0;
        for m in &self.mlps {
            for i in 0..m.outputs {
                env.push((&m.name, Some(i + 1), outs[k]));
                if m.outputs == 1 {
                    env.push((&m.name, None, outs[k]));
                }
                k += 1;
            }
        }
        let rhs: Vec<Var> = self.rhs.iter().map(|e| build(&mut b, e, &env)).collect();
        b.finish_many(&rhs)
    }
}

fn expect_count(ts: &mut TokenStream) -> Result<usize, OdeError> {
    let t = ts.next();
    match t.kind {
        TokenKind::Number(v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize),
        _ => Err(SyntaxError::new(t.pos, "expected a positive integer").into()),
    }
}

fn const_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Neg(a) => const_value(a).map(|v| -v),
        _ => None,
    }
}

fn build(b: &mut TapeBuilder, e: &Expr, env: &[(&str, Option<usize>, Var)]) -> Var {
    let lookup = |n: &str, i: Option<usize>| env.iter().find(|(m, j, _)| *m == n && *j == i).map(|x| x.2).expect("validated");
    match e {
        Expr::Num(v) => b.constant(*v),
        Expr::Ident(n, _) => lookup(n, None),
        Expr::Index(n, i, _) => lookup(n, Some(*i)),
        Expr::Neg(a) => {
            let x = build(b, a, env);
            b.neg(x)
        }
        Expr::Binary(op, l, r) => {
            if let (BinOp::Pow, Some(c)) = (op, const_value(r)) {
                let x = build(b, l, env);
                return b.powf(x, c);
            }
            let (x, y) = (build(b, l, env), build(b, r, env));
            match op {
                BinOp::Add => b.add(x, y),
                BinOp::Sub => b.sub(x, y),
                BinOp::Mul => b.mul(x, y),
                BinOp::Div => b.div(x, y),
                BinOp::Pow => b.pow(x, y),
            }
        }
        Expr::Call(f, args, _) => {
            let a: Vec<Var> = args.iter().map(|x| build(b, x, env)).collect();
            match f.as_str() {
                "exp" => b.exp(a[0]),
                "log" => b.log(a[0]),
                "sqrt" => b.sqrt(a[0]),
                "tanh" => b.tanh(a[0]),
                "logistic" => b.logistic(a[0]),
                "softplus" => b.softplus(a[0]),
                "sin" => b.sin(a[0]),
                "cos" => b.cos(a[0]),
                "pow" => b.pow(a[0], a[1]),
                _ => unreachable!("validated"),
            }
        }
    }
}

impl fmt::Display for OdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(f, "param {} = {:?}", p.name, p.init)?;
        }
        for m in &self.mlps {
            writeln!(f, "mlp {}({}) -> {} width {} depth {}", m.name, m.inputs.join(", "), m.outputs, m.width, m.depth)?;
        }
        for (s, e) in self.states.iter().zip(&self.rhs) {
            writeln!(f, "d{s}/dt = {e}")?;
        }
        Ok(())
    }
}
