//! Tape-based reverse-mode automatic differentiation over scalar graphs.
//!
//! A [`Tape`] is built once with a [`TapeBuilder`] and is immutable afterwards.
//! Evaluation and differentiation write into a caller-owned [`Scratch`], so a
//! single tape can be shared between threads.
//!
//! Domain errors (log of a nonpositive number, division by zero, ...) do not
//! panic: the offending node evaluates to NaN and the first such node is
//! reported through [`DomainError`].

use std::fmt;

/// Handle to a node on a tape under construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The closed set of primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Input(usize),
    Const(f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// Real power with both operands differentiable.
    Pow(Var, Var),
    /// Power with a constant exponent.
    PowConst(Var, f64),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Logistic(Var),
    /// `log(1 + exp(x))`, evaluated without overflow.
    Softplus(Var),
    /// Log of the gamma function (positive arguments only).
    LnGamma(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Pow(..) => "pow",
            Op::PowConst(..) => "pow",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Tanh(_) => "tanh",
            Op::Logistic(_) => "logistic",
            Op::Softplus(_) => "softplus",
            Op::LnGamma(_) => "lngamma",
        }
    }
}

/// First node whose operands were outside its domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainError {
    pub node: usize,
    pub op: &'static str,
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain error in `{}` at node {}", self.op, self.node)
    }
}

impl std::error::Error for DomainError {}

/// Builder for a [`Tape`]. Operands always precede the nodes using them, so
/// the finished tape is topologically ordered by construction.
#[derive(Debug, Default, Clone)]
pub struct TapeBuilder {
    nodes: Vec<Op>,
    inputs: Vec<Var>,
}

macro_rules! unary {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(pub fn $name(&mut self, a: Var) -> Var { self.push(Op::$op(a)) })*
    };
}

macro_rules! binary {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(pub fn $name(&mut self, a: Var, b: Var) -> Var { self.push(Op::$op(a, b)) })*
    };
}

impl TapeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> Var {
        let v = Var(self.nodes.len() as u32);
        self.nodes.push(op);
        v
    }

    /// Declares the next leaf variable.
    pub fn input(&mut self) -> Var {
        let idx = self.inputs.len();
        let v = self.push(Op::Input(idx));
        self.inputs.push(v);
        v
    }

    pub fn inputs(&mut self, n: usize) -> Vec<Var> {
        (0..n).map(|_| self.input()).collect()
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(Op::Const(c))
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    binary! {
        add => Add,
        sub => Sub,
        mul => Mul,
        div => Div,
        pow => Pow,
    }

    unary! {
        neg => Neg,
        exp => Exp,
        log => Log,
        sqrt => Sqrt,
        sin => Sin,
        cos => Cos,
        tanh => Tanh,
        logistic => Logistic,
        softplus => Softplus,
        ln_gamma => LnGamma,
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        self.push(Op::PowConst(a, exponent))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let c = self.constant(c);
        self.add(a, c)
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let c = self.constant(c);
        self.mul(a, c)
    }

    /// Sum of a slice; the empty sum is the constant 0.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Finishes the tape with a single output.
    pub fn finish(self, output: Var) -> Tape {
        self.finish_many(&[output])
    }

    pub fn finish_many(self, outputs: &[Var]) -> Tape {
        assert!(!outputs.is_empty(), "a tape needs at least one output");
        for o in outputs {
            assert!(o.index() < self.nodes.len(), "output refers to a missing node");
        }
        Tape {
            nodes: self.nodes,
            inputs: self.inputs,
            outputs: outputs.to_vec(),
        }
    }
}

/// Immutable, topologically ordered expression graph.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Op>,
    inputs: Vec<Var>,
    outputs: Vec<Var>,
}

/// Reusable evaluation buffers.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    values: Vec<f64>,
    adjoints: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Forward value of the first output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub domain_error: Option<DomainError>,
}

impl Evaluation {
    pub fn is_valid(&self) -> bool {
        self.domain_error.is_none() && self.value.is_finite()
    }
}

/// Value and partial derivatives of the first output w.r.t. every leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub values: Vec<f64>,
    pub domain_error: Option<DomainError>,
}

impl Gradient {
    pub fn is_valid(&self) -> bool {
        self.domain_error.is_none() && self.value.is_finite() && self.values.iter().all(|g| g.is_finite())
    }
}

impl Tape {
    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    /// Runs the forward pass, leaving node values in `scratch`.
    pub fn forward(&self, inputs: &[f64], scratch: &mut Scratch) -> Option<DomainError> {
        assert_eq!(
            inputs.len(),
            self.inputs.len(),
            "tape expects {} inputs",
            self.inputs.len()
        );
        let vals = &mut scratch.values;
        vals.clear();
        vals.reserve(self.nodes.len());
        let mut err = None;
        for (i, op) in self.nodes.iter().enumerate() {
            let g = |v: Var| vals[v.index()];
            let (value, bad) = match *op {
                Op::Input(k) => (inputs[k], false),
                Op::Const(c) => (c, false),
                Op::Add(a, b) => (g(a) + g(b), false),
                Op::Sub(a, b) => (g(a) - g(b), false),
                Op::Mul(a, b) => (g(a) * g(b), false),
                Op::Div(a, b) => {
                    let d = g(b);
                    if d == 0.0 {
                        (f64::NAN, true)
                    } else {
                        (g(a) / d, false)
                    }
                }
                Op::Pow(a, b) => {
                    let (x, y) = (g(a), g(b));
                    if x < 0.0 || (x == 0.0 && y <= 0.0) {
                        (f64::NAN, true)
                    } else {
                        (x.powf(y), false)
                    }
                }
                Op::PowConst(a, c) => {
                    let x = g(a);
                    let integral = c.fract() == 0.0;
                    if (x < 0.0 && !integral) || (x == 0.0 && c < 0.0) {
                        (f64::NAN, true)
                    } else if integral && c.abs() <= i32::MAX as f64 {
                        (x.powi(c as i32), false)
                    } else {
                        (x.powf(c), false)
                    }
                }
                Op::Neg(a) => (-g(a), false),
                Op::Exp(a) => (g(a).exp(), false),
                Op::Log(a) => {
                    let x = g(a);
                    if x <= 0.0 {
                        (f64::NAN, true)
                    } else {
                        (x.ln(), false)
                    }
                }
                Op::Sqrt(a) => {
                    let x = g(a);
                    if x < 0.0 {
                        (f64::NAN, true)
                    } else {
                        (x.sqrt(), false)
                    }
                }
                Op::Sin(a) => (g(a).sin(), false),
                Op::Cos(a) => (g(a).cos(), false),
                Op::Tanh(a) => (g(a).tanh(), false),
                Op::Logistic(a) => (logistic(g(a)), false),
                Op::Softplus(a) => (softplus(g(a)), false),
                Op::LnGamma(a) => {
                    let x = g(a);
                    if x <= 0.0 {
                        (f64::NAN, true)
                    } else {
                        (statrs::function::gamma::ln_gamma(x), false)
                    }
                }
            };
            if bad && err.is_none() {
                err = Some(DomainError { node: i, op: op.name() });
            }
            vals.push(value);
        }
        err
    }

    /// Value of output `k` after [`Tape::forward`].
    pub fn output_value(&self, scratch: &Scratch, k: usize) -> f64 {
        scratch.values[self.outputs[k].index()]
    }

    /// Forward value of the first output.
    pub fn evaluate(&self, inputs: &[f64]) -> Evaluation {
        let mut scratch = Scratch::new();
        self.evaluate_with(inputs, &mut scratch)
    }

    pub fn evaluate_with(&self, inputs: &[f64], scratch: &mut Scratch) -> Evaluation {
        let domain_error = self.forward(inputs, scratch);
        Evaluation {
            value: self.output_value(scratch, 0),
            domain_error,
        }
    }

    /// Reverse-mode gradient of the first output.
    pub fn gradient(&self, inputs: &[f64]) -> Gradient {
        let mut scratch = Scratch::new();
        self.gradient_with(inputs, &mut scratch)
    }

    pub fn gradient_with(&self, inputs: &[f64], scratch: &mut Scratch) -> Gradient {
        let mut seeds = vec![0.0; self.outputs.len()];
        seeds[0] = 1.0;
        let mut values = vec![0.0; self.inputs.len()];
        let domain_error = self.vjp(inputs, &seeds, scratch, &mut values);
        Gradient {
            value: self.output_value(scratch, 0),
            values,
            domain_error,
        }
    }

    /// Vector-Jacobian product: accumulates `sum_k seeds[k] * d out_k / d x`
    /// into `input_adjoints` (which is overwritten).
    pub fn vjp(
        &self,
        inputs: &[f64],
        seeds: &[f64],
        scratch: &mut Scratch,
        input_adjoints: &mut [f64],
    ) -> Option<DomainError> {
        let err = self.forward(inputs, scratch);
        self.reverse(seeds, scratch, input_adjoints);
        err
    }

    /// Reverse sweep using the values left by the last [`Tape::forward`].
    pub fn reverse(&self, seeds: &[f64], scratch: &mut Scratch, input_adjoints: &mut [f64]) {
        assert_eq!(seeds.len(), self.outputs.len());
        assert_eq!(input_adjoints.len(), self.inputs.len());
        let Scratch { values, adjoints } = scratch;
        adjoints.clear();
        adjoints.resize(self.nodes.len(), 0.0);
        for (o, &s) in self.outputs.iter().zip(seeds) {
            adjoints[o.index()] += s;
        }
        for (i, op) in self.nodes.iter().enumerate().rev() {
            let g = adjoints[i];
            if g == 0.0 {
                continue;
            }
            let v = values[i];
            let val = |x: Var| values[x.index()];
            match *op {
                Op::Input(k) => input_adjoints[k] += g,
                Op::Const(_) => {}
                Op::Add(a, b) => {
                    adjoints[a.index()] += g;
                    adjoints[b.index()] += g;
                }
                Op::Sub(a, b) => {
                    adjoints[a.index()] += g;
                    adjoints[b.index()] -= g;
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(a), val(b));
                    adjoints[a.index()] += g * y;
                    adjoints[b.index()] += g * x;
                }
                Op::Div(a, b) => {
                    let y = val(b);
                    adjoints[a.index()] += g / y;
                    adjoints[b.index()] -= g * v / y;
                }
                Op::Pow(a, b) => {
                    let (x, y) = (val(a), val(b));
                    adjoints[a.index()] += g * y * x.powf(y - 1.0);
                    if x > 0.0 {
                        adjoints[b.index()] += g * v * x.ln();
                    }
                }
                Op::PowConst(a, c) => {
                    let x = val(a);
                    let d = if c == 2.0 { 2.0 * x } else { c * x.powf(c - 1.0) };
                    adjoints[a.index()] += g * d;
                }
                Op::Neg(a) => adjoints[a.index()] -= g,
                Op::Exp(a) => adjoints[a.index()] += g * v,
                Op::Log(a) => adjoints[a.index()] += g / val(a),
                Op::Sqrt(a) => adjoints[a.index()] += g * 0.5 / v,
                Op::Sin(a) => adjoints[a.index()] += g * val(a).cos(),
                Op::Cos(a) => adjoints[a.index()] -= g * val(a).sin(),
                Op::Tanh(a) => adjoints[a.index()] += g * (1.0 - v * v),
                Op::Logistic(a) => adjoints[a.index()] += g * v * (1.0 - v),
                Op::Softplus(a) => adjoints[a.index()] += g * logistic(val(a)),
                Op::LnGamma(a) => adjoints[a.index()] += g * statrs::function::gamma::digamma(val(a)),
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(tape: &Tape, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (tape.evaluate(&hi).value - tape.evaluate(&lo).value) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn square_value_and_gradient() {
        let mut b = TapeBuilder::new();
        let x = b.input();
        let y = b.mul(x, x);
        let tape = b.finish(y);
        assert_eq!(tape.evaluate(&[3.0]).value, 9.0);
        assert_eq!(tape.gradient(&[3.0]).values, vec![6.0]);
    }

    #[test]
    fn log_of_zero_is_flagged() {
        let mut b = TapeBuilder::new();
        let x = b.input();
        let y = b.log(x);
        let tape = b.finish(y);
        let e = tape.evaluate(&[0.0]);
        assert!(e.value.is_nan());
        assert_eq!(e.domain_error.unwrap().op, "log");
        assert!(!tape.gradient(&[0.0]).is_valid());
    }

    #[test]
    fn division_by_zero_is_flagged() {
        let mut b = TapeBuilder::new();
        let [x, y] = [b.input(), b.input()];
        let z = b.div(x, y);
        let tape = b.finish(z);
        let e = tape.evaluate(&[1.0, 0.0]);
        assert!(e.value.is_nan());
        assert_eq!(e.domain_error.unwrap().op, "div");
    }

    #[test]
    fn x_exp_y() {
        let mut b = TapeBuilder::new();
        let [x, y] = [b.input(), b.input()];
        let e = b.exp(y);
        let z = b.mul(x, e);
        let tape = b.finish(z);
        assert_eq!(tape.evaluate(&[2.0, 0.0]).value, 2.0);
    }

    #[test]
    fn product_rule() {
        let mut b = TapeBuilder::new();
        let [x, y] = [b.input(), b.input()];
        let z = b.mul(x, y);
        let tape = b.finish(z);
        assert_eq!(tape.gradient(&[2.0, 5.0]).values, vec![5.0, 2.0]);
    }

    #[test]
    fn tanh_matches_finite_difference() {
        let mut b = TapeBuilder::new();
        let x = b.input();
        let y = b.tanh(x);
        let tape = b.finish(y);
        let g = tape.gradient(&[0.7]).values[0];
        let fd = central_diff(&tape, &[0.7], 1e-5)[0];
        assert!(((g - fd) / fd).abs() < 1e-6, "{g} vs {fd}");
    }

    #[test]
    fn every_primitive_matches_finite_difference() {
        type Build = fn(&mut TapeBuilder, Var, Var) -> Var;
        let cases: Vec<(&str, Build, [f64; 2])> = vec![
            ("add", |b, x, y| b.add(x, y), [0.3, 1.7]),
            ("sub", |b, x, y| b.sub(x, y), [0.3, 1.7]),
            ("mul", |b, x, y| b.mul(x, y), [0.3, 1.7]),
            ("div", |b, x, y| b.div(x, y), [0.3, 1.7]),
            ("pow", |b, x, y| b.pow(x, y), [1.3, 1.7]),
            ("powf", |b, x, _| b.powf(x, 2.5), [1.3, 0.0]),
            ("neg", |b, x, _| b.neg(x), [0.3, 0.0]),
            ("exp", |b, x, _| b.exp(x), [0.3, 0.0]),
            ("log", |b, x, _| b.log(x), [0.3, 0.0]),
            ("sqrt", |b, x, _| b.sqrt(x), [0.3, 0.0]),
            ("sin", |b, x, _| b.sin(x), [0.3, 0.0]),
            ("cos", |b, x, _| b.cos(x), [0.3, 0.0]),
            ("tanh", |b, x, _| b.tanh(x), [0.3, 0.0]),
            ("logistic", |b, x, _| b.logistic(x), [0.3, 0.0]),
            ("softplus", |b, x, _| b.softplus(x), [-0.8, 0.0]),
            ("lngamma", |b, x, _| b.ln_gamma(x), [2.3, 0.0]),
        ];
        for (name, build, point) in cases {
            let mut b = TapeBuilder::new();
            let [x, y] = [b.input(), b.input()];
            let out = build(&mut b, x, y);
            let tape = b.finish(out);
            let g = tape.gradient(&point).values;
            let fd = central_diff(&tape, &point, 1e-6);
            for (a, e) in g.iter().zip(&fd) {
                assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0), "{name}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn vjp_weights_multiple_outputs() {
        let mut b = TapeBuilder::new();
        let [x, y] = [b.input(), b.input()];
        let s = b.add(x, y);
        let p = b.mul(x, y);
        let tape = b.finish_many(&[s, p]);
        let mut scratch = Scratch::new();
        let mut adj = vec![0.0; 2];
        tape.vjp(&[2.0, 3.0], &[1.0, 10.0], &mut scratch, &mut adj);
        assert_eq!(adj, vec![1.0 + 30.0, 1.0 + 20.0]);
        assert_eq!(tape.output_value(&scratch, 1), 6.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
