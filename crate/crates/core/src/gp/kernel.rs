//! Compositional kernel expressions.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelKind {
    ExpQuad,
    Periodic,
    Linear,
    Polynomial,
    Matern32,
    Matern52,
    Cosine,
    RationalQuadratic,
    /// One component of a spectral-mixture kernel. Not part of the search
    /// grammars; used by the spectral-mixture baseline.
    Spectral,
}

impl KernelKind {
    pub const BASE: [KernelKind; 4] = [
        KernelKind::ExpQuad,
        KernelKind::Periodic,
        KernelKind::Linear,
        KernelKind::Polynomial,
    ];

    pub const AUGMENTED: [KernelKind; 8] = [
        KernelKind::ExpQuad,
        KernelKind::Periodic,
        KernelKind::Linear,
        KernelKind::Polynomial,
        KernelKind::Matern32,
        KernelKind::Matern52,
        KernelKind::Cosine,
        KernelKind::RationalQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::ExpQuad => "ExpQuad",
            KernelKind::Periodic => "Periodic",
            KernelKind::Linear => "Linear",
            KernelKind::Polynomial => "Polynomial",
            KernelKind::Matern32 => "Matern32",
            KernelKind::Matern52 => "Matern52",
            KernelKind::Cosine => "Cosine",
            KernelKind::RationalQuadratic => "RationalQuadratic",
            KernelKind::Spectral => "Spectral",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::AUGMENTED
            .iter()
            .chain(std::iter::once(&KernelKind::Spectral))
            .copied()
            .find(|k| k.name() == s)
    }

    /// Names of the log-parameter slots, in storage order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            KernelKind::ExpQuad | KernelKind::Matern32 | KernelKind::Matern52 => &["variance", "lengthscale"],
            KernelKind::Periodic => &["variance", "lengthscale", "period"],
            KernelKind::Linear => &["variance", "bias"],
            KernelKind::Polynomial => &["variance", "offset"],
            KernelKind::Cosine => &["variance", "period"],
            KernelKind::RationalQuadratic => &["variance", "lengthscale", "alpha"],
            KernelKind::Spectral => &["weight", "frequency", "bandwidth"],
        }
    }

    pub fn num_params(self) -> usize {
        self.param_names().len()
    }

    /// Index of the period slot, for kinds that have one.
    pub fn period_slot(self) -> Option<usize> {
        match self {
            KernelKind::Periodic => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A base kernel with its log-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    pub kind: KernelKind,
    pub log_params: Vec<f64>,
}

impl BaseKernel {
    /// Default parameters: every log-parameter 0.
    pub fn new(kind: KernelKind) -> Self {
        Self { kind, log_params: vec![0.0; kind.num_params()] }
    }

    pub fn with_params(kind: KernelKind, params: &[f64]) -> Result<Self, GpError> {
        if params.len() != kind.num_params() {
            return Err(GpError::ParamCount { kind, expected: kind.num_params(), got: params.len() });
        }
        if params.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(GpError::InvalidParams(format!("{kind} parameters must be positive and finite")));
        }
        Ok(Self { kind, log_params: params.iter().map(|p| p.ln()).collect() })
    }

    /// Value and gradient w.r.t. the log-parameters (written to `grad`).
    pub fn eval_grad(&self, x: f64, x2: f64, grad: &mut [f64]) -> f64 {
        let p = &self.log_params;
        let var = p[0].exp();
        let r = (x - x2).abs();
        match self.kind {
            KernelKind::ExpQuad => {
                let l = p[1].exp();
                let q = r * r / (l * l);
                let k = var * (-0.5 * q).exp();
                grad[0] = k;
                grad[1] = k * q;
                k
            }
            KernelKind::Periodic => {
                let (l, per) = (p[1].exp(), p[2].exp());
                let arg = PI * r / per;
                let s = arg.sin();
                let k = var * (-2.0 * s * s / (l * l)).exp();
                grad[0] = k;
                grad[1] = k * 4.0 * s * s / (l * l);
                grad[2] = k * 4.0 * s * arg.cos() * arg / (l * l);
                k
            }
            KernelKind::Linear => {
                let bias = p[1].exp();
                let lin = var * (x * x2);
                grad[0] = lin;
                grad[1] = bias;
                bias + lin
            }
            KernelKind::Polynomial => {
                let c = p[1].exp();
                let u = x * x2 + c;
                let k = var * u * u;
                grad[0] = k;
                grad[1] = var * 2.0 * u * c;
                k
            }
            KernelKind::Matern32 => {
                let a = 3f64.sqrt() * r / p[1].exp();
                let e = (-a).exp();
                grad[0] = var * (1.0 + a) * e;
                grad[1] = var * a * a * e;
                grad[0]
            }
            KernelKind::Matern52 => {
                let a = 5f64.sqrt() * r / p[1].exp();
                let e = (-a).exp();
                grad[0] = var * (1.0 + a + a * a / 3.0) * e;
                grad[1] = var * e * a * a * (1.0 + a) / 3.0;
                grad[0]
            }
            KernelKind::Cosine => {
                let arg = 2.0 * PI * r / p[1].exp();
                let k = var * arg.cos();
                grad[0] = k;
                grad[1] = var * arg.sin() * arg;
                k
            }
            KernelKind::RationalQuadratic => {
                let (l, alpha) = (p[1].exp(), p[2].exp());
                let q = 1.0 + r * r / (2.0 * alpha * l * l);
                let k = var * q.powf(-alpha);
                grad[0] = k;
                grad[1] = 2.0 * k * alpha * (q - 1.0) / q;
                grad[2] = k * alpha * ((q - 1.0) / q - q.ln());
                k
            }
            KernelKind::Spectral => {
                let (w, mu, v) = (var, p[1].exp(), p[2].exp());
                let env = (-2.0 * PI * PI * r * r * v).exp();
                let arg = 2.0 * PI * r * mu;
                let k = w * env * arg.cos();
                grad[0] = k;
                grad[1] = -w * env * arg.sin() * arg;
                grad[2] = -2.0 * PI * PI * r * r * v * k;
                k
            }
        }
    }

    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        let mut g = [0.0; 3];
        self.eval_grad(x, x2, &mut g)
    }
}

/// Kernel expression tree: base kernels combined by sums and products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelExpr {
    Base(BaseKernel),
    Sum(Box<KernelExpr>, Box<KernelExpr>),
    Product(Box<KernelExpr>, Box<KernelExpr>),
}

/// A mutation of a kernel expression at a preorder subtree index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Replace subtree `S` with `S + B`.
    AddBase { site: usize, base: KernelKind },
    /// Replace subtree `S` with `S * B`.
    MulBase { site: usize, base: KernelKind },
    /// Replace the base leaf at `site` with another base kind.
    ReplaceBase { site: usize, base: KernelKind },
}

impl KernelExpr {
    pub fn base(kind: KernelKind) -> Self {
        KernelExpr::Base(BaseKernel::new(kind))
    }

    pub fn sum(a: KernelExpr, b: KernelExpr) -> Self {
        KernelExpr::Sum(Box::new(a), Box::new(b))
    }

    pub fn product(a: KernelExpr, b: KernelExpr) -> Self {
        KernelExpr::Product(Box::new(a), Box::new(b))
    }

    pub fn num_params(&self) -> usize {
        match self {
            KernelExpr::Base(b) => b.kind.num_params(),
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => a.num_params() + b.num_params(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            KernelExpr::Base(_) => 0,
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn num_subtrees(&self) -> usize {
        match self {
            KernelExpr::Base(_) => 1,
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => 1 + a.num_subtrees() + b.num_subtrees(),
        }
    }

    /// Base leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&BaseKernel> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a BaseKernel>) {
        match self {
            KernelExpr::Base(b) => out.push(b),
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    fn leaves_mut(&mut self) -> Vec<&mut BaseKernel> {
        let mut out = Vec::new();
        self.collect_leaves_mut(&mut out);
        out
    }

    fn collect_leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut BaseKernel>) {
        match self {
            KernelExpr::Base(b) => out.push(b),
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => {
                a.collect_leaves_mut(out);
                b.collect_leaves_mut(out);
            }
        }
    }

    pub fn contains(&self, kind: KernelKind) -> bool {
        self.leaves().iter().any(|b| b.kind == kind)
    }

    /// Flattened log-parameters, leaves left to right.
    pub fn params(&self) -> Vec<f64> {
        self.leaves().iter().flat_map(|b| b.log_params.iter().copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut at = 0;
        for leaf in self.leaves_mut() {
            let n = leaf.log_params.len();
            leaf.log_params.copy_from_slice(&params[at..at + n]);
            at += n;
        }
    }

    /// Flattened indices of every period slot.
    pub fn period_slots(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = 0;
        for leaf in self.leaves() {
            if let Some(s) = leaf.kind.period_slot() {
                out.push(at + s);
            }
            at += leaf.kind.num_params();
        }
        out
    }

    /// Same tree shape and kinds, ignoring parameter values.
    pub fn same_structure(&self, other: &KernelExpr) -> bool {
        match (self, other) {
            (KernelExpr::Base(a), KernelExpr::Base(b)) => a.kind == b.kind,
            (KernelExpr::Sum(a, b), KernelExpr::Sum(c, d))
            | (KernelExpr::Product(a, b), KernelExpr::Product(c, d)) => {
                a.same_structure(c) && b.same_structure(d)
            }
            _ => false,
        }
    }

    /// Canonical structural key: sums and products are flattened and their
    /// operands sorted, so commutative/associative variants share a key.
    pub fn canonical_key(&self) -> String {
        fn operands<'a>(e: &'a KernelExpr, sum: bool, out: &mut Vec<&'a KernelExpr>) {
            match (e, sum) {
                (KernelExpr::Sum(a, b), true) | (KernelExpr::Product(a, b), false) => {
                    operands(a, sum, out);
                    operands(b, sum, out);
                }
                _ => out.push(e),
            }
        }
        match self {
            KernelExpr::Base(b) => b.kind.name().to_string(),
            KernelExpr::Sum(..) | KernelExpr::Product(..) => {
                let is_sum = matches!(self, KernelExpr::Sum(..));
                let mut ops = Vec::new();
                operands(self, is_sum, &mut ops);
                let mut keys: Vec<String> = ops.iter().map(|e| e.canonical_key()).collect();
                keys.sort();
                format!("{}({})", if is_sum { "S" } else { "P" }, keys.join(","))
            }
        }
    }

    /// Kernel value and gradient w.r.t. all log-parameters.
    pub fn eval_grad(&self, x: f64, x2: f64, grad: &mut [f64]) -> f64 {
        match self {
            KernelExpr::Base(b) => b.eval_grad(x, x2, grad),
            KernelExpr::Sum(a, b) => {
                let (ga, gb) = grad.split_at_mut(a.num_params());
                a.eval_grad(x, x2, ga) + b.eval_grad(x, x2, gb)
            }
            KernelExpr::Product(a, b) => {
                let (ga, gb) = grad.split_at_mut(a.num_params());
                let va = a.eval_grad(x, x2, ga);
                let vb = b.eval_grad(x, x2, gb);
                ga.iter_mut().for_each(|g| *g *= vb);
                gb.iter_mut().for_each(|g| *g *= va);
                va * vb
            }
        }
    }

    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        match self {
            KernelExpr::Base(b) => b.eval(x, x2),
            KernelExpr::Sum(a, b) => a.eval(x, x2) + b.eval(x, x2),
            KernelExpr::Product(a, b) => a.eval(x, x2) * b.eval(x, x2),
        }
    }

    /// Preorder subtree lookup.
    pub fn subtree(&self, site: usize) -> Option<&KernelExpr> {
        fn go<'a>(e: &'a KernelExpr, site: usize, counter: &mut usize) -> Option<&'a KernelExpr> {
            if *counter == site {
                return Some(e);
            }
            *counter += 1;
            match e {
                KernelExpr::Base(_) => None,
                KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => {
                    go(a, site, counter).or_else(|| go(b, site, counter))
                }
            }
        }
        go(self, site, &mut 0)
    }

    fn replace_subtree(&self, site: usize, f: &mut dyn FnMut(&KernelExpr) -> KernelExpr) -> KernelExpr {
        fn go(
            e: &KernelExpr,
            site: usize,
            counter: &mut usize,
            f: &mut dyn FnMut(&KernelExpr) -> KernelExpr,
        ) -> KernelExpr {
            if *counter == site {
                *counter += e.num_subtrees();
                return f(e);
            }
            *counter += 1;
            match e {
                KernelExpr::Base(_) => e.clone(),
                KernelExpr::Sum(a, b) => {
                    let a2 = go(a, site, counter, f);
                    let b2 = go(b, site, counter, f);
                    KernelExpr::sum(a2, b2)
                }
                KernelExpr::Product(a, b) => {
                    let a2 = go(a, site, counter, f);
                    let b2 = go(b, site, counter, f);
                    KernelExpr::product(a2, b2)
                }
            }
        }
        go(self, site, &mut 0, f)
    }

    /// Applies a mutation, returning a new tree. The input is never modified;
    /// the new base kernel gets default parameters.
    pub fn mutate(&self, m: Mutation) -> Result<KernelExpr, GpError> {
        let (site, base) = match m {
            Mutation::AddBase { site, base } | Mutation::MulBase { site, base } | Mutation::ReplaceBase { site, base } => {
                (site, base)
            }
        };
        let target = self
            .subtree(site)
            .ok_or(GpError::InvalidSite { site, subtrees: self.num_subtrees() })?;
        if matches!(m, Mutation::ReplaceBase { .. }) && !matches!(target, KernelExpr::Base(_)) {
            return Err(GpError::ReplaceNonLeaf { site });
        }
        Ok(self.replace_subtree(site, &mut |s| match m {
            Mutation::AddBase { .. } => KernelExpr::sum(s.clone(), KernelExpr::base(base)),
            Mutation::MulBase { .. } => KernelExpr::product(s.clone(), KernelExpr::base(base)),
            Mutation::ReplaceBase { .. } => KernelExpr::base(base),
        }))
    }

    /// Every single mutation drawn from `base_set`, in enumeration order:
    /// for each preorder site, additions, then multiplications, then (at
    /// leaves) replacements.
    pub fn neighbourhood(&self, base_set: &[KernelKind]) -> Vec<Mutation> {
        let mut out = Vec::new();
        for site in 0..self.num_subtrees() {
            for &base in base_set {
                out.push(Mutation::AddBase { site, base });
            }
            for &base in base_set {
                out.push(Mutation::MulBase { site, base });
            }
            if let Some(KernelExpr::Base(b)) = self.subtree(site) {
                for &base in base_set {
                    if base != b.kind {
                        out.push(Mutation::ReplaceBase { site, base });
                    }
                }
            }
        }
        out
    }

    /// Human-readable form with parameter values in linear space.
    pub fn describe(&self) -> String {
        match self {
            KernelExpr::Base(b) => {
                let params: Vec<String> = b
                    .kind
                    .param_names()
                    .iter()
                    .zip(&b.log_params)
                    .map(|(n, p)| format!("{n}={:.4}", p.exp()))
                    .collect();
                format!("{}({})", b.kind, params.join(", "))
            }
            KernelExpr::Sum(a, b) => format!("({} + {})", a.describe(), b.describe()),
            KernelExpr::Product(a, b) => format!("({} * {})", a.describe(), b.describe()),
        }
    }
}

impl fmt::Display for KernelExpr {
    /// Prints in the kernel text grammar with minimal parentheses.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelExpr::Base(b) => write!(f, "{}", b.kind),
            KernelExpr::Sum(a, b) => {
                write!(f, "{a} + ")?;
                match **b {
                    KernelExpr::Sum(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            KernelExpr::Product(a, b) => {
                match **a {
                    KernelExpr::Sum(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                write!(f, " * ")?;
                match **b {
                    KernelExpr::Base(_) => write!(f, "{b}"),
                    _ => write!(f, "({b})"),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(expr: &KernelExpr, x: f64, y: f64) {
        let p = expr.params();
        let mut g = vec![0.0; p.len()];
        expr.eval_grad(x, y, &mut g);
        for i in 0..p.len() {
            let h = 1e-6;
            let mut e1 = expr.clone();
            let mut e2 = expr.clone();
            let mut p1 = p.clone();
            let mut p2 = p.clone();
            p1[i] += h;
            p2[i] -= h;
            e1.set_params(&p1);
            e2.set_params(&p2);
            let fd = (e1.eval(x, y) - e2.eval(x, y)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{expr} param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn exp_quad_examples() {
        let k = KernelExpr::base(KernelKind::ExpQuad);
        assert_eq!(k.eval(0.0, 0.0), 1.0);
        assert!((k.eval(0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.eval(0.0, 1.0) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn periodic_full_period() {
        let b = BaseKernel::with_params(KernelKind::Periodic, &[1.0, 1.0, 2.0]).unwrap();
        assert!((b.eval(0.0, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_gradients_match_finite_differences() {
        for &kind in KernelKind::AUGMENTED.iter().chain([KernelKind::Spectral].iter()) {
            let mut e = KernelExpr::base(kind);
            let p: Vec<f64> = (0..kind.num_params()).map(|i| 0.3 - 0.2 * i as f64).collect();
            e.set_params(&p);
            fd_check(&e, 0.37, -0.81);
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut e = KernelExpr::sum(
            KernelExpr::base(KernelKind::Linear),
            KernelExpr::product(KernelExpr::base(KernelKind::Periodic), KernelExpr::base(KernelKind::ExpQuad)),
        );
        let p: Vec<f64> = (0..e.num_params()).map(|i| (i as f64 * 0.7).sin() * 0.5).collect();
        e.set_params(&p);
        fd_check(&e, 1.2, 0.4);
    }

    #[test]
    fn mutation_examples() {
        let e = KernelExpr::base(KernelKind::ExpQuad);
        let m = e.mutate(Mutation::AddBase { site: 0, base: KernelKind::Linear }).unwrap();
        assert_eq!(m.to_string(), "ExpQuad + Linear");

        let lp = KernelExpr::sum(KernelExpr::base(KernelKind::Linear), KernelExpr::base(KernelKind::Periodic));
        let m = lp.mutate(Mutation::MulBase { site: 2, base: KernelKind::ExpQuad }).unwrap();
        assert_eq!(m.to_string(), "Linear + Periodic * ExpQuad");
        assert!(matches!(&m, KernelExpr::Sum(_, b) if matches!(**b, KernelExpr::Product(..))));

        assert!(matches!(
            lp.mutate(Mutation::ReplaceBase { site: 0, base: KernelKind::ExpQuad }),
            Err(GpError::ReplaceNonLeaf { site: 0 })
        ));
        assert!(matches!(
            lp.mutate(Mutation::AddBase { site: 3, base: KernelKind::ExpQuad }),
            Err(GpError::InvalidSite { .. })
        ));
        let r = lp.mutate(Mutation::ReplaceBase { site: 1, base: KernelKind::ExpQuad }).unwrap();
        assert_eq!(r.to_string(), "ExpQuad + Periodic");
    }

    #[test]
    fn mutation_keeps_inherited_params() {
        let mut e = KernelExpr::base(KernelKind::ExpQuad);
        e.set_params(&[0.5, -0.25]);
        let m = e.mutate(Mutation::MulBase { site: 0, base: KernelKind::Linear }).unwrap();
        assert_eq!(m.params(), vec![0.5, -0.25, 0.0, 0.0]);
    }

    #[test]
    fn canonical_key_ignores_order() {
        let a = KernelExpr::sum(KernelExpr::base(KernelKind::Linear), KernelExpr::base(KernelKind::Periodic));
        let b = KernelExpr::sum(KernelExpr::base(KernelKind::Periodic), KernelExpr::base(KernelKind::Linear));
        assert_eq!(a.canonical_key(), b.canonical_key());
        let c = KernelExpr::product(KernelExpr::base(KernelKind::Periodic), KernelExpr::base(KernelKind::Linear));
        assert_ne!(a.canonical_key(), c.canonical_key());
    }

    #[test]
    fn neighbourhood_counts() {
        let e = KernelExpr::sum(KernelExpr::base(KernelKind::Linear), KernelExpr::base(KernelKind::Periodic));
        let base = [KernelKind::ExpQuad, KernelKind::Linear, KernelKind::Periodic];
        // 3 sites x (3 add + 3 mul) + 2 leaves x 2 replacements
        assert_eq!(e.neighbourhood(&base).len(), 18 + 4);
    }
}
