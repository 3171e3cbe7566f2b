//! Log densities (generic over the arithmetic backend) and samplers.

use rand::Rng;
use rand_distr::{Beta, Binomial, Cauchy, Distribution, Exp, Gamma, LogNormal, Normal, Poisson, StudentT};

use super::ast::Family;
use super::eval::Arith;
use super::ModelError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// One scalar distribution argument, possibly in linear-predictor form.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Arg<V> {
    Plain(V),
    /// The argument is `logistic(z)`; holds `z`.
    Logit(V),
    /// The argument is `exp(z)`; holds `z`.
    Log(V),
}

impl<V: Copy> Arg<V> {
    /// The argument's actual value.
    pub fn value<B: Arith<V = V>>(self, b: &mut B) -> V {
        match self {
            Arg::Plain(v) => v,
            Arg::Logit(z) => b.logistic(z),
            Arg::Log(z) => b.exp(z),
        }
    }
}

fn lbeta<B: Arith>(b: &mut B, x: B::V, y: B::V) -> B::V {
    let gx = b.ln_gamma(x);
    let gy = b.ln_gamma(y);
    let s = b.add(x, y);
    let gs = b.ln_gamma(s);
    let t = b.add(gx, gy);
    b.sub(t, gs)
}

/// `(log p, log(1 - p))` for a probability argument.
fn log_p_pair<B: Arith>(b: &mut B, p: Arg<B::V>) -> (B::V, B::V) {
    match p {
        Arg::Logit(z) => {
            let nz = b.neg(z);
            let a = b.softplus(nz);
            let lp = b.neg(a);
            let c = b.softplus(z);
            (lp, b.neg(c))
        }
        other => {
            let p = other.value(b);
            let lp = b.log(p);
            let one = b.c(1.0);
            let q = b.sub(one, p);
            (lp, b.log(q))
        }
    }
}

/// Log density of `family(args)` at `x`. `xc` is the numeric value of `x`
/// when it is a constant (observed data); discrete families require it.
pub(crate) fn log_density<B: Arith>(b: &mut B, family: Family, args: &[Arg<B::V>], x: B::V, xc: Option<f64>) -> B::V {
    let half_ln_2pi = 0.5 * LN_2PI;
    match family {
        Family::Normal => {
            let mu = args[0].value(b);
            let s = args[1].value(b);
            normal_lpdf(b, x, mu, s)
        }
        Family::LogNormal => {
            let mu = args[0].value(b);
            let s = args[1].value(b);
            let lx = b.log(x);
            let lp = normal_lpdf(b, lx, mu, s);
            b.sub(lp, lx)
        }
        Family::HalfNormal => {
            let s = args[0].value(b);
            let z = b.div(x, s);
            let z2 = b.powf(z, 2.0);
            let q = b.mul_c(z2, -0.5);
            let ls = b.log(s);
            let t = b.sub(q, ls);
            b.add_c(t, std::f64::consts::LN_2 - half_ln_2pi)
        }
        Family::Uniform => {
            let lo = args[0].value(b);
            let hi = args[1].value(b);
            let w = b.sub(hi, lo);
            let lw = b.log(w);
            b.neg(lw)
        }
        Family::Exponential => {
            let r = args[0].value(b);
            let lr = b.log(r);
            let rx = b.mul(r, x);
            b.sub(lr, rx)
        }
        Family::Beta => {
            let a = args[0].value(b);
            let bb = args[1].value(b);
            let lx = b.log(x);
            let one = b.c(1.0);
            let q = b.sub(one, x);
            let lq = b.log(q);
            let am1 = b.add_c(a, -1.0);
            let bm1 = b.add_c(bb, -1.0);
            let t1 = b.mul(am1, lx);
            let t2 = b.mul(bm1, lq);
            let lb = lbeta(b, a, bb);
            let s = b.add(t1, t2);
            b.sub(s, lb)
        }
        Family::Gamma => {
            let k = args[0].value(b);
            let r = args[1].value(b);
            let lr = b.log(r);
            let t1 = b.mul(k, lr);
            let lg = b.ln_gamma(k);
            let lx = b.log(x);
            let km1 = b.add_c(k, -1.0);
            let t2 = b.mul(km1, lx);
            let rx = b.mul(r, x);
            let s = b.sub(t1, lg);
            let s = b.add(s, t2);
            b.sub(s, rx)
        }
        Family::HalfCauchy => {
            let s = args[0].value(b);
            let z = b.div(x, s);
            let z2 = b.powf(z, 2.0);
            let one = b.c(1.0);
            let d = b.add(one, z2);
            let ld = b.log(d);
            let ls = b.log(s);
            let t = b.add(ld, ls);
            let t = b.neg(t);
            b.add_c(t, std::f64::consts::LN_2 - LN_PI)
        }
        Family::StudentT => {
            let nu = args[0].value(b);
            let mu = args[1].value(b);
            let s = args[2].value(b);
            let np1 = b.add_c(nu, 1.0);
            let half_np1 = b.mul_c(np1, 0.5);
            let half_nu = b.mul_c(nu, 0.5);
            let g1 = b.ln_gamma(half_np1);
            let g2 = b.ln_gamma(half_nu);
            let lnu = b.log(nu);
            let d = b.sub(x, mu);
            let z = b.div(d, s);
            let z2 = b.powf(z, 2.0);
            let r = b.div(z2, nu);
            let one = b.c(1.0);
            let q = b.add(one, r);
            let lq = b.log(q);
            let tail = b.mul(half_np1, lq);
            let ls = b.log(s);
            let t = b.sub(g1, g2);
            let h = b.mul_c(lnu, 0.5);
            let t = b.sub(t, h);
            let t = b.sub(t, ls);
            let t = b.sub(t, tail);
            b.add_c(t, -0.5 * LN_PI)
        }
        Family::Binomial => {
            let k = xc.expect("discrete observation");
            let n = args[0].value(b);
            let (lp, lq) = log_p_pair(b, args[1]);
            let n1 = b.add_c(n, 1.0);
            let g_n = b.ln_gamma(n1);
            let nmk = b.add_c(n, 1.0 - k);
            let g_nmk = b.ln_gamma(nmk);
            let t = b.sub(g_n, g_nmk);
            let mut acc = b.add_c(t, -statrs::function::gamma::ln_gamma(k + 1.0));
            if k > 0.0 {
                let t = b.mul_c(lp, k);
                acc = b.add(acc, t);
            }
            let nk = b.add_c(n, -k);
            let t = b.mul(nk, lq);
            b.add(acc, t)
        }
        Family::Bernoulli => {
            let k = xc.expect("discrete observation");
            let (lp, lq) = log_p_pair(b, args[0]);
            if k > 0.5 {
                lp
            } else {
                lq
            }
        }
        Family::Poisson => {
            let k = xc.expect("discrete observation");
            let (lr, r) = match args[0] {
                Arg::Log(z) => (z, b.exp(z)),
                other => {
                    let r = other.value(b);
                    (b.log(r), r)
                }
            };
            let mut acc = b.neg(r);
            if k > 0.0 {
                let t = b.mul_c(lr, k);
                acc = b.add(acc, t);
            }
            b.add_c(acc, -statrs::function::gamma::ln_gamma(k + 1.0))
        }
        Family::BetaBinomial => {
            let k = xc.expect("discrete observation");
            let n = args[0].value(b);
            let a = args[1].value(b);
            let bb = args[2].value(b);
            let n1 = b.add_c(n, 1.0);
            let g_n = b.ln_gamma(n1);
            let nmk1 = b.add_c(n, 1.0 - k);
            let g_nmk = b.ln_gamma(nmk1);
            let lc = b.sub(g_n, g_nmk);
            let lc = b.add_c(lc, -statrs::function::gamma::ln_gamma(k + 1.0));
            let ak = b.add_c(a, k);
            let nk = b.add_c(n, -k);
            let bnk = b.add(bb, nk);
            let num = lbeta(b, ak, bnk);
            let den = lbeta(b, a, bb);
            let t = b.sub(num, den);
            b.add(lc, t)
        }
    }
}

fn normal_lpdf<B: Arith>(b: &mut B, x: B::V, mu: B::V, s: B::V) -> B::V {
    let d = b.sub(x, mu);
    let z = b.div(d, s);
    let z2 = b.powf(z, 2.0);
    let q = b.mul_c(z2, -0.5);
    let ls = b.log(s);
    let t = b.sub(q, ls);
    b.add_c(t, -0.5 * LN_2PI)
}

fn bad(family: Family, args: &[f64]) -> ModelError {
    ModelError::Numeric(format!("invalid arguments {args:?} for {family}"))
}

/// Draws one value of `family(args)`.
pub(crate) fn sample<R: Rng + ?Sized>(family: Family, args: &[f64], rng: &mut R) -> Result<f64, ModelError> {
    let e = || bad(family, args);
    if args.iter().any(|a| !a.is_finite()) {
        return Err(e());
    }
    Ok(match family {
        Family::Normal => {
            if args[1] == 0.0 {
                args[0]
            } else {
                Normal::new(args[0], args[1]).map_err(|_| e())?.sample(rng)
            }
        }
        Family::LogNormal => LogNormal::new(args[0], args[1]).map_err(|_| e())?.sample(rng),
        Family::HalfNormal => Normal::new(0.0, args[0]).map_err(|_| e())?.sample(rng).abs(),
        Family::Uniform => {
            if args[0] >= args[1] {
                return Err(e());
            }
            rng.random_range(args[0]..args[1])
        }
        Family::Exponential => Exp::new(args[0]).map_err(|_| e())?.sample(rng),
        Family::Beta => Beta::new(args[0], args[1]).map_err(|_| e())?.sample(rng),
        Family::Gamma => {
            if args[1] <= 0.0 {
                return Err(e());
            }
            Gamma::new(args[0], 1.0 / args[1]).map_err(|_| e())?.sample(rng)
        }
        Family::HalfCauchy => Cauchy::new(0.0, args[0]).map_err(|_| e())?.sample(rng).abs(),
        Family::StudentT => {
            if args[2] <= 0.0 {
                return Err(e());
            }
            args[1] + args[2] * StudentT::new(args[0]).map_err(|_| e())?.sample(rng)
        }
        Family::Binomial => {
            let n = as_count(args[0]).ok_or_else(e)?;
            if !(0.0..=1.0).contains(&args[1]) {
                return Err(e());
            }
            Binomial::new(n, args[1]).map_err(|_| e())?.sample(rng) as f64
        }
        Family::Bernoulli => {
            if !(0.0..=1.0).contains(&args[0]) {
                return Err(e());
            }
            f64::from(u8::from(rng.random::<f64>() < args[0]))
        }
        Family::Poisson => {
            if args[0] < 0.0 {
                return Err(e());
            }
            if args[0] == 0.0 {
                0.0
            } else {
                Poisson::new(args[0]).map_err(|_| e())?.sample(rng)
            }
        }
        Family::BetaBinomial => {
            let n = as_count(args[0]).ok_or_else(e)?;
            let p = Beta::new(args[1], args[2]).map_err(|_| e())?.sample(rng);
            Binomial::new(n, p).map_err(|_| e())?.sample(rng) as f64
        }
    })
}

fn as_count(v: f64) -> Option<u64> {
    (v >= 0.0 && v.fract() == 0.0).then_some(v as u64)
}

/// Checks that an observed value lies in the support of a discrete family.
pub(crate) fn valid_observation(family: Family, x: f64) -> bool {
    match family {
        Family::Binomial | Family::Poisson | Family::BetaBinomial => x >= 0.0 && x.fract() == 0.0,
        Family::Bernoulli => x == 0.0 || x == 1.0,
        Family::HalfNormal | Family::Exponential | Family::Gamma | Family::LogNormal | Family::HalfCauchy => x > 0.0,
        Family::Beta => x > 0.0 && x < 1.0,
        _ => x.is_finite(),
    }
}

/// Reason why a prior with these (numeric) arguments should not be used to
/// simulate data, if any. Scales of 1e3 and beyond, or shape/rate below
/// 1e-2, put essentially all mass at absurd magnitudes.
pub(crate) fn diffuse_reason(family: Family, args: &[f64]) -> Option<String> {
    const SCALE_MAX: f64 = 1e3;
    const SHAPE_MIN: f64 = 1e-2;
    let check_scale = |s: f64, what: &str| (s >= SCALE_MAX).then(|| format!("{what} {s} is at least {SCALE_MAX}"));
    match family {
        Family::Normal | Family::LogNormal => check_scale(args[1], "scale"),
        Family::StudentT => check_scale(args[2], "scale"),
        Family::HalfNormal | Family::HalfCauchy => check_scale(args[0], "scale"),
        Family::Exponential => (args[0] <= 1.0 / SCALE_MAX).then(|| format!("rate {} is below {}", args[0], 1.0 / SCALE_MAX)),
        Family::Gamma => (args[0] < SHAPE_MIN || args[1] < SHAPE_MIN)
            .then(|| format!("shape {} / rate {} below {SHAPE_MIN}", args[0], args[1])),
        Family::Uniform => check_scale(args[1] - args[0], "width"),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::super::eval::F64;
    use super::*;

    fn lp(f: Family, args: &[f64], x: f64) -> f64 {
        let a: Vec<Arg<f64>> = args.iter().map(|&v| Arg::Plain(v)).collect();
        log_density(&mut F64, f, &a, x, Some(x))
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn densities_match_statrs() {
        use statrs::distribution::{Continuous, Discrete};
        let d = statrs::distribution::Normal::new(1.0, 2.0).unwrap();
        close(lp(Family::Normal, &[1.0, 2.0], 0.3), d.ln_pdf(0.3));
        let d = statrs::distribution::Gamma::new(2.5, 1.5).unwrap();
        close(lp(Family::Gamma, &[2.5, 1.5], 0.7), d.ln_pdf(0.7));
        let d = statrs::distribution::Beta::new(2.0, 3.0).unwrap();
        close(lp(Family::Beta, &[2.0, 3.0], 0.4), d.ln_pdf(0.4));
        let d = statrs::distribution::StudentsT::new(0.5, 1.5, 4.0).unwrap();
        close(lp(Family::StudentT, &[4.0, 0.5, 1.5], -1.0), d.ln_pdf(-1.0));
        let d = statrs::distribution::LogNormal::new(0.2, 0.8).unwrap();
        close(lp(Family::LogNormal, &[0.2, 0.8], 1.3), d.ln_pdf(1.3));
        let d = statrs::distribution::Exp::new(2.0).unwrap();
        close(lp(Family::Exponential, &[2.0], 0.3), d.ln_pdf(0.3));
        let d = statrs::distribution::Binomial::new(0.3, 10).unwrap();
        close(lp(Family::Binomial, &[10.0, 0.3], 4.0), d.ln_pmf(4));
        close(lp(Family::Binomial, &[10.0, 0.3], 0.0), d.ln_pmf(0));
        let d = statrs::distribution::Poisson::new(3.2).unwrap();
        close(lp(Family::Poisson, &[3.2], 5.0), d.ln_pmf(5));
        close(lp(Family::Bernoulli, &[0.3], 1.0), 0.3f64.ln());
        close(lp(Family::HalfNormal, &[1.0], 1.0), std::f64::consts::LN_2 - 0.5 - 0.5 * LN_2PI);
        close(lp(Family::HalfCauchy, &[2.0], 1.0), (2.0 / (std::f64::consts::PI * 2.0 * 1.25)).ln());
        close(lp(Family::Uniform, &[0.0, 4.0], 1.0), -(4.0f64.ln()));
    }

    #[test]
    fn beta_binomial_sums_to_one() {
        let total: f64 = (0..=12).map(|k| lp(Family::BetaBinomial, &[12.0, 2.0, 3.5], k as f64).exp()).sum();
        close(total, 1.0);
    }

    #[test]
    fn logit_form_agrees_with_plain() {
        let z: f64 = 1.3;
        let p = crate::autodiff::logistic(z);
        let a = log_density(&mut F64, Family::Binomial, &[Arg::Plain(20.0), Arg::Logit(z)], 7.0, Some(7.0));
        close(a, lp(Family::Binomial, &[20.0, p], 7.0));
        let a = log_density(&mut F64, Family::Poisson, &[Arg::Log(z)], 2.0, Some(2.0));
        close(a, lp(Family::Poisson, &[z.exp()], 2.0));
    }
}
