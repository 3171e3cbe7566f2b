//! Nonlinear oscillator targets and polynomial corrections of a linear
//! (damped harmonic) oscillator.
//!
//! Targets use the textbook forms and default coefficients of common
//! sparse-identification benchmark suites:
//! - duffing: x' = v, v' = −0.2v − 0.05x − x³, from (1, 0)
//! - van_der_pol: x' = v, v' = 0.5(1 − x²)v − x, from (2, 0)
//! - cubic_damped: x' = −0.1x³ + 2v³, v' = −2x³ − 0.1v³, from (2, 0)

use serde::{Deserialize, Serialize};

use super::data::OdeDataset;
use super::fit::{fit_ode, FitPlan, FitResult, Stage, Trainable};
use super::model::OdeModel;
use super::OdeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oscillator {
    Duffing,
    VanDerPol,
    CubicDamped,
}

impl Oscillator {
    pub const ALL: [Oscillator; 3] = [Oscillator::Duffing, Oscillator::VanDerPol, Oscillator::CubicDamped];

    pub fn name(self) -> &'static str {
        match self {
            Oscillator::Duffing => "duffing",
            Oscillator::VanDerPol => "van_der_pol",
            Oscillator::CubicDamped => "cubic_damped",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    fn spec(self) -> &'static str {
        match self {
            Oscillator::Duffing => "dx/dt = v\ndv/dt = -0.2 * v - 0.05 * x - x ^ 3",
            Oscillator::VanDerPol => "dx/dt = v\ndv/dt = 0.5 * (1 - x ^ 2) * v - x",
            Oscillator::CubicDamped => "dx/dt = -0.1 * x ^ 3 + 2 * v ^ 3\ndv/dt = -2 * x ^ 3 - 0.1 * v ^ 3",
        }
    }

    pub fn y0(self) -> [f64; 2] {
        match self {
            Oscillator::Duffing => [1.0, 0.0],
            Oscillator::VanDerPol | Oscillator::CubicDamped => [2.0, 0.0],
        }
    }

    /// Noise-free samples every `dt_obs` on [0, t_end], split at `train_end`.
    pub fn simulate(self, dt_obs: f64, t_end: f64, train_end: f64, h: f64) -> Result<OdeDataset, OdeError> {
        let m = OdeModel::parse(self.spec())?;
        let per = (dt_obs / h).round() as usize;
        let rows = (t_end / dt_obs + 1e-9).floor() as usize + 1;
        let tr = m.integrate(&[], &self.y0(), 0.0, h, per * (rows - 1))?;
        if tr.blowup.is_some() {
            return Err(OdeError::Invalid(format!("{} blew up", self.name())));
        }
        let idx: Vec<usize> = (0..rows).map(|r| r * per).collect();
        Ok(OdeDataset::new(
            self.name(),
            idx.iter().map(|&i| tr.t[i]).collect(),
            vec!["x".into(), "v".into()],
            idx.iter().map(|&i| tr.y[i].clone()).collect(),
        )?
        .with_train_end(train_end))
    }
}

/// Linear oscillator x' = a·x + b·v, v' = c·x + d·v (started as an undamped
/// unit-frequency oscillator) plus, for `degree ≥ 2`, one trainable
/// coefficient per monomial x^i v^j with 2 ≤ i + j ≤ degree in each
/// equation, started at zero. Degrees below 2 add nothing.
pub fn corrected_sho_spec(degree: usize) -> String {
    let mut params = String::from("param a = 0\nparam b = 1\nparam c = -1\nparam d = 0\n");
    let (mut fx, mut fv) = (String::from("a * x + b * v"), String::from("c * x + d * v"));
    for total in 2..=degree {
        for i in (0..=total).rev() {
            let j = total - i;
            let mono = match (i, j) {
                (i, 0) => format!("x ^ {i}"),
                (0, j) => format!("v ^ {j}"),
                (1, 1) => "x * v".to_string(),
                (1, j) => format!("x * v ^ {j}"),
                (i, 1) => format!("x ^ {i} * v"),
                (i, j) => format!("x ^ {i} * v ^ {j}"),
            };
            for (eq, side) in [("px", &mut fx), ("pv", &mut fv)] {
                let name = format!("{eq}_{i}_{j}");
                params.push_str(&format!("param {name} = 0\n"));
                side.push_str(&format!(" + {name} * {mono}"));
            }
        }
    }
    format!("{params}dx/dt = {fx}\ndv/dt = {fv}\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorFit {
    pub kind: Oscillator,
    pub degree: usize,
    pub sho: FitResult,
    pub corrected: FitResult,
}

impl OscillatorFit {
    pub fn param(&self, name: &str) -> Option<f64> {
        let i = self.corrected.param_names.iter().position(|n| n == name)?;
        Some(self.corrected.params[i])
    }
}

/// Fits the plain linear oscillator and its degree-`degree` correction.
pub fn oscillator_suite(kind: Oscillator, degree: usize, plan: &FitPlan) -> Result<OscillatorFit, OdeError> {
    let data = kind.simulate(0.1, 15.0, 10.0, plan.h)?;
    let fit = |spec: &str| {
        let m = OdeModel::parse(spec)?;
        fit_ode(&m, &data, plan, m.initial_params(0))
    };
    Ok(OscillatorFit { kind, degree, sho: fit(&corrected_sho_spec(1))?, corrected: fit(&corrected_sho_spec(degree))? })
}

/// Plan used for the oscillator suite: one stage over everything.
pub fn default_plan() -> FitPlan {
    FitPlan { stages: vec![Stage::new(Trainable::All).iterations(1500).lr(0.01)], h: 0.01 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_monomials() {
        let s = corrected_sho_spec(3);
        let m = OdeModel::parse(&s).unwrap();
        // 4 linear + 2 equations x (3 quadratic + 4 cubic) monomials.
        assert_eq!(m.dim(), 4 + 2 * 7);
        assert_eq!(corrected_sho_spec(0), corrected_sho_spec(1));
    }

    #[test]
    fn simulated_targets_stay_bounded() {
        for k in Oscillator::ALL {
            let d = k.simulate(0.1, 15.0, 10.0, 0.01).unwrap();
            assert_eq!(d.t.len(), 151);
            assert_eq!(d.split, 101);
            assert!(d.y.iter().flatten().all(|v| v.abs() < 10.0), "{}", k.name());
        }
    }
}
