//! Prior simulation and posterior-predictive summaries.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ast::{ModelProgram, ParamDecl};
use super::compile::{bind, CompiledModel};
use super::data::DataTable;
use super::dist::{diffuse_reason, sample};
use super::eval::{eval_dist_args, walk, Bound, Env, TArg, TVal, F64};
use super::ModelError;

/// One joint draw of parameters and synthetic observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDraw {
    /// Parameter values in declaration order.
    pub params: Vec<(String, Vec<f64>)>,
    /// Simulated observations keyed by dataset column name.
    pub observations: Vec<(String, Vec<f64>)>,
}

impl PriorDraw {
    /// Copy of `table` with the observed columns replaced by the simulation.
    pub fn apply_to(&self, table: &DataTable) -> Result<DataTable, ModelError> {
        let mut t = table.clone();
        for (name, col) in &self.observations {
            t.set_column(name, col.clone())?;
        }
        Ok(t)
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Draws parameters from their priors in declaration order (or takes them
/// from `fixed`), then observations from the likelihood.
///
/// Covariate columns come from `table`; observed columns may be absent.
/// Priors judged too diffuse to simulate from are an error unless the
/// parameter is fixed.
pub fn sample_prior<R: Rng + ?Sized>(
    program: &ModelProgram,
    table: &DataTable,
    fixed: &BTreeMap<String, Vec<f64>>,
    rng: &mut R,
) -> Result<PriorDraw, ModelError> {
    if let Some(name) = fixed.keys().find(|k| !program.param_decls().any(|p| &p.name == *k)) {
        return Err(ModelError::Data(format!("fixed value given for unknown parameter `{name}`")));
    }
    let bound = bind(program, table, false)?;
    let mut params = Vec::new();
    let mut hook = |_: &mut F64, decl: &ParamDecl, args: &[TArg<f64>], len: Option<usize>| {
        let count = len.unwrap_or(1);
        let vals = match fixed.get(&decl.name) {
            Some(v) if v.len() == count => v.clone(),
            // A single value broadcasts over a vector parameter.
            Some(v) if v.len() == 1 => vec![v[0]; count],
            Some(v) => {
                return Err(ModelError::Data(format!(
                    "`{}` needs {count} fixed value(s), got {}",
                    decl.name,
                    v.len()
                )))
            }
            None => {
                let mut out = Vec::with_capacity(count);
                for i in 0..count {
                    let a: Vec<f64> = args.iter().map(|t| t.at(i).value(&mut F64)).collect();
                    if let Some(reason) = diffuse_reason(decl.prior.family, &a) {
                        return Err(ModelError::DiffusePrior { name: decl.name.clone(), reason });
                    }
                    out.push(sample(decl.prior.family, &a, rng)?);
                }
                out
            }
        };
        params.push((decl.name.clone(), vals.clone()));
        Ok((
            match len {
                None => TVal::Scalar(vals[0]),
                Some(_) => TVal::Vector(vals),
            },
            0.0,
        ))
    };
    let (env, _) = walk(&mut F64, program, &bound, &mut hook)?;
    let observations = simulate_likelihood(program, &bound, &env, rng)?;
    let columns: BTreeMap<&str, &str> = program.data_decls().map(|d| (d.name.as_str(), d.column.as_str())).collect();
    Ok(PriorDraw {
        params,
        observations: observations.into_iter().map(|(n, v)| (columns[n.as_str()].to_string(), v)).collect(),
    })
}

/// One replicate of every observed column, keyed by declaration name.
fn simulate_likelihood<R: Rng + ?Sized>(
    program: &ModelProgram,
    bound: &Bound,
    env: &Env<f64>,
    rng: &mut R,
) -> Result<Vec<(String, Vec<f64>)>, ModelError> {
    let mut out = Vec::new();
    for l in program.likelihoods() {
        let args = eval_dist_args(&mut F64, &l.dist, env)?;
        let mut col = Vec::with_capacity(bound.n);
        for i in 0..bound.n {
            let a: Vec<f64> = args.iter().map(|t| t.at(i).value(&mut F64)).collect();
            col.push(sample(l.dist.family, &a, rng)?);
        }
        out.push((l.observed.clone(), col));
    }
    Ok(out)
}

/// Predictive mean and variance per observation of one observed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub column: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Simulates `replicates` datasets per posterior draw (constrained values,
/// layout of [`CompiledModel::constrain`]) and summarizes each observation
/// over all of them.
pub fn posterior_predictive<R: Rng + ?Sized>(
    model: &CompiledModel,
    draws: &[Vec<f64>],
    replicates: usize,
    rng: &mut R,
) -> Result<Vec<PredictiveSummary>, ModelError> {
    if draws.is_empty() || replicates == 0 {
        return Err(ModelError::Data("posterior predictive needs at least one draw and one replicate".into()));
    }
    let bound = model.bound();
    let program = model.program();
    let cols = program.likelihoods().count();
    // Welford accumulators per (column, row).
    let mut count = 0usize;
    let mut mean = vec![vec![0.0; bound.n]; cols];
    let mut m2 = vec![vec![0.0; bound.n]; cols];
    for theta in draws {
        let env = model.env_from_constrained(theta)?;
        for _ in 0..replicates {
            let sim = simulate_likelihood(program, bound, &env, rng)?;
            count += 1;
            for (c, (_, col)) in sim.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    let d = v - mean[c][i];
                    mean[c][i] += d / count as f64;
                    m2[c][i] += d * (v - mean[c][i]);
                }
            }
        }
    }
    let names: BTreeMap<&str, &str> = program.data_decls().map(|d| (d.name.as_str(), d.column.as_str())).collect();
    Ok(program
        .likelihoods()
        .enumerate()
        .map(|(c, l)| PredictiveSummary {
            column: names[l.observed.as_str()].to_string(),
            mean: mean[c].clone(),
            var: m2[c].iter().map(|s| s / count as f64).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::parse_model;
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn uniform_prior_mean() {
        let p = parse_model("model m {\n data y: vector[N]\n param a ~ Uniform(0, 3)\n y ~ Normal(a, 1)\n}").unwrap();
        let t = DataTable::from_pairs("d", &[("y", &[0.0])]).unwrap();
        let mut rng = rng_for(1, &[]);
        let n = 10_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += sample_prior(&p, &t, &BTreeMap::new(), &mut rng).unwrap().param("a").unwrap()[0];
        }
        assert!((s / n as f64 - 1.5).abs() < 0.03);
    }

    #[test]
    fn fixed_params_noiseless_curve() {
        let p = parse_model(
            "model d {\n data x: vector[N]\n data y: vector[N]\n param alpha ~ Normal(0, 1000)\n param beta ~ Normal(0, 1000)\n param lambda ~ Uniform(0.5, 1)\n param sigma ~ HalfNormal(1)\n y ~ Normal(alpha - beta * lambda ^ x, sigma)\n}",
        )
        .unwrap();
        let x = [1.0, 2.0, 5.0];
        let t = DataTable::from_pairs("d", &[("x", &x)]).unwrap();
        let fixed: BTreeMap<String, Vec<f64>> = [("alpha", 2.6), ("beta", 1.0), ("lambda", 0.87), ("sigma", 0.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), vec![v]))
            .collect();
        let d = sample_prior(&p, &t, &fixed, &mut rng_for(0, &[])).unwrap();
        let y = &d.observations[0].1;
        for (xi, yi) in x.iter().zip(y) {
            assert!((yi - (2.6 - 0.87f64.powf(*xi))).abs() < 1e-12);
        }
        // Without fixing alpha the Normal(0, 1000) prior is refused.
        let mut partial = fixed.clone();
        partial.remove("alpha");
        assert!(matches!(
            sample_prior(&p, &t, &partial, &mut rng_for(0, &[])),
            Err(ModelError::DiffusePrior { .. })
        ));
    }

    #[test]
    fn posterior_predictive_single_draw() {
        let p = parse_model("model m {\n data y: vector[N]\n param mu ~ Normal(0, 1)\n param s ~ HalfNormal(1)\n y ~ Normal(mu, s)\n}").unwrap();
        let t = DataTable::from_pairs("d", &[("y", &[0.0, 1.0])]).unwrap();
        let m = CompiledModel::new(&p, &t).unwrap();
        let pp = posterior_predictive(&m, &[vec![0.7, 1.3]], 10_000, &mut rng_for(3, &[])).unwrap();
        for i in 0..2 {
            assert!((pp[0].mean[i] - 0.7).abs() < 0.05);
            assert!((pp[0].var[i] - 1.69).abs() < 0.08);
        }
    }
}
