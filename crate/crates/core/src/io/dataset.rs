//! Dataset resolution: bundled names, simulated presets, or CSV paths.

use std::path::Path;

use super::config::DataOptions;
use super::IoError;
use crate::boxloop::{Backend, LoopData};
use crate::fixtures;
use crate::gp::TimeSeriesDataset;
use crate::ode::lv::{self, LvPreset};
use crate::ode::{OdeDataset, Oscillator};
use crate::probprog::DataTable;

/// Observation grid of the oscillator datasets: (dt_obs, t_end, train_end, h).
pub const OSCILLATOR_GRID: (f64, f64, f64, f64) = (0.1, 15.0, 10.0, 0.01);

/// Names accepted per backend besides CSV paths.
pub fn known_names(backend: Backend) -> Vec<&'static str> {
    match backend {
        Backend::Gp => fixtures::TIME_SERIES.to_vec(),
        Backend::Ppl => fixtures::PPL_DATASETS.iter().map(|d| d.0).collect(),
        Backend::Ode => {
            let mut v = vec!["lv_decaying", "lv_oscillating"];
            v.extend(Oscillator::ALL.iter().map(|o| o.name()));
            v
        }
    }
}

/// Loads `spec` for `backend`. A spec naming an existing file (or ending in
/// `.csv`) is read as CSV; anything else is looked up among the bundled
/// datasets and simulated presets. `metadata` replaces the description.
pub fn resolve(backend: Backend, spec: &str, opts: &DataOptions, metadata: Option<&Path>) -> Result<LoopData, IoError> {
    let path = Path::new(spec);
    let data = if spec.ends_with(".csv") || path.is_file() {
        from_csv(backend, path, opts)?
    } else {
        named(backend, spec, opts)?
    };
    let Some(meta) = metadata else { return Ok(data) };
    let text = std::fs::read_to_string(meta).map_err(|e| IoError::Io(format!("{}: {e}", meta.display())))?;
    let text = text.trim().to_string();
    Ok(match data {
        LoopData::Gp(d) => LoopData::Gp(d.with_metadata(text)),
        LoopData::Ppl { table, target } => LoopData::Ppl { table: table.with_metadata(text), target },
        ode @ LoopData::Ode(_) => ode,
    })
}

fn data_err(e: impl std::fmt::Display) -> IoError {
    IoError::Data(e.to_string())
}

fn from_csv(backend: Backend, path: &Path, opts: &DataOptions) -> Result<LoopData, IoError> {
    if !path.is_file() {
        return Err(IoError::Io(format!("{}: no such file", path.display())));
    }
    Ok(match backend {
        Backend::Gp => {
            let d = TimeSeriesDataset::from_csv(path).map_err(data_err)?;
            LoopData::Gp(match opts.split {
                Some(s) => d.with_split(s).map_err(data_err)?,
                None => d,
            })
        }
        Backend::Ppl => {
            let table = DataTable::from_csv(path).map_err(data_err)?;
            let target = match &opts.target {
                Some(t) if table.column(t).is_some() => t.clone(),
                Some(t) => return Err(IoError::Data(format!("{}: no column `{t}`", path.display()))),
                None => table.names.last().cloned().ok_or_else(|| IoError::Data("empty table".into()))?,
            };
            LoopData::Ppl { table, target }
        }
        Backend::Ode => {
            let d = OdeDataset::from_csv(path).map_err(data_err)?;
            LoopData::Ode(match opts.train_end {
                Some(te) => d.with_train_end(te),
                None => d,
            })
        }
    })
}

fn named(backend: Backend, name: &str, opts: &DataOptions) -> Result<LoopData, IoError> {
    let unknown = || {
        IoError::Data(format!("unknown {} dataset `{name}` (known: {})", backend.name(), known_names(backend).join(", ")))
    };
    match backend {
        Backend::Gp => {
            let d = fixtures::time_series(name).ok_or_else(unknown)?;
            Ok(LoopData::Gp(match opts.split {
                Some(s) => d.with_split(s).map_err(data_err)?,
                None => d,
            }))
        }
        Backend::Ppl => {
            let (n, default_target) = fixtures::PPL_DATASETS.iter().find(|d| d.0 == name).ok_or_else(unknown)?;
            let table = fixtures::dataset(n).map_err(data_err)?;
            let target = opts.target.clone().unwrap_or_else(|| default_target.to_string());
            if table.column(&target).is_none() {
                return Err(IoError::Data(format!("{name}: no column `{target}`")));
            }
            Ok(LoopData::Ppl { table, target })
        }
        Backend::Ode => {
            let mut d = simulate_named(name, opts.seed.unwrap_or(0))?.ok_or_else(unknown)?;
            if let Some(te) = opts.train_end {
                d = d.with_train_end(te);
            }
            Ok(LoopData::Ode(d))
        }
    }
}

/// Trajectory datasets generated from a named preset: the LV presets
/// (noisy, seeded) and the noiseless oscillators.
pub fn simulate_named(name: &str, seed: u64) -> Result<Option<OdeDataset>, IoError> {
    if let Some(p) = LvPreset::by_name(name) {
        return Ok(Some(p.simulate(seed).map_err(data_err)?.data));
    }
    if let Some(o) = Oscillator::from_name(name) {
        let (dt, t_end, train_end, h) = OSCILLATOR_GRID;
        return Ok(Some(o.simulate(dt, t_end, train_end, h).map_err(data_err)?));
    }
    Ok(None)
}

/// The program a run's best proposal is compared against, if one exists:
/// the expert program of a bundled table, or the standard Lotka-Volterra
/// model for predator-prey data.
pub fn reference_program(backend: Backend, dataset: &str) -> Option<String> {
    match backend {
        Backend::Ppl => fixtures::PPL_DATASETS
            .iter()
            .find(|d| d.0 == dataset)
            .and_then(|d| fixtures::program_source(&format!("{}_expert", d.0)))
            .map(str::to_string),
        Backend::Ode => LvPreset::by_name(dataset).map(|_| lv::STANDARD_LV.to_string()),
        Backend::Gp => None,
    }
}
