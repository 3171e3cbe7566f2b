use std::sync::Arc;

use super::render::DatasetView;
use super::scorer::{GpScorer, OdeScorer, PplScorer, Scorer};
use super::{Backend, BoxloopError, LoopConfig};
use crate::gp::TimeSeriesDataset;
use crate::ode::OdeDataset;
use crate::probprog::DataTable;

/// A dataset for one backend.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopData {
    Gp(TimeSeriesDataset),
    /// `target` names the modeled column (used for anonymization).
    Ppl { table: DataTable, target: String },
    Ode(OdeDataset),
}

impl LoopData {
    pub fn backend(&self) -> Backend {
        match self {
            LoopData::Gp(_) => Backend::Gp,
            LoopData::Ppl { .. } => Backend::Ppl,
            LoopData::Ode(_) => Backend::Ode,
        }
    }

    /// What the agents see. Held-out rows (time series, ODE) are excluded.
    pub fn view(&self) -> DatasetView {
        match self {
            LoopData::Gp(d) => DatasetView {
                name: d.name.clone(),
                columns: vec![("x".into(), d.x.clone()), ("y".into(), d.y.clone())],
                description: d.metadata.clone(),
                train_rows: d.split,
            },
            LoopData::Ppl { table, .. } => DatasetView {
                name: table.name.clone(),
                columns: table.names.iter().cloned().zip(table.columns.iter().cloned()).collect(),
                description: table.metadata.clone(),
                train_rows: table.len(),
            },
            LoopData::Ode(d) => {
                let mut columns = vec![("t".to_string(), d.t.clone())];
                columns.extend(d.names.iter().enumerate().map(|(j, n)| (n.clone(), d.column(n).unwrap_or_else(|| d.y.iter().map(|r| r[j]).collect()))));
                DatasetView { name: d.name.clone(), columns, description: None, train_rows: d.split }
            }
        }
    }

    /// Domain-agnostic version: descriptions dropped and, for tables,
    /// columns renamed to `x0, x1, ...` with the target becoming `y`.
    /// Time series already use `x, y`; ODE state names are kept because
    /// programs refer to them, and the description is dropped.
    pub fn anonymized(&self) -> Result<LoopData, BoxloopError> {
        Ok(match self {
            LoopData::Gp(d) => LoopData::Gp(TimeSeriesDataset { name: "series".into(), metadata: None, ..d.clone() }),
            LoopData::Ppl { table, target } => {
                let (t, _) = table.anonymized(target).map_err(|e| BoxloopError::Data(e.to_string()))?;
                LoopData::Ppl { table: DataTable { name: "data".into(), ..t }, target: "y".into() }
            }
            LoopData::Ode(d) => LoopData::Ode(d.clone()),
        })
    }

    /// Applies the config's metadata flag.
    pub fn for_config(&self, cfg: &LoopConfig) -> Result<LoopData, BoxloopError> {
        if cfg.metadata {
            Ok(self.clone())
        } else {
            self.anonymized()
        }
    }

    /// Scorer with default fit settings.
    pub fn scorer(&self, cfg: &LoopConfig) -> Arc<dyn Scorer> {
        match self {
            LoopData::Gp(d) => Arc::new(GpScorer::new(d.clone(), cfg.augmented_kernels)),
            LoopData::Ppl { table, .. } => Arc::new(PplScorer::new(table.clone())),
            LoopData::Ode(d) => Arc::new(OdeScorer::new(d.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anonymization_renames_and_drops_description() {
        let table = DataTable::from_pairs("dugongs", &[("age", &[1.0, 2.0]), ("length", &[1.8, 2.0])]).unwrap().with_metadata("sea cows");
        let d = LoopData::Ppl { table, target: "length".into() };
        let a = d.anonymized().unwrap();
        let v = a.view();
        let names: Vec<&str> = v.columns.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(names, ["x0", "y"]);
        assert!(v.description.is_none());
        let text = super::super::render::render_dataset(&v);
        assert!(!text.contains("age") && !text.contains("sea cows") && !text.contains("dugongs"));
    }
}
