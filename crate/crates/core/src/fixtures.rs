//! Bundled datasets and reference programs (the files under `fixtures/`).

use crate::gp::TimeSeriesDataset;
use crate::probprog::{parse_model, DataTable, ModelError, ModelProgram};

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../../fixtures/", $name)))),*]
    };
}

static FILES: &[(&str, &str)] = bundle![
    "ppl/eight_schools.csv",
    "ppl/eight_schools.meta.txt",
    "ppl/eight_schools_expert.ppl",
    "ppl/dugongs.csv",
    "ppl/dugongs.meta.txt",
    "ppl/dugongs_expert.ppl",
    "ppl/surgical.csv",
    "ppl/surgical.meta.txt",
    "ppl/surgical_expert.ppl",
    "ppl/peregrine.csv",
    "ppl/peregrine.meta.txt",
    "ppl/peregrine_expert.ppl",
    "ppl/von_bertalanffy.ppl",
    "series/air.csv",
    "series/air.meta.txt",
    "series/beer.csv",
    "series/beer.meta.txt",
    "series/heart.csv",
    "series/heart.meta.txt",
    "series/milk.csv",
    "series/milk.meta.txt",
    "series/wine.csv",
    "series/wine.meta.txt",
    "series/wool.csv",
    "series/wool.meta.txt",
];

/// The four PPL datasets, with the column each expert program models.
pub const PPL_DATASETS: [(&str, &str); 4] =
    [("eight_schools", "y"), ("dugongs", "length"), ("surgical", "r"), ("peregrine", "count")];

pub const TIME_SERIES: [&str; 6] = ["air", "beer", "heart", "milk", "wine", "wool"];

/// Raw text of a bundled file, by path relative to `fixtures/`.
pub fn file(path: &str) -> Option<&'static str> {
    FILES.iter().find(|(p, _)| *p == path).map(|(_, t)| *t)
}

fn strip(name: &str) -> &str {
    let name = name.strip_prefix("fixtures/").unwrap_or(name);
    let name = name.strip_prefix("ppl/").unwrap_or(name);
    name.strip_suffix(".ppl").unwrap_or(name)
}

/// Program source by name: `dugongs_expert`, `fixtures/dugongs_expert`, etc.
pub fn program_source(name: &str) -> Option<&'static str> {
    file(&format!("ppl/{}.ppl", strip(name)))
}

pub fn program(name: &str) -> Result<ModelProgram, ModelError> {
    let src = program_source(name).ok_or_else(|| ModelError::Data(format!("no bundled program `{name}`")))?;
    parse_model(src)
}

/// Expert program for one of [`PPL_DATASETS`].
pub fn expert(dataset: &str) -> Result<ModelProgram, ModelError> {
    program(&format!("{}_expert", strip(dataset)))
}

pub fn dataset(name: &str) -> Result<DataTable, ModelError> {
    let name = strip(name).strip_suffix(".csv").unwrap_or(strip(name));
    let csv = file(&format!("ppl/{name}.csv")).ok_or_else(|| ModelError::Data(format!("no bundled dataset `{name}`")))?;
    let t = DataTable::from_csv_str(name, csv)?;
    Ok(match file(&format!("ppl/{name}.meta.txt")) {
        Some(m) => t.with_metadata(m),
        None => t,
    })
}

pub fn time_series(name: &str) -> Option<TimeSeriesDataset> {
    let name = name.strip_prefix("fixtures/").unwrap_or(name);
    let name = name.strip_prefix("series/").unwrap_or(name);
    let name = name.strip_suffix(".csv").unwrap_or(name);
    let ds = TimeSeriesDataset::from_csv_str(name, file(&format!("series/{name}.csv"))?).ok()?;
    Some(match file(&format!("series/{name}.meta.txt")) {
        Some(m) => ds.with_metadata(m.trim()),
        None => ds,
    })
}

/// Every bundled program, name and source.
pub fn all_programs() -> impl Iterator<Item = (&'static str, &'static str)> {
    FILES.iter().filter_map(|(p, t)| Some((p.strip_prefix("ppl/")?.strip_suffix(".ppl")?, *t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probprog::CompiledModel;

    #[test]
    fn everything_loads() {
        for (name, col) in PPL_DATASETS {
            let t = dataset(name).unwrap();
            assert!(t.column(col).is_some(), "{name}");
            assert!(t.metadata.is_some());
            let m = CompiledModel::new(&expert(name).unwrap(), &t).unwrap();
            assert!(m.dim() > 0);
        }
        for name in TIME_SERIES {
            let s = time_series(name).unwrap();
            assert!(s.x.len() >= 50, "{name}");
        }
        assert_eq!(all_programs().count(), 5);
        let vb = program("fixtures/von_bertalanffy").unwrap();
        CompiledModel::new(&vb, &dataset("dugongs").unwrap()).unwrap();
    }

    #[test]
    fn airline_is_the_classic_series() {
        let s = time_series("air").unwrap();
        assert_eq!(s.y.len(), 144);
        assert_eq!((s.y[0], s.y[143]), (112.0, 432.0));
    }
}
