use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Named numeric columns of equal length, plus an optional free-text
/// description of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub name: String,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub metadata: Option<String>,
}

impl DataTable {
    pub fn new(name: &str, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if names.len() != columns.len() {
            return Err(ModelError::Data(format!("{} names for {} columns", names.len(), columns.len())));
        }
        if let Some(first) = columns.first() {
            if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != first.len()) {
                return Err(ModelError::Data(format!(
                    "column `{}` has {} rows, expected {}",
                    names[i],
                    c.len(),
                    first.len()
                )));
            }
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ModelError::Data(format!("duplicate column `{n}`")));
            }
        }
        Ok(Self { name: name.to_string(), names, columns, metadata: None })
    }

    pub fn from_pairs(name: &str, cols: &[(&str, &[f64])]) -> Result<Self, ModelError> {
        Self::new(
            name,
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            cols.iter().map(|(_, c)| c.to_vec()).collect(),
        )
    }

    pub fn with_metadata(mut self, text: impl Into<String>) -> Self {
        self.metadata = Some(text.into());
        self
    }

    pub fn from_csv_str(name: &str, text: &str) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let names: Vec<String> =
            rdr.headers().map_err(|e| ModelError::Data(e.to_string()))?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::Data(e.to_string()))?;
            for (j, col) in columns.iter_mut().enumerate() {
                let v = rec
                    .get(j)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ModelError::Data(format!("row {}: bad value in column `{}`", row + 2, names[j])))?;
                col.push(v);
            }
        }
        Self::new(name, names, columns)
    }

    /// Reads `path`; a sibling file with extension `.meta.txt`
    /// (`dugongs.csv` -> `dugongs.meta.txt`) becomes the metadata.
    pub fn from_csv(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Data(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
        let mut t = Self::from_csv_str(stem, &text)?;
        let meta = path.with_file_name(format!("{stem}.meta.txt"));
        if let Ok(m) = std::fs::read_to_string(meta) {
            t.metadata = Some(m);
        }
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{}", c[i])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<(), ModelError> {
        if !self.is_empty() && values.len() != self.len() {
            return Err(ModelError::Data(format!("column `{name}` needs {} rows, got {}", self.len(), values.len())));
        }
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
            }
        }
        Ok(())
    }

    /// Renames the columns to `x0, x1, ...` with `target` becoming `y`,
    /// and drops the metadata. Returns the table and the (old, new) names.
    pub fn anonymized(&self, target: &str) -> Result<(DataTable, Vec<(String, String)>), ModelError> {
        if !self.names.iter().any(|n| n == target) {
            return Err(ModelError::Data(format!("no column `{target}`")));
        }
        let mut k = 0;
        let mapping: Vec<(String, String)> = self
            .names
            .iter()
            .map(|n| {
                let new = if n == target {
                    "y".to_string()
                } else {
                    k += 1;
                    format!("x{}", k - 1)
                };
                (n.clone(), new)
            })
            .collect();
        let t = DataTable {
            name: self.name.clone(),
            names: mapping.iter().map(|(_, n)| n.clone()).collect(),
            columns: self.columns.clone(),
            metadata: None,
        };
        Ok((t, mapping))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = DataTable::from_csv_str("d", "age, length\n1,1.8\n1.5,1.85\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.column("length"), Some(&[1.8, 1.85][..]));
        assert_eq!(DataTable::from_csv_str("d", &t.to_csv()).unwrap(), t);
        assert!(DataTable::from_csv_str("d", "a,b\n1,x\n").is_err());
    }

    #[test]
    fn anonymize_renames_and_drops_metadata() {
        let t = DataTable::from_csv_str("d", "age,length,site\n1,2,3\n").unwrap().with_metadata("growth of dugongs");
        let (a, map) = t.anonymized("length").unwrap();
        assert_eq!(a.names, ["x0", "y", "x1"]);
        assert!(a.metadata.is_none());
        assert_eq!(map[1], ("length".to_string(), "y".to_string()));
    }
}
