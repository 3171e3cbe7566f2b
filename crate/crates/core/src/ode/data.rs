use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OdeError;

/// Observed trajectories: CSV `t,<state>,<state>..`, with the rows from
/// `split` on held out for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeDataset {
    pub name: String,
    pub t: Vec<f64>,
    pub names: Vec<String>,
    /// `[row][state]`.
    pub y: Vec<Vec<f64>>,
    pub split: usize,
}

impl OdeDataset {
    pub fn new(name: impl Into<String>, t: Vec<f64>, names: Vec<String>, y: Vec<Vec<f64>>) -> Result<Self, OdeError> {
        if t.is_empty() || t.len() != y.len() {
            return Err(OdeError::Data(format!("{} times but {} rows", t.len(), y.len())));
        }
        if y.iter().any(|r| r.len() != names.len()) {
            return Err(OdeError::Data("ragged rows".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(OdeError::Data("times must be strictly increasing".into()));
        }
        let split = t.len();
        Ok(Self { name: name.into(), t, names, y, split })
    }

    /// Holds out every row with `t > train_end`.
    pub fn with_train_end(mut self, train_end: f64) -> Self {
        self.split = self.t.iter().position(|&t| t > train_end + 1e-9).unwrap_or(self.t.len());
        self
    }

    pub fn train_end(&self) -> f64 {
        self.t[self.split.max(1) - 1]
    }

    pub fn train(&self) -> Self {
        Self { t: self.t[..self.split].to_vec(), y: self.y[..self.split].to_vec(), split: self.split, ..self.clone() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.y.iter().map(|r| r[j]).collect())
    }

    pub fn from_csv_str(name: &str, text: &str) -> Result<Self, OdeError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers().map_err(|e| OdeError::Data(e.to_string()))?.iter().map(String::from).collect();
        if headers.first().map(String::as_str) != Some("t") || headers.len() < 2 {
            return Err(OdeError::Data("expected header `t,<state>,...`".into()));
        }
        let (mut t, mut y) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| OdeError::Data(e.to_string()))?;
            let row: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let row = row.map_err(|_| OdeError::Data(format!("row {}: bad number", i + 2)))?;
            t.push(row[0]);
            y.push(row[1..].to_vec());
        }
        Self::new(name, t, headers[1..].to_vec(), y)
    }

    pub fn from_csv(path: &Path) -> Result<Self, OdeError> {
        let text = std::fs::read_to_string(path).map_err(|e| OdeError::Data(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(path.file_stem().and_then(|s| s.to_str()).unwrap_or("ode"), &text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("t,{}\n", self.names.join(","));
        for (t, r) in self.t.iter().zip(&self.y) {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!("{t},{}\n", cells.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_split() {
        let d = OdeDataset::from_csv_str("lv", "t,b,c\n0,1,1\n0.5,1.2,0.9\n1.0,1.4,0.7\n").unwrap().with_train_end(0.5);
        assert_eq!(d.split, 2);
        assert_eq!(d.train().t.len(), 2);
        let again = OdeDataset::from_csv_str("lv", &d.to_csv()).unwrap().with_train_end(0.5);
        assert_eq!(again, d);
        assert!(OdeDataset::from_csv_str("x", "time,b\n0,1\n").is_err());
        assert!(OdeDataset::from_csv_str("x", "t,b\n1,1\n0,1\n").is_err());
    }
}
