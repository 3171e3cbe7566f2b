use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GpError;
use crate::stats;

/// Univariate time series with a train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Index of the first test point.
    pub split: usize,
    pub metadata: Option<String>,
}

/// Default share of each series used for training; the tail is held out.
pub const TRAIN_FRACTION: f64 = 0.8;

impl TimeSeriesDataset {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, GpError> {
        if x.len() != y.len() {
            return Err(GpError::LengthMismatch { left: x.len(), right: y.len() });
        }
        if x.is_empty() {
            return Err(GpError::EmptyData);
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GpError::Data("x must be strictly increasing".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(GpError::Data("non-finite value".into()));
        }
        let split = (((x.len() as f64) * TRAIN_FRACTION).round() as usize).clamp(1, x.len());
        Ok(Self { name: name.into(), x, y, split, metadata: None })
    }

    pub fn with_split(mut self, split: usize) -> Result<Self, GpError> {
        if split == 0 || split > self.x.len() {
            return Err(GpError::Data(format!("split {split} outside 1..={}", self.x.len())));
        }
        self.split = split;
        Ok(self)
    }

    pub fn with_metadata(mut self, text: impl Into<String>) -> Self {
        self.metadata = Some(text.into());
        self
    }

    /// Reads a CSV with header `x,y`.
    pub fn from_csv_str(name: &str, text: &str) -> Result<Self, GpError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| GpError::Data(e.to_string()))?.clone();
        let xi = headers.iter().position(|h| h == "x");
        let yi = headers.iter().position(|h| h == "y");
        let (Some(xi), Some(yi)) = (xi, yi) else {
            return Err(GpError::Data("expected header `x,y`".into()));
        };
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| GpError::Data(e.to_string()))?;
            let parse = |i: usize| -> Result<f64, GpError> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| GpError::Data(format!("row {}: bad number", row + 2)))
            };
            x.push(parse(xi)?);
            y.push(parse(yi)?);
        }
        Self::new(name, x, y)
    }

    pub fn from_csv(path: &Path) -> Result<Self, GpError> {
        let text = std::fs::read_to_string(path).map_err(|e| GpError::Data(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
        Self::from_csv_str(name, &text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (a, b) in self.x.iter().zip(&self.y) {
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }

    pub fn train(&self) -> (&[f64], &[f64]) {
        (&self.x[..self.split], &self.y[..self.split])
    }

    pub fn test(&self) -> (&[f64], &[f64]) {
        (&self.x[self.split..], &self.y[self.split..])
    }

    /// Standardizes x and y with train-split statistics.
    pub fn normalized(&self) -> SeriesSplit {
        let (xt, yt) = self.train();
        let norm = Normalizer::fit(xt, yt);
        let nx: Vec<f64> = self.x.iter().map(|v| norm.x(*v)).collect();
        let ny: Vec<f64> = self.y.iter().map(|v| norm.y(*v)).collect();
        SeriesSplit {
            x_train: nx[..self.split].to_vec(),
            y_train: ny[..self.split].to_vec(),
            x_test: nx[self.split..].to_vec(),
            y_test: ny[self.split..].to_vec(),
            normalizer: norm,
        }
    }
}

/// Affine standardization fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub x_mean: f64,
    pub x_sd: f64,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl Normalizer {
    pub fn fit(x: &[f64], y: &[f64]) -> Self {
        let guard = |s: f64| if s.is_finite() && s > 0.0 { s } else { 1.0 };
        Self {
            x_mean: stats::mean(x),
            x_sd: guard(stats::sd(x)),
            y_mean: stats::mean(y),
            y_sd: guard(stats::sd(y)),
        }
    }

    pub fn x(&self, v: f64) -> f64 {
        (v - self.x_mean) / self.x_sd
    }

    pub fn y(&self, v: f64) -> f64 {
        (v - self.y_mean) / self.y_sd
    }

    pub fn y_inverse(&self, v: f64) -> f64 {
        v * self.y_sd + self.y_mean
    }
}

/// Normalized train/test arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSplit {
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    pub y_test: Vec<f64>,
    pub normalizer: Normalizer,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_split() {
        let ds = TimeSeriesDataset::from_csv_str("s", "x,y\n0,1\n1,2\n2,3\n3,5\n4,8\n").unwrap();
        assert_eq!(ds.split, 4);
        assert_eq!(ds.test().1, &[8.0]);
        let again = TimeSeriesDataset::from_csv_str("s", &ds.to_csv()).unwrap();
        assert_eq!(again, ds);
        let s = ds.normalized();
        assert!(crate::stats::mean(&s.y_train).abs() < 1e-12);
        assert!((crate::stats::sd(&s.x_train) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsorted_and_bad_header() {
        assert!(TimeSeriesDataset::new("s", vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(TimeSeriesDataset::from_csv_str("s", "t,v\n0,1\n").is_err());
        let ds = TimeSeriesDataset::new("s", vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(ds.clone().with_split(3).is_err());
        assert!(ds.with_split(2).is_ok());
    }
}
