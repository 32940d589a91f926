//! Per-column standardization and small summary helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};

/// Column means and population standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows`; constant columns get a unit scale so they map to 0.
    pub fn fit_lenient(rows: &[Vec<f64>]) -> Standardizer {
        let (mean, std) = column_moments(rows);
        let std = std.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    /// Fits on `rows`, rejecting constant columns.
    pub fn fit_strict(rows: &[Vec<f64>], names: &[String]) -> Result<Standardizer> {
        let (mean, std) = column_moments(rows);
        if let Some(j) = std.iter().position(|&s| !(s > 0.0)) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            return Err(UpmiError::ZeroVariance(format!("feature `{name}` in the training rows")));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with denominator `n` (population).
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Standard deviation with denominator `n - 1`.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}
