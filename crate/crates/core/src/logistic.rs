//! Class-weighted L2 logistic regression, one per modality.
//!
//! Objective over standardized inputs:
//!
//! ```text
//! L(w, b) = ||w||² / (2C) + Σ_i s_i · ℓ(y_i, σ(wᵀx_i + b))
//! ```
//!
//! with `ℓ` the binary cross-entropy and `s_i` the per-sample weights. The
//! bias is not penalized. Minimized by full-batch gradient descent with an
//! Armijo backtracking line search from a zero start.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::scale::Standardizer;
use crate::table::FeatureTable;

const PROB_FLOOR: f64 = 1e-12;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

/// Positive per-subject weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    /// `n / (2 · n_class(y_i))`, so each class carries half the total weight.
    pub fn balanced(labels: &[u8]) -> Result<Self> {
        let n1 = labels.iter().filter(|&&y| y == 1).count();
        let n0 = labels.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(UpmiError::SingleClass("sample weights".into()));
        }
        let n = labels.len() as f64;
        Ok(SampleWeights(
            labels
                .iter()
                .map(|&y| n / (2.0 * if y == 1 { n1 } else { n0 } as f64))
                .collect(),
        ))
    }

    pub fn uniform(n: usize) -> Self {
        SampleWeights(vec![1.0; n])
    }

    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(UpmiError::InvalidArgument("sample weights must be positive and finite".into()));
        }
        Ok(SampleWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Inverse regularization strength.
    pub c: f64,
    /// Stop when the gradient's infinity norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            c: 1.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(UpmiError::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(UpmiError::Config("logistic tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    pub objective: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Objective and gradient at `theta = [w..., b]` over already standardized rows.
///
/// The per-sample cross-entropy is evaluated with the prediction clamped to
/// `[1e-12, 1 − 1e-12]`; where the clamp is active the sample contributes no
/// gradient.
pub fn loss_and_gradient(
    theta: &[f64],
    c: f64,
    x: &[Vec<f64>],
    y: &[u8],
    sw: &SampleWeights,
) -> Result<(f64, Vec<f64>)> {
    let d = theta.len() - 1;
    let (w, b) = (&theta[..d], theta[d]);
    let lo = -(1.0 - PROB_FLOOR).ln();
    let hi = -PROB_FLOOR.ln();
    let mut loss = w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c);
    let mut grad: Vec<f64> = w.iter().map(|v| v / c).chain([0.0]).collect();
    for ((xi, &yi), &si) in x.iter().zip(y).zip(sw.as_slice()) {
        let z = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // -ln σ(z) = softplus(-z), -ln(1-σ(z)) = softplus(z)
        let raw = if yi == 1 { softplus(-z) } else { softplus(z) };
        let li = raw.clamp(lo, hi);
        loss += si * li;
        if raw > lo && raw < hi {
            let r = si * (sigmoid(z) - f64::from(yi));
            for (g, a) in grad.iter_mut().zip(xi) {
                *g += r * a;
            }
            grad[d] += r;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(UpmiError::NumericalFailure("logistic loss".into()));
    }
    Ok((loss, grad))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the objective over already standardized rows. Returns
/// `[w..., b]` and the fit report.
///
/// Trial steps use the Barzilai–Borwein length from the previous iterate;
/// each step is then halved until the Armijo condition holds, so accepted
/// steps strictly decrease the objective.
pub fn minimize(
    x: &[Vec<f64>],
    y: &[u8],
    sw: &SampleWeights,
    config: &LogisticConfig,
) -> Result<(Vec<f64>, FitReport)> {
    let d = x.first().map_or(0, Vec::len);
    let mut theta = vec![0.0; d + 1];
    let (mut f, mut g) = loss_and_gradient(&theta, config.c, x, y, sw)?;
    // curvature bound for the first trial step
    let lipschitz = 1.0 / config.c
        + 0.25
            * x.iter()
                .zip(sw.as_slice())
                .map(|(xi, s)| s * (1.0 + xi.iter().map(|a| a * a).sum::<f64>()))
                .sum::<f64>();
    let mut step = 1.0 / lipschitz;
    let mut iterations = 0;
    while iterations < config.max_iter && inf_norm(&g) >= config.tol {
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut alpha = step;
        let accepted = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - alpha * gi).collect();
            let (fc, gc) = loss_and_gradient(&cand, config.c, x, y, sw)?;
            if fc <= f - ARMIJO_C * alpha * g2 {
                break Some((cand, fc, gc));
            }
            alpha *= BACKTRACK;
            if alpha < 1e-20 {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { ss / sy } else { alpha * 2.0 };
        theta = cand;
        f = fc;
        g = gc;
        iterations += 1;
    }
    let grad_inf_norm = inf_norm(&g);
    let report = FitReport {
        iterations,
        converged: grad_inf_norm < config.tol,
        grad_inf_norm,
        objective: f,
    };
    Ok((theta, report))
}

/// Standardizes `x` with its own column statistics and fits the model.
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[u8],
    sw: &SampleWeights,
    feature_names: &[String],
    config: &LogisticConfig,
) -> Result<(LogisticModel, FitReport)> {
    config.validate()?;
    if x.len() < 2 {
        return Err(UpmiError::InvalidArgument("logistic fit needs at least 2 subjects".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(UpmiError::SingleClass("logistic training data".into()));
    }
    if sw.len() != x.len() || y.len() != x.len() {
        return Err(UpmiError::Shape("rows, labels and weights differ in length".into()));
    }
    if x.iter().any(|r| r.len() != feature_names.len()) {
        return Err(UpmiError::Shape("row width differs from feature count".into()));
    }
    let standardizer = Standardizer::fit_strict(x, feature_names)?;
    let z = standardizer.transform_rows(x);
    let (theta, report) = minimize(&z, y, sw, config)?;
    if !report.converged {
        log::warn!(
            "logistic fit stopped after {} iterations with gradient norm {:.3e}",
            report.iterations,
            report.grad_inf_norm
        );
    }
    let d = feature_names.len();
    Ok((
        LogisticModel {
            weights: theta[..d].to_vec(),
            bias: theta[d],
            c: config.c,
            feature_names: feature_names.to_vec(),
            standardizer,
        },
        report,
    ))
}

/// Fits on the named columns of `table` with class-balanced weights.
pub fn fit_on_table(table: &FeatureTable, config: &LogisticConfig) -> Result<(LogisticModel, FitReport)> {
    let sw = SampleWeights::balanced(table.labels())?;
    fit_logistic(table.rows(), table.labels(), &sw, table.feature_names(), config)
}

impl LogisticModel {
    /// Probability of class 1 for rows already ordered as `feature_names`.
    pub fn predict_row(&self, raw: &[f64]) -> f64 {
        let z = self.standardizer.transform(raw);
        sigmoid(z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    pub fn theta(&self) -> Vec<f64> {
        self.weights.iter().copied().chain([self.bias]).collect()
    }
}

/// Probabilities for every subject of `table`, looking columns up by name.
pub fn predict_proba(model: &LogisticModel, table: &FeatureTable) -> Result<Vec<f64>> {
    let restricted = table.select_features(&model.feature_names)?;
    Ok(restricted.rows().iter().map(|r| model.predict_row(r)).collect())
}
