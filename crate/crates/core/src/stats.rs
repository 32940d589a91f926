//! Paired fold comparisons and two-sample distribution checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::gmm::SynthBatch;
use crate::meta::{MetaFeatureVector, META_DIM, META_NAMES};
use crate::rng::{domain, stream};
use crate::scale::{mean, sample_std};

/// Significance level used to flag meta-feature dimensions.
pub const KS_ALPHA: f64 = 0.05;

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student t CDF with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(UpmiError::Shape(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(UpmiError::InvalidArgument("paired comparison needs at least 2 pairs".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

fn nonzero_sd(diffs: &[f64]) -> Result<(f64, f64)> {
    let m = mean(diffs);
    let sd = sample_std(diffs);
    if !(sd > 0.0) || sd <= 1e-15 * m.abs().max(1e-300) {
        return Err(UpmiError::ZeroVariance("paired differences have zero variance".into()));
    }
    Ok((m, sd))
}

/// Classical paired t-test with `n − 1` degrees of freedom; two-sided p.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let diffs = differences(a, b)?;
    let (m, sd) = nonzero_sd(&diffs)?;
    let n = diffs.len();
    let t = m / (sd / (n as f64).sqrt());
    let df = n - 1;
    let p = incomplete_beta(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t));
    Ok(TTest { t, p: p.clamp(0.0, 1.0), df, mean_diff: m, sd_diff: sd })
}

/// Paired Cohen's d: mean difference over the sample sd of differences.
pub fn cohens_d_paired(a: &[f64], b: &[f64]) -> Result<f64> {
    let diffs = differences(a, b)?;
    let (m, sd) = nonzero_sd(&diffs)?;
    Ok(m / sd)
}

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean paired difference `a − b`.
pub fn bootstrap_ci_diff(a: &[f64], b: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    let diffs = differences(a, b)?;
    if n_boot == 0 || !(0.0..1.0).contains(&level) {
        return Err(UpmiError::InvalidArgument(format!(
            "bootstrap needs n_boot > 0 and level in [0, 1), got {n_boot} and {level}"
        )));
    }
    let n = diffs.len();
    let mut rng = stream(seed, &[domain::BOOTSTRAP]);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

/// Kolmogorov survival function `Q(λ) = P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small λ
        let k = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|j| ((2 * j - 1) as f64).powi(2) * k).map(f64::exp).sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Two-sample KS statistic with the asymptotic p-value under the
/// `√(nm/(n+m))` effective size and the Stephens small-sample correction.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(UpmiError::InvalidArgument("KS test needs two nonempty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(UpmiError::NumericalFailure("NaN in KS sample".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult { d, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionKs {
    pub feature: String,
    pub d: f64,
    pub p: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQualityReport {
    pub n_real: usize,
    pub n_synthetic: usize,
    pub alpha: f64,
    pub dimensions: Vec<DimensionKs>,
    pub mean_p: f64,
    pub flagged: Vec<String>,
}

impl SynthQualityReport {
    pub fn n_similar(&self) -> usize {
        self.dimensions.iter().filter(|d| !d.flagged).count()
    }
}

/// Per-dimension KS comparison of real and synthetic meta-feature vectors.
pub fn validate_vectors(real: &[MetaFeatureVector], synth: &[MetaFeatureVector]) -> Result<SynthQualityReport> {
    if real.is_empty() || synth.is_empty() {
        return Err(UpmiError::InvalidArgument("quality check needs real and synthetic vectors".into()));
    }
    let real_cols = columns(real);
    let synth_cols = columns(synth);
    let mut dimensions = Vec::with_capacity(META_DIM);
    for k in 0..META_DIM {
        let ks = ks_two_sample(&real_cols[k], &synth_cols[k])?;
        dimensions.push(DimensionKs {
            feature: META_NAMES[k].to_string(),
            d: ks.d,
            p: ks.p,
            flagged: ks.p <= KS_ALPHA,
        });
    }
    let mean_p = dimensions.iter().map(|d| d.p).sum::<f64>() / META_DIM as f64;
    let flagged = dimensions.iter().filter(|d| d.flagged).map(|d| d.feature.clone()).collect();
    Ok(SynthQualityReport {
        n_real: real.len(),
        n_synthetic: synth.len(),
        alpha: KS_ALPHA,
        dimensions,
        mean_p,
        flagged,
    })
}

pub fn validate_synth_quality(real: &[MetaFeatureVector], synth: &SynthBatch) -> Result<SynthQualityReport> {
    validate_vectors(real, &synth.vectors)
}

fn columns(vs: &[MetaFeatureVector]) -> Vec<Vec<f64>> {
    (0..META_DIM).map(|k| vs.iter().map(|v| v.to_array()[k]).collect()).collect()
}
