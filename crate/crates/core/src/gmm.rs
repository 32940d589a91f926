//! Class-conditional Gaussian mixtures over meta-features.
//!
//! Each class's training-fold meta-features get their own full-covariance
//! mixture, fit by EM from a k-means++ start. Synthetic vectors are drawn
//! from the mixture, the two probability coordinates are clipped to `[0, 1]`
//! and the five derived coordinates are recomputed from the clipped pair.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::meta::{LabeledMeta, MetaFeatureVector, META_DIM};
use crate::rng::{self, Stream};

const MIN_WEIGHT: f64 = 1e-6;
const MAX_REINITS: usize = 3;

/// Synthetic-dose scenarios accepted without opting into custom values.
pub const STANDARD_SCENARIOS: [u32; 5] = [0, 25, 50, 100, 200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    /// Added to every covariance diagonal in each M-step.
    pub reg: f64,
    /// Stop once the per-sample log-likelihood gain drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent k-means++ starts; the best final likelihood wins.
    pub n_init: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 2,
            reg: 1e-4,
            tol: 1e-6,
            max_iter: 200,
            n_init: 1,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(UpmiError::Config("mixture needs at least one component".into()));
        }
        if !(self.reg > 0.0) {
            return Err(UpmiError::Config("covariance regularization must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.n_init == 0 {
            return Err(UpmiError::Config("mixture tol, max_iter and n_init must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d × d`, symmetric positive definite.
    pub covariance: Vec<Vec<f64>>,
}

/// Mixture weights, means and full covariances of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub dim: usize,
    pub components: Vec<Component>,
}

/// One mixture per class, index = class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub classes: [Mixture; 2],
}

struct Prepared {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Component {
    fn prepare(&self) -> Result<Prepared> {
        let d = self.mean.len();
        let cov = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| UpmiError::NumericalFailure("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Prepared {
            log_weight: self.weight.ln(),
            mean: DVector::from_column_slice(&self.mean),
            chol,
            log_det,
        })
    }
}

impl Prepared {
    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = x.len() as f64;
        let diff = x - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Mixture {
    fn prepare(&self) -> Result<Vec<Prepared>> {
        self.components.iter().map(Component::prepare).collect()
    }

    /// `ln Σ_k π_k N(x | μ_k, Σ_k)`, via log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let prepared = self.prepare()?;
        let xv = DVector::from_column_slice(x);
        let terms: Vec<f64> = prepared.iter().map(|p| p.log_weight + p.log_pdf(&xv)).collect();
        Ok(log_sum_exp(&terms))
    }

    /// Draws `n` unconstrained vectors.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Result<Vec<Vec<f64>>> {
        let prepared = self.prepare()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (k, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let p = &prepared[pick];
            let x = &p.mean + p.chol.l_dirty().lower_triangle() * z;
            out.push(x.iter().copied().collect());
        }
        Ok(out)
    }
}

pub fn gmm_log_density(mixture: &Mixture, x: &[f64]) -> Result<f64> {
    mixture.log_density(x)
}

/// Outcome of one class's EM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub mixture: Mixture,
    /// Total log-likelihood of every accepted iterate, starting from the initialization.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub k_requested: usize,
    pub k_used: usize,
    pub reinits: usize,
    pub notes: Vec<String>,
}

/// k-means++ centers: the first uniformly, the rest proportional to squared
/// distance from the nearest chosen center.
fn kmeanspp_centers(data: &[Vec<f64>], k: usize, rng: &mut Stream) -> Vec<usize> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..data.len())];
    let mut nearest: Vec<f64> = data.iter().map(|x| dist2(x, &data[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(next);
        for (nd, x) in nearest.iter_mut().zip(data) {
            *nd = nd.min(dist2(x, &data[next]));
        }
    }
    centers
}

/// Weighted moments for every component; `None` if any weight collapses.
fn m_step(data: &[Vec<f64>], resp: &[Vec<f64>], reg: f64) -> Option<Mixture> {
    let n = data.len();
    let d = data[0].len();
    let k = resp[0].len();
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk / (n as f64) < MIN_WEIGHT {
            return None;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r[c] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![vec![0.0; d]; d];
        for (x, r) in data.iter().zip(resp) {
            for i in 0..d {
                let di = x[i] - mean[i];
                for j in 0..=i {
                    cov[i][j] += r[c] * di * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i][j] / nk;
                cov[i][j] = v;
                cov[j][i] = v;
            }
            cov[i][i] += reg;
        }
        components.push(Component {
            weight: nk / n as f64,
            mean,
            covariance: cov,
        });
    }
    // exact simplex: renormalize
    let total: f64 = components.iter().map(|c| c.weight).sum();
    components.iter_mut().for_each(|c| c.weight /= total);
    Some(Mixture { dim: d, components })
}

/// Log-likelihood and responsibilities under `mixture`.
fn e_step(data: &[Vec<f64>], mixture: &Mixture) -> Result<(f64, Vec<Vec<f64>>)> {
    let prepared = mixture.prepare()?;
    let mut ll = 0.0;
    let mut resp = Vec::with_capacity(data.len());
    let mut terms = vec![0.0; prepared.len()];
    for x in data {
        let xv = DVector::from_column_slice(x);
        for (t, p) in terms.iter_mut().zip(&prepared) {
            *t = p.log_weight + p.log_pdf(&xv);
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        resp.push(terms.iter().map(|t| (t - lse).exp()).collect());
    }
    if !ll.is_finite() {
        return Err(UpmiError::NumericalFailure("mixture log-likelihood".into()));
    }
    Ok((ll, resp))
}

enum Attempt {
    Done(GmmFit),
    Degenerate,
}

fn em_run(data: &[Vec<f64>], k: usize, config: &GmmConfig, rng: &mut Stream) -> Result<Attempt> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let centers = kmeanspp_centers(data, k, rng);
    let resp: Vec<Vec<f64>> = data
        .iter()
        .map(|x| {
            let best = (0..k)
                .min_by(|&a, &b| dist2(x, &data[centers[a]]).total_cmp(&dist2(x, &data[centers[b]])))
                .expect("k >= 1");
            (0..k).map(|c| if c == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let Some(mut mixture) = m_step(data, &resp, config.reg) else {
        return Ok(Attempt::Degenerate);
    };
    let n = data.len() as f64;
    let (mut ll, mut resp) = e_step(data, &mixture)?;
    let mut trace = vec![ll];
    let mut notes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let Some(next) = m_step(data, &resp, config.reg) else {
            return Ok(Attempt::Degenerate);
        };
        iterations += 1;
        let (next_ll, next_resp) = e_step(data, &next)?;
        if next_ll < ll {
            // the diagonal loading can make a step lose likelihood near a fixed point
            notes.push(format!(
                "EM step {iterations} lowered the log-likelihood by {:.3e}; previous iterate kept",
                ll - next_ll
            ));
            converged = true;
            break;
        }
        let gain = (next_ll - ll) / n;
        mixture = next;
        ll = next_ll;
        resp = next_resp;
        trace.push(ll);
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    Ok(Attempt::Done(GmmFit {
        mixture,
        log_likelihood: trace,
        iterations,
        converged,
        k_requested: k,
        k_used: k,
        reinits: 0,
        notes,
    }))
}

/// Fits a `config.components`-component mixture to `data` by EM.
///
/// Fewer samples than components drops straight to one component. A run in
/// which some component's weight falls below 1e-6 is restarted from a fresh
/// stream up to three times before the component count is reduced by one.
pub fn fit_gmm(data: &[Vec<f64>], config: &GmmConfig, seed: u64) -> Result<GmmFit> {
    config.validate()?;
    if data.is_empty() {
        return Err(UpmiError::InvalidArgument("cannot fit a mixture to zero samples".into()));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(UpmiError::Shape("mixture samples differ in dimension".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(UpmiError::NumericalFailure("non-finite mixture input".into()));
    }
    let mut notes = Vec::new();
    let mut k = config.components;
    if data.len() < k {
        notes.push(format!("{} samples for {k} components: reduced to 1 component", data.len()));
        k = 1;
    }
    let mut reinits = 0;
    let mut attempt_id: u64 = 0;
    loop {
        let mut best: Option<GmmFit> = None;
        let mut degenerate = false;
        for init in 0..config.n_init {
            let mut stream = rng::stream(seed, &[attempt_id, init as u64]);
            match em_run(data, k, config, &mut stream)? {
                Attempt::Done(fit) => {
                    let better = best.as_ref().is_none_or(|b| {
                        fit.log_likelihood.last().unwrap_or(&f64::NEG_INFINITY)
                            > b.log_likelihood.last().unwrap_or(&f64::NEG_INFINITY)
                    });
                    if better {
                        best = Some(fit);
                    }
                }
                Attempt::Degenerate => {
                    degenerate = true;
                    break;
                }
            }
        }
        attempt_id += 1;
        if !degenerate {
            let mut fit = best.expect("n_init >= 1");
            fit.k_requested = config.components;
            fit.reinits = reinits;
            notes.append(&mut fit.notes);
            fit.notes = notes;
            return Ok(fit);
        }
        if reinits < MAX_REINITS && k > 1 {
            reinits += 1;
            notes.push(format!("degenerate component with K={k}: re-initialized ({reinits})"));
            continue;
        }
        if k == 1 {
            return Err(UpmiError::NumericalFailure("single-component mixture collapsed".into()));
        }
        notes.push(format!("K reduced from {k} to {}", k - 1));
        k -= 1;
        reinits = 0;
    }
}

/// Where a synthetic batch came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub fold: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBatch {
    pub vectors: Vec<MetaFeatureVector>,
    pub class_labels: Vec<u8>,
    pub source: SynthSource,
}

impl SynthBatch {
    pub fn empty(source: SynthSource) -> Self {
        SynthBatch {
            vectors: Vec::new(),
            class_labels: Vec::new(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.class_labels.iter().filter(|&&c| c == 1).count();
        (self.class_labels.len() - ones, ones)
    }
}

/// Draws `n` meta-feature vectors of class `class` from `mixture`, clips
/// the two probabilities and recomputes the derived coordinates.
pub fn sample_constrained(mixture: &Mixture, n: usize, class: u8, seed: u64) -> Result<SynthBatch> {
    if mixture.dim != META_DIM {
        return Err(UpmiError::Shape(format!(
            "meta-feature mixture must be {META_DIM}-D, got {}",
            mixture.dim
        )));
    }
    let mut stream = rng::stream(seed, &[]);
    let raw = mixture.sample(n, &mut stream)?;
    Ok(SynthBatch {
        vectors: raw.iter().map(|r| MetaFeatureVector::from_clipped(r[0], r[1])).collect(),
        class_labels: vec![class; n],
        source: SynthSource { fold: None, seed },
    })
}

/// `round(pct · n_real / 100)` with exact halves going to the even neighbour.
pub fn synthetic_count(n_real: usize, pct: u32) -> usize {
    let num = pct as usize * n_real;
    let (q, r) = (num / 100, num % 100);
    match r.cmp(&50) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q % 2),
        std::cmp::Ordering::Less => q,
    }
}

/// `(class 0, class 1)` shares of `total`; an odd sample goes to class 1.
pub fn class_split(total: usize) -> (usize, usize) {
    (total / 2, total - total / 2)
}

pub fn check_scenario(pct: u32, allow_custom: bool) -> Result<()> {
    if allow_custom || STANDARD_SCENARIOS.contains(&pct) {
        Ok(())
    } else {
        Err(UpmiError::InvalidScenario(pct))
    }
}

/// Fitted class mixtures for one training fold, with their fit reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixtures {
    pub params: GmmParams,
    pub fits: [GmmFit; 2],
}

fn class_rows(train_meta: &[LabeledMeta], class: u8) -> Vec<Vec<f64>> {
    train_meta
        .iter()
        .filter(|m| m.label == class)
        .map(|m| m.meta.to_array().to_vec())
        .collect()
}

/// Fits one mixture per class; the fit for class `c` uses stream `(seed, c)`.
pub fn fit_class_mixtures(train_meta: &[LabeledMeta], config: &GmmConfig, seed: u64) -> Result<ClassMixtures> {
    let fit = |class: u8| {
        let rows = class_rows(train_meta, class);
        if rows.is_empty() {
            return Err(UpmiError::SingleClass(format!("no class-{class} meta-features to fit")));
        }
        fit_gmm(&rows, config, rng::derive_seed(seed, &[u64::from(class)]))
    };
    let (f0, f1) = rayon::join(|| fit(0), || fit(1));
    let (f0, f1) = (f0?, f1?);
    Ok(ClassMixtures {
        params: GmmParams {
            classes: [f0.mixture.clone(), f1.mixture.clone()],
        },
        fits: [f0, f1],
    })
}

/// Synthetic batch for one dose scenario. Class `c` draws from stream
/// `(seed, c)`, so smaller doses are prefixes of larger ones.
pub fn scenario_batch(
    mixtures: &GmmParams,
    n_real: usize,
    scenario_pct: u32,
    seed: u64,
    fold: Option<usize>,
) -> Result<SynthBatch> {
    let (n0, n1) = class_split(synthetic_count(n_real, scenario_pct));
    let mut batch = SynthBatch::empty(SynthSource { fold, seed });
    for (class, n) in [(0u8, n0), (1u8, n1)] {
        let part = sample_constrained(&mixtures.classes[class as usize], n, class, rng::derive_seed(seed, &[u64::from(class)]))?;
        batch.vectors.extend(part.vectors);
        batch.class_labels.extend(part.class_labels);
    }
    Ok(batch)
}

/// Fits the class mixtures on `train_meta` and draws the scenario's batch.
pub fn make_scenario_batches(
    train_meta: &[LabeledMeta],
    scenario_pct: u32,
    config: &GmmConfig,
    seed: u64,
) -> Result<SynthBatch> {
    check_scenario(scenario_pct, false)?;
    let (n0, n1) = train_meta.iter().fold((0, 0), |(a, b), m| if m.label == 1 { (a, b + 1) } else { (a + 1, b) });
    if n0 == 0 || n1 == 0 {
        return Err(UpmiError::SingleClass("scenario training meta-features".into()));
    }
    if scenario_pct == 0 {
        return Ok(SynthBatch::empty(SynthSource { fold: None, seed }));
    }
    let mixtures = fit_class_mixtures(train_meta, config, rng::derive_seed(seed, &[0]))?;
    scenario_batch(&mixtures.params, train_meta.len(), scenario_pct, rng::derive_seed(seed, &[1]), None)
}
