//! Synthetic-dose ablation over a shared nested cross-validation.
//!
//! Fold plan, base models and out-of-fold meta-features are computed once
//! per outer fold and reused by every scenario. Within a fold the class
//! mixtures are fit once and scenario batches are prefixes of one synthetic
//! stream, and the forest seed is the same for every scenario, so the dose
//! is the only thing that changes between scenarios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Result, UpmiError};
use crate::forest::{fit_forest, LabeledRow};
use crate::gmm::{check_scenario, fit_class_mixtures, scenario_batch, synthetic_count, ClassMixtures, SynthBatch};
use crate::meta::{
    audit_provenance, build_oof_meta_table, make_fold_plan_with, FoldPlan, LabeledMeta, LeakageAudit, OofFold,
    ProvenanceEvent,
};
use crate::metrics::{f1_score, mean_roc, roc_auc, sensitivity_specificity, Confusion, RocPoint};
use crate::rng::{derive_seed, domain};
use crate::scale::{mean, sample_std};
use crate::stats::{bootstrap_ci_diff, cohens_d_paired, paired_t_test, validate_vectors, SynthQualityReport, TTest};
use crate::table::PairedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_id: usize,
    pub scenario_pct: u32,
    pub n_real_train: usize,
    pub n_synth: usize,
    pub n_test: usize,
    pub auc: f64,
    /// `None` when the fold has no positive label or prediction.
    pub f1: Option<f64>,
    pub confusion: Confusion,
    pub roc_points: Vec<RocPoint>,
    /// Forest positive-vote fraction per test subject, in fold order.
    pub test_subjects: Vec<String>,
    pub test_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario_pct: u32,
    pub n_synth_per_fold: Vec<usize>,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Over folds where F1 is defined; `None` if it never is.
    pub f1_mean: Option<f64>,
    pub f1_std: Option<f64>,
    pub confusion: Confusion,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub folds: Vec<FoldMetrics>,
    pub mean_roc: Vec<RocPoint>,
}

impl ScenarioReport {
    pub fn fold_aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auc).collect()
    }
}

/// Best augmented scenario against the real-only baseline, fold by fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_pct: u32,
    pub best_pct: u32,
    pub auc_diffs: Vec<f64>,
    pub mean_diff: f64,
    pub folds_improved: usize,
    pub t_test: Option<TTest>,
    pub cohens_d: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub n_boot: usize,
    /// Why a statistic is missing, if one is.
    pub notes: Vec<String>,
}

/// Everything produced for one outer fold.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub oof: OofFold,
    pub mixtures: Option<ClassMixtures>,
    /// Batch of the largest scenario; smaller doses are its class-wise prefixes.
    pub largest_batch: Option<SynthBatch>,
    pub quality: Option<SynthQualityReport>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub plan: FoldPlan,
    pub reports: Vec<ScenarioReport>,
    pub folds: Vec<FoldArtifacts>,
    pub provenance: Vec<ProvenanceEvent>,
    pub audit: LeakageAudit,
    pub comparison: Option<Comparison>,
}

impl AblationResult {
    pub fn report(&self, pct: u32) -> Option<&ScenarioReport> {
        self.reports.iter().find(|r| r.scenario_pct == pct)
    }
}

fn meta_rows(meta: &[LabeledMeta]) -> Vec<LabeledRow> {
    meta.iter()
        .map(|m| LabeledRow {
            key: format!("real:{}", m.subject_id),
            x: m.meta.to_array().to_vec(),
            y: m.label,
        })
        .collect()
}

/// The first `n` class-`c` vectors of `batch` for `c = 0, 1`.
fn prefix_rows(batch: &SynthBatch, n0: usize, n1: usize) -> Vec<LabeledRow> {
    let mut taken = [0usize; 2];
    let limit = [n0, n1];
    let mut rows = Vec::with_capacity(n0 + n1);
    for (v, &y) in batch.vectors.iter().zip(&batch.class_labels) {
        let c = y as usize;
        if taken[c] < limit[c] {
            rows.push(LabeledRow {
                key: format!("synth:{}:{:06}", y, taken[c]),
                x: v.to_array().to_vec(),
                y,
            });
            taken[c] += 1;
        }
    }
    rows
}

struct FoldOutcome {
    artifacts: FoldArtifacts,
    metrics: Vec<FoldMetrics>,
    events: Vec<ProvenanceEvent>,
}

fn run_fold(
    data: &PairedDataset,
    plan: &FoldPlan,
    k: usize,
    scenarios: &[u32],
    config: &RunConfig,
    seed: u64,
) -> Result<FoldOutcome> {
    let fail = |scenario: u32| move |e: UpmiError| UpmiError::FoldFailed {
        scenario,
        fold: k,
        source: Box::new(e),
    };
    let first = scenarios[0];
    let oof = build_oof_meta_table(data, plan, k, &config.base(), seed).map_err(fail(first))?;
    let mut events = oof.provenance.clone();
    let n_real = oof.train.len();
    let max_pct = scenarios.iter().copied().max().unwrap_or(0);

    let (mixtures, largest_batch) = if max_pct > 0 {
        let mixtures = fit_class_mixtures(&oof.train, &config.gmm, derive_seed(seed, &[domain::GMM_FIT, k as u64]))
            .map_err(fail(max_pct))?;
        for class in 0..2u8 {
            events.push(ProvenanceEvent::GmmFit {
                outer_fold: k,
                class,
                fit_subjects: oof.train.iter().filter(|m| m.label == class).map(|m| m.subject).collect(),
            });
        }
        let batch = scenario_batch(
            &mixtures.params,
            n_real,
            max_pct,
            derive_seed(seed, &[domain::GMM_SAMPLE, k as u64]),
            Some(k),
        )
        .map_err(fail(max_pct))?;
        (Some(mixtures), Some(batch))
    } else {
        (None, None)
    };
    let real_meta: Vec<_> = oof.train.iter().map(|m| m.meta).collect();
    let quality = match &largest_batch {
        Some(b) if !b.is_empty() => Some(validate_vectors(&real_meta, &b.vectors).map_err(fail(max_pct))?),
        _ => None,
    };

    let real_rows = meta_rows(&oof.train);
    let train_subjects: Vec<usize> = oof.train.iter().map(|m| m.subject).collect();
    let test_subjects: Vec<usize> = oof.test.iter().map(|m| m.subject).collect();
    let test_labels: Vec<u8> = oof.test.iter().map(|m| m.label).collect();
    let forest_seed = derive_seed(seed, &[domain::META_FOREST, k as u64]);
    let mut metrics = Vec::with_capacity(scenarios.len());
    for &pct in scenarios {
        let n_synth = synthetic_count(n_real, pct);
        let synth_rows = match &largest_batch {
            Some(b) if n_synth > 0 => {
                let (n0, n1) = crate::gmm::class_split(n_synth);
                prefix_rows(b, n0, n1)
            }
            _ => Vec::new(),
        };
        let forest = fit_forest(&real_rows, &synth_rows, &config.forest, forest_seed).map_err(fail(pct))?;
        events.push(ProvenanceEvent::MetaForest {
            outer_fold: k,
            scenario_pct: pct,
            real_subjects: train_subjects.clone(),
            n_synthetic: synth_rows.len(),
            scored_subjects: test_subjects.clone(),
        });
        let scores: Vec<f64> = oof.test.iter().map(|m| forest.predict_proba(&m.meta.to_array())).collect();
        let predicted: Vec<u8> = oof.test.iter().map(|m| forest.predict_label(&m.meta.to_array())).collect();
        let (auc, roc_points) = roc_auc(&scores, &test_labels).map_err(fail(pct))?;
        let confusion = Confusion::from_predictions(&predicted, &test_labels);
        metrics.push(FoldMetrics {
            fold_id: k,
            scenario_pct: pct,
            n_real_train: n_real,
            n_synth: synth_rows.len(),
            n_test: test_labels.len(),
            auc,
            f1: f1_score(&confusion),
            confusion,
            roc_points,
            test_subjects: oof.test.iter().map(|m| m.subject_id.clone()).collect(),
            test_scores: scores,
        });
    }
    Ok(FoldOutcome {
        artifacts: FoldArtifacts {
            oof,
            mixtures,
            largest_batch,
            quality,
        },
        metrics,
        events,
    })
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    match xs.len() {
        0 => None,
        1 => Some((xs[0], 0.0)),
        _ => Some((mean(xs), sample_std(xs))),
    }
}

fn summarize(pct: u32, folds: Vec<FoldMetrics>, roc_grid: usize) -> ScenarioReport {
    let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
    let f1s: Vec<f64> = folds.iter().filter_map(|f| f.f1).collect();
    let (auc_mean, auc_std) = mean_std(&aucs).unwrap_or((f64::NAN, f64::NAN));
    let f1 = mean_std(&f1s);
    let confusion = folds.iter().fold(Confusion::default(), |acc, f| acc + f.confusion);
    let rates = sensitivity_specificity(&confusion).ok();
    let curves: Vec<Vec<RocPoint>> = folds.iter().map(|f| f.roc_points.clone()).collect();
    ScenarioReport {
        scenario_pct: pct,
        n_synth_per_fold: folds.iter().map(|f| f.n_synth).collect(),
        auc_mean,
        auc_std,
        f1_mean: f1.map(|v| v.0),
        f1_std: f1.map(|v| v.1),
        confusion,
        sensitivity: rates.map(|r| r.0),
        specificity: rates.map(|r| r.1),
        mean_roc: mean_roc(&curves, roc_grid),
        folds,
    }
}

fn keep<T>(r: Result<T>, what: &str, notes: &mut Vec<String>) -> Option<T> {
    r.map_err(|e| notes.push(format!("{what}: {e}"))).ok()
}

/// Best augmented scenario (highest mean AUC, lowest dose on ties) against
/// scenario 0. `None` unless both are present.
pub fn compare_to_baseline(reports: &[ScenarioReport], n_boot: usize, level: f64, seed: u64) -> Option<Comparison> {
    let base = reports.iter().find(|r| r.scenario_pct == 0)?;
    let best = reports
        .iter()
        .filter(|r| r.scenario_pct > 0)
        .fold(None::<&ScenarioReport>, |best, r| match best {
            Some(b) if b.auc_mean >= r.auc_mean => Some(b),
            _ => Some(r),
        })?;
    let a = best.fold_aucs();
    let b = base.fold_aucs();
    let auc_diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mut notes = Vec::new();
    let t_test = keep(paired_t_test(&a, &b), "paired t-test", &mut notes);
    let cohens_d = keep(cohens_d_paired(&a, &b), "cohen's d", &mut notes);
    let ci = keep(
        bootstrap_ci_diff(&a, &b, n_boot, level, derive_seed(seed, &[domain::BOOTSTRAP])),
        "bootstrap interval",
        &mut notes,
    );
    Some(Comparison {
        baseline_pct: 0,
        best_pct: best.scenario_pct,
        mean_diff: mean(&auc_diffs),
        folds_improved: auc_diffs.iter().filter(|&&d| d > 0.0).count(),
        auc_diffs,
        t_test,
        cohens_d,
        ci,
        ci_level: level,
        n_boot,
        notes,
    })
}

/// Runs every scenario over the same nested cross-validation.
pub fn run_ablation(data: &PairedDataset, scenarios: &[u32], config: &RunConfig, seed: u64) -> Result<AblationResult> {
    if scenarios.is_empty() {
        return Err(UpmiError::InvalidArgument("no scenarios requested".into()));
    }
    for &pct in scenarios {
        check_scenario(pct, config.allow_custom_scenarios)?;
    }
    let plan = make_fold_plan_with(data.labels(), config.outer_folds, config.inner, seed)?;
    let outcomes: Vec<FoldOutcome> = (0..plan.k_outer())
        .into_par_iter()
        .map(|k| run_fold(data, &plan, k, scenarios, config, seed))
        .collect::<Result<_>>()?;

    let reports = scenarios
        .iter()
        .enumerate()
        .map(|(s, &pct)| {
            let folds = outcomes.iter().map(|o| o.metrics[s].clone()).collect();
            summarize(pct, folds, config.roc_grid)
        })
        .collect::<Vec<_>>();
    let provenance: Vec<ProvenanceEvent> = outcomes.iter().flat_map(|o| o.events.iter().cloned()).collect();
    let audit = audit_provenance(&plan, &provenance);
    let comparison = compare_to_baseline(&reports, config.n_boot, config.ci_level, seed);
    Ok(AblationResult {
        plan,
        reports,
        folds: outcomes.into_iter().map(|o| o.artifacts).collect(),
        provenance,
        audit,
        comparison,
    })
}
