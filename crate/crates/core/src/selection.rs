//! Four-stage per-modality feature selection.
//!
//! variance screen → correlation filter (keep the higher-MI member of any
//! highly correlated pair) → top-k by mutual information → top-k by forest
//! impurity importance. Callers must only ever pass training-fold rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::forest::{fit_forest, LabeledRow, RfConfig};
use crate::scale::population_variance;
use crate::table::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub variance_threshold: f64,
    pub rho_max: f64,
    pub mi_top_k: usize,
    pub rf_top_k: usize,
    pub forest: RfConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            variance_threshold: 0.01,
            rho_max: 0.95,
            mi_top_k: 20,
            rf_top_k: 10,
            forest: RfConfig::importance_ranking(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_threshold >= 0.0) {
            return Err(UpmiError::Config("variance threshold must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_max) {
            return Err(UpmiError::Config("rho_max must lie in [0, 1]".into()));
        }
        if self.mi_top_k == 0 || self.rf_top_k == 0 {
            return Err(UpmiError::Config("selection top-k values must be at least 1".into()));
        }
        self.forest.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Variance,
    Correlation,
    MutualInformation,
    Importance,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Variance => "variance",
            Stage::Correlation => "correlation",
            Stage::MutualInformation => "mutual-information",
            Stage::Importance => "importance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub score: f64,
}

/// A feature removed because it tracked an already kept, higher-MI feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDrop {
    pub dropped: String,
    pub kept: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub n_in: usize,
    pub n_out: usize,
    /// Per-feature score the stage ranked or screened by.
    pub scores: Vec<FeatureScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drops: Vec<CorrelationDrop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected_names: Vec<String>,
    pub stage_audit: Vec<StageRecord>,
}

/// Population variance of every column.
pub fn feature_variances(table: &FeatureTable) -> Vec<f64> {
    table.columns().iter().map(|c| population_variance(c)).collect()
}

/// Features whose population variance is at least `threshold`, in input order.
pub fn variance_filter(table: &FeatureTable, threshold: f64) -> Vec<String> {
    feature_variances(table)
        .iter()
        .zip(table.feature_names())
        .filter(|(v, _)| **v >= threshold)
        .map(|(_, n)| n.clone())
        .collect()
}

/// Equal-frequency bin index of every value. Tied values share the bin of
/// their first rank, so the assignment depends only on the ranks of `x`.
fn equal_frequency_bins(x: &[f64], n_bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut bins = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && x[i] != x[order[rank - 1]] {
            first_rank = rank;
        }
        bins[i] = first_rank * n_bins / n;
    }
    bins
}

/// Plug-in mutual information (nats) between a continuous feature and a
/// binary label, after binning `x` into `min(10, n/5)` (at least 2)
/// equal-frequency bins.
pub fn mutual_information(x: &[f64], y: &[u8]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(UpmiError::Shape(format!("{} values vs {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(UpmiError::InvalidArgument("mutual information needs at least 2 samples".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(UpmiError::SingleClass("mutual information label".into()));
    }
    let n = x.len();
    let n_bins = (n / 5).clamp(2, 10);
    let bins = equal_frequency_bins(x, n_bins);
    let mut joint = vec![[0usize; 2]; n_bins];
    for (&b, &c) in bins.iter().zip(y) {
        joint[b][c as usize] += 1;
    }
    let nf = n as f64;
    let class = [
        joint.iter().map(|j| j[0]).sum::<usize>() as f64 / nf,
        joint.iter().map(|j| j[1]).sum::<usize>() as f64 / nf,
    ];
    let mut mi = 0.0;
    for cell in &joint {
        let pb = (cell[0] + cell[1]) as f64 / nf;
        for c in 0..2 {
            if cell[c] > 0 {
                let pj = cell[c] as f64 / nf;
                mi += pj * (pj / (pb * class[c])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// MI of every column against the table's labels.
pub fn mi_scores(table: &FeatureTable) -> Result<Vec<f64>> {
    let cols = table.columns();
    cols.par_iter()
        .map(|c| mutual_information(c, table.labels()))
        .collect()
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Positions of `scores` sorted descending, ties by position.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn correlation_filter_detailed(
    table: &FeatureTable,
    rho_max: f64,
    mi: &[f64],
) -> (Vec<String>, Vec<CorrelationDrop>) {
    let cols = table.columns();
    let names = table.feature_names();
    let mut kept: Vec<usize> = Vec::new();
    let mut drops = Vec::new();
    for j in descending(mi) {
        let clash = kept
            .iter()
            .map(|&k| (k, pearson(&cols[j], &cols[k])))
            .find(|(_, r)| r.abs() > rho_max);
        match clash {
            Some((k, rho)) => drops.push(CorrelationDrop {
                dropped: names[j].clone(),
                kept: names[k].clone(),
                rho,
            }),
            None => kept.push(j),
        }
    }
    kept.sort_unstable();
    (kept.into_iter().map(|j| names[j].clone()).collect(), drops)
}

/// Walks features in descending-MI order and drops any feature whose
/// |Pearson ρ| with an already kept one exceeds `rho_max`. Survivors are
/// returned in input order.
pub fn correlation_filter(table: &FeatureTable, rho_max: f64, mi_scores: &[f64]) -> Vec<String> {
    correlation_filter_detailed(table, rho_max, mi_scores).0
}

/// Names of the `min(k, n)` highest-scoring features, best first; ties keep
/// input order.
pub fn top_k_by_score(names: &[String], scores: &[f64], k: usize) -> Vec<String> {
    descending(scores)
        .into_iter()
        .take(k)
        .map(|j| names[j].clone())
        .collect()
}

pub fn top_k_by_mi(table: &FeatureTable, k: usize) -> Result<Vec<String>> {
    let scores = mi_scores(table)?;
    Ok(top_k_by_score(table.feature_names(), &scores, k))
}

fn scored(names: &[String], scores: &[f64]) -> Vec<FeatureScore> {
    names
        .iter()
        .zip(scores)
        .map(|(n, &s)| FeatureScore {
            name: n.clone(),
            score: s,
        })
        .collect()
}

/// Ranks the table's features by forest impurity importance and keeps the top `k`.
pub fn rf_importance_top_k(
    table: &FeatureTable,
    k: usize,
    forest_config: &RfConfig,
    seed: u64,
) -> Result<SelectionResult> {
    let (n0, n1) = table.class_counts();
    if n0 < 2 || n1 < 2 {
        return Err(UpmiError::SingleClass(format!(
            "importance ranking needs two subjects per class, got {n0}/{n1}"
        )));
    }
    let rows: Vec<LabeledRow> = table
        .subject_ids()
        .iter()
        .zip(table.rows())
        .zip(table.labels())
        .map(|((id, x), &y)| LabeledRow {
            key: id.clone(),
            x: x.clone(),
            y,
        })
        .collect();
    let forest = fit_forest(&rows, &[], forest_config, seed)?;
    let importances = forest.feature_importances();
    let selected = top_k_by_score(table.feature_names(), &importances, k);
    Ok(SelectionResult {
        stage_audit: vec![StageRecord {
            stage: Stage::Importance,
            n_in: table.n_features(),
            n_out: selected.len(),
            scores: scored(table.feature_names(), &importances),
            drops: Vec::new(),
        }],
        selected_names: selected,
    })
}

/// Runs the full chain on a training-fold table.
pub fn select_features(table: &FeatureTable, config: &SelectionConfig, seed: u64) -> Result<SelectionResult> {
    config.validate()?;
    let empty = |stage: Stage| UpmiError::EmptySelection {
        stage: stage.to_string(),
    };
    let mut audit = Vec::with_capacity(4);

    let variances = feature_variances(table);
    let survivors = variance_filter(table, config.variance_threshold);
    audit.push(StageRecord {
        stage: Stage::Variance,
        n_in: table.n_features(),
        n_out: survivors.len(),
        scores: scored(table.feature_names(), &variances),
        drops: Vec::new(),
    });
    if survivors.is_empty() {
        return Err(empty(Stage::Variance));
    }
    let screened = table.select_features(&survivors)?;

    let mi = mi_scores(&screened)?;
    let (uncorrelated, drops) = correlation_filter_detailed(&screened, config.rho_max, &mi);
    audit.push(StageRecord {
        stage: Stage::Correlation,
        n_in: screened.n_features(),
        n_out: uncorrelated.len(),
        scores: scored(screened.feature_names(), &mi),
        drops,
    });
    if uncorrelated.is_empty() {
        return Err(empty(Stage::Correlation));
    }

    let kept_mi: Vec<f64> = uncorrelated
        .iter()
        .map(|n| mi[screened.feature_index(n).expect("survivor of the screened table")])
        .collect();
    let candidates = top_k_by_score(&uncorrelated, &kept_mi, config.mi_top_k);
    audit.push(StageRecord {
        stage: Stage::MutualInformation,
        n_in: uncorrelated.len(),
        n_out: candidates.len(),
        scores: scored(&uncorrelated, &kept_mi),
        drops: Vec::new(),
    });
    if candidates.is_empty() {
        return Err(empty(Stage::MutualInformation));
    }

    let candidate_table = screened.select_features(&candidates)?;
    let ranked = rf_importance_top_k(&candidate_table, config.rf_top_k, &config.forest, seed)?;
    if ranked.selected_names.is_empty() {
        return Err(empty(Stage::Importance));
    }
    audit.extend(ranked.stage_audit);
    Ok(SelectionResult {
        selected_names: ranked.selected_names,
        stage_audit: audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_from_columns(cols: &[Vec<f64>], labels: &[u8]) -> FeatureTable {
        let n = labels.len();
        FeatureTable::new(
            (0..n).map(|i| format!("s{i:03}")).collect(),
            (0..cols.len()).map(|j| format!("f{j}")).collect(),
            (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
            labels.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn variance_screen() {
        let labels = [0, 1, 0, 1];
        let t = table_from_columns(&[vec![3.0; 4], vec![0.0, 1.0, 0.0, 1.0]], &labels);
        assert_eq!(variance_filter(&t, 0.01), vec!["f1"]);
        assert_eq!(feature_variances(&t)[1], 0.25);
        assert_eq!(variance_filter(&t, 0.0), vec!["f0", "f1"]);
    }

    #[test]
    fn mi_of_constant_is_zero() {
        let y: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        assert_eq!(mutual_information(&[1.5; 20], &y).unwrap(), 0.0);
    }

    #[test]
    fn mi_of_copied_balanced_label_is_ln2() {
        let y: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let x: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let mi = mutual_information(&x, &y).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn mi_is_invariant_to_increasing_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<u8> = (0..53).map(|i| u8::from(i % 3 == 0)).collect();
        let x: Vec<f64> = y.iter().map(|&v| f64::from(v) + rng.random_range(-0.8..0.8)).collect();
        let fx: Vec<f64> = x.iter().map(|v| (2.0 * v).exp() + 7.0).collect();
        assert_eq!(mutual_information(&x, &y).unwrap(), mutual_information(&fx, &y).unwrap());
        let sep: Vec<f64> = y.iter().enumerate().map(|(i, &v)| f64::from(v) * 10.0 + i as f64 * 0.01).collect();
        let sep_t: Vec<f64> = sep.iter().map(|v| v.powi(3)).collect();
        assert_eq!(mutual_information(&sep, &y).unwrap(), mutual_information(&sep_t, &y).unwrap());
    }

    #[test]
    fn mi_errors() {
        assert!(matches!(mutual_information(&[1.0, 2.0], &[1, 1]), Err(UpmiError::SingleClass(_))));
        assert!(matches!(mutual_information(&[1.0, 2.0], &[1]), Err(UpmiError::Shape(_))));
    }

    #[test]
    fn correlation_keeps_higher_mi_duplicate() {
        let labels = [0, 1, 0, 1, 1];
        let c = vec![0.1, 0.5, 0.2, 0.9, 0.4];
        let t = table_from_columns(&[c.clone(), c], &labels);
        assert_eq!(correlation_filter(&t, 0.95, &[0.3, 0.5]), vec!["f1"]);
    }

    #[test]
    fn uncorrelated_columns_survive() {
        let labels = [0, 1, 0, 1];
        let t = table_from_columns(&[vec![1.0, 1.0, -1.0, -1.0], vec![1.0, -1.0, 1.0, -1.0]], &labels);
        assert_eq!(pearson(&t.column(0), &t.column(1)), 0.0);
        assert_eq!(correlation_filter(&t, 0.95, &[0.1, 0.2]), vec!["f0", "f1"]);
    }

    #[test]
    fn three_identical_columns_leave_the_max_mi_one() {
        let labels = [0, 1, 0, 1, 0];
        let c = vec![0.3, 1.2, -0.4, 2.2, 0.0];
        let t = table_from_columns(&[c.clone(), c.clone(), c], &labels);
        let mi: [f64; 3] = [0.2, 0.7, 0.4];
        // every elimination order that respects "keep the higher-MI member"
        // ends with the global maximum, so the oracle is the argmax
        let oracle = (0..3).max_by(|&a, &b| mi[a].total_cmp(&mi[b])).unwrap();
        assert_eq!(correlation_filter(&t, 0.95, &mi), vec![format!("f{oracle}")]);
    }

    #[test]
    fn top_k_semantics() {
        let names: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
        let mut got = top_k_by_score(&names, &[0.9, 0.1, 0.5], 2);
        got.sort();
        assert_eq!(got, vec!["f0", "f2"]);
        assert_eq!(top_k_by_score(&names, &[0.9, 0.5, 0.5], 2), vec!["f0", "f1"]);
        assert_eq!(top_k_by_score(&names, &[0.1, 0.2, 0.3], 20).len(), 3);
    }

    #[test]
    fn importance_finds_the_label_copy() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
            let mut cols = vec![labels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()];
            for _ in 0..4 {
                cols.push((0..40).map(|_| rng.random_range(0.0..1.0)).collect());
            }
            let t = table_from_columns(&cols, &labels);
            let r = rf_importance_top_k(&t, 1, &RfConfig::importance_ranking(), seed).unwrap();
            assert_eq!(r.selected_names, vec!["f0"]);
        }
    }

    #[test]
    fn importance_returns_everything_when_k_is_large() {
        let labels: Vec<u8> = (0..12).map(|i| u8::from(i % 2 == 0)).collect();
        let cols: Vec<Vec<f64>> = (0..3).map(|j| (0..12).map(|i| ((i * (j + 3)) % 7) as f64).collect()).collect();
        let t = table_from_columns(&cols, &labels);
        let r = rf_importance_top_k(&t, 10, &RfConfig::importance_ranking(), 0).unwrap();
        assert_eq!(r.selected_names.len(), 3);
        let total: f64 = r.stage_audit[0].scores.iter().map(|s| s.score).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_constant_table_fails_at_variance_stage() {
        let labels = [0, 1, 0, 1];
        let t = table_from_columns(&[vec![1.0; 4], vec![2.0; 4]], &labels);
        match select_features(&t, &SelectionConfig::default(), 0) {
            Err(UpmiError::EmptySelection { stage }) => assert_eq!(stage, "variance"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_table_is_capped_and_audited() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 2 == 0)).collect();
        let cols: Vec<Vec<f64>> = (0..10)
            .map(|_| labels.iter().map(|&y| f64::from(y) * 0.5 + rng.random_range(-1.0..1.0)).collect())
            .collect();
        let t = table_from_columns(&cols, &labels);
        let r = select_features(&t, &SelectionConfig::default(), 1).unwrap();
        assert!(r.selected_names.len() <= 10);
        let counts: Vec<usize> = r.stage_audit.iter().map(|s| s.n_out).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r, select_features(&t, &SelectionConfig::default(), 1).unwrap());
    }
}
