//! 7-D meta-features from strictly out-of-fold base-model probabilities.
//!
//! For outer fold `k`, test subjects are scored by base models fit (selection
//! included) on the whole outer-training set, and each training subject is
//! scored by the inner-fold model whose training partition excludes it. Every
//! fit and every scoring call is written to a provenance log that
//! [`audit_provenance`] checks against the fold plan.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};
use crate::logistic::{self, FitReport, LogisticConfig, LogisticModel};
use crate::rng::{self, domain};
use crate::selection::{select_features, SelectionConfig, SelectionResult};
use crate::table::{Modality, PairedDataset};

pub const META_DIM: usize = 7;

pub const META_NAMES: [&str; META_DIM] = [
    "p_t1",
    "p_t2",
    "c_t1",
    "c_t2",
    "disagreement",
    "max_probability",
    "min_probability",
];

/// `[p_t1, p_t2, c_t1, c_t2, d, p_max, p_min]` for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector {
    pub p_t1: f64,
    pub p_t2: f64,
    pub c_t1: f64,
    pub c_t2: f64,
    pub d: f64,
    pub p_max: f64,
    pub p_min: f64,
}

impl MetaFeatureVector {
    /// Derives all seven entries from the two modality probabilities.
    pub fn from_probabilities(p_t1: f64, p_t2: f64) -> Result<Self> {
        for (name, p) in [("p_t1", p_t1), ("p_t2", p_t2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(UpmiError::InvalidArgument(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(Self::derive(p_t1, p_t2))
    }

    /// Clips both probabilities to `[0, 1]` and derives the rest.
    pub fn from_clipped(raw_t1: f64, raw_t2: f64) -> Self {
        let clip = |v: f64| if v.is_nan() { 0.5 } else { v.clamp(0.0, 1.0) };
        Self::derive(clip(raw_t1), clip(raw_t2))
    }

    fn derive(p_t1: f64, p_t2: f64) -> Self {
        MetaFeatureVector {
            p_t1,
            p_t2,
            c_t1: p_t1.max(1.0 - p_t1),
            c_t2: p_t2.max(1.0 - p_t2),
            d: (p_t1 - p_t2).abs(),
            p_max: p_t1.max(p_t2),
            p_min: p_t1.min(p_t2),
        }
    }

    pub fn to_array(&self) -> [f64; META_DIM] {
        [self.p_t1, self.p_t2, self.c_t1, self.c_t2, self.d, self.p_max, self.p_min]
    }

    /// Wraps seven raw values without re-deriving anything.
    pub fn from_array_unchecked(a: [f64; META_DIM]) -> Self {
        MetaFeatureVector {
            p_t1: a[0],
            p_t2: a[1],
            c_t1: a[2],
            c_t2: a[3],
            d: a[4],
            p_max: a[5],
            p_min: a[6],
        }
    }

    /// True iff every derived entry equals its definition bit for bit and
    /// the probabilities lie in `[0, 1]`.
    pub fn satisfies_identities(&self) -> bool {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        in_unit(self.p_t1)
            && in_unit(self.p_t2)
            && self.c_t1 == self.p_t1.max(1.0 - self.p_t1)
            && self.c_t2 == self.p_t2.max(1.0 - self.p_t2)
            && self.d == (self.p_t1 - self.p_t2).abs()
            && self.p_max == self.p_t1.max(self.p_t2)
            && self.p_min == self.p_t1.min(self.p_t2)
            && self.p_min <= self.p_max
            && self.d == self.p_max - self.p_min
    }
}

pub fn build_meta_vector(p_t1: f64, p_t2: f64) -> Result<MetaFeatureVector> {
    MetaFeatureVector::from_probabilities(p_t1, p_t2)
}

/// How training subjects of an outer fold are split for their meta-features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerScheme {
    KFold(usize),
    LeaveOneOut,
}

/// Stratified outer folds and, per outer fold, the inner partition of its
/// training subjects. Index lists are positions in the paired dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub inner_scheme: InnerScheme,
    /// Test subjects of each outer fold, ascending.
    pub outer_folds: Vec<Vec<usize>>,
    /// `inner_folds[k][j]`: held-out subjects of inner fold `j` of outer fold `k`.
    pub inner_folds: Vec<Vec<Vec<usize>>>,
    pub n_subjects: usize,
}

impl FoldPlan {
    pub fn k_outer(&self) -> usize {
        self.outer_folds.len()
    }

    pub fn outer_test(&self, k: usize) -> &[usize] {
        &self.outer_folds[k]
    }

    pub fn outer_train(&self, k: usize) -> Vec<usize> {
        let test: BTreeSet<usize> = self.outer_folds[k].iter().copied().collect();
        (0..self.n_subjects).filter(|i| !test.contains(i)).collect()
    }

    pub fn inner_holdout(&self, k: usize, j: usize) -> &[usize] {
        &self.inner_folds[k][j]
    }

    pub fn inner_train(&self, k: usize, j: usize) -> Vec<usize> {
        let held: BTreeSet<usize> = self.inner_folds[k][j].iter().copied().collect();
        self.outer_train(k).into_iter().filter(|i| !held.contains(i)).collect()
    }
}

/// Deals each class's shuffled members round-robin over `k` folds; the
/// dealing position carries over from class 0 to class 1 so fold sizes stay
/// within one of each other.
fn stratified_deal(
    members: &[usize],
    labels: &[u8],
    k: usize,
    master: u64,
    path: &[u64],
) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..2u8 {
        let mut pool: Vec<usize> = members.iter().copied().filter(|&i| labels[i] == class).collect();
        let mut p = path.to_vec();
        p.push(u64::from(class));
        pool.shuffle(&mut rng::stream(master, &p));
        for i in pool {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

pub fn make_fold_plan(labels: &[u8], k_outer: usize, k_inner: usize, seed: u64) -> Result<FoldPlan> {
    make_fold_plan_with(labels, k_outer, InnerScheme::KFold(k_inner), seed)
}

pub fn make_fold_plan_with(labels: &[u8], k_outer: usize, inner: InnerScheme, seed: u64) -> Result<FoldPlan> {
    if k_outer < 2 {
        return Err(UpmiError::InvalidArgument("at least 2 outer folds are required".into()));
    }
    if let InnerScheme::KFold(k) = inner {
        if k < 2 {
            return Err(UpmiError::InvalidArgument("at least 2 inner folds are required".into()));
        }
    }
    for class in 0..2u8 {
        let count = labels.iter().filter(|&&y| y == class).count();
        if count < k_outer {
            return Err(UpmiError::StratificationTooSmall {
                class,
                count,
                folds: k_outer,
            });
        }
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let outer_folds = stratified_deal(&all, labels, k_outer, seed, &[domain::OUTER_FOLDS]);
    let mut plan = FoldPlan {
        seed,
        inner_scheme: inner,
        outer_folds,
        inner_folds: Vec::new(),
        n_subjects: labels.len(),
    };
    for k in 0..k_outer {
        let train = plan.outer_train(k);
        let folds = match inner {
            InnerScheme::KFold(k_inner) => {
                let mut folds = stratified_deal(&train, labels, k_inner, seed, &[domain::INNER_FOLDS, k as u64]);
                folds.retain(|f| !f.is_empty());
                folds
            }
            InnerScheme::LeaveOneOut => train.iter().map(|&i| vec![i]).collect(),
        };
        plan.inner_folds.push(folds);
    }
    Ok(plan)
}

/// Which base-model inputs were used where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProvenanceEvent {
    BaseModel {
        outer_fold: usize,
        inner_fold: Option<usize>,
        modality: Modality,
        /// Subjects the selection chain saw.
        selection_subjects: Vec<usize>,
        /// Subjects the logistic fit saw.
        fit_subjects: Vec<usize>,
        /// Subjects whose meta-features this model produced.
        scored_subjects: Vec<usize>,
    },
    GmmFit {
        outer_fold: usize,
        class: u8,
        fit_subjects: Vec<usize>,
    },
    MetaForest {
        outer_fold: usize,
        scenario_pct: u32,
        real_subjects: Vec<usize>,
        n_synthetic: usize,
        scored_subjects: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMeta {
    pub subject: usize,
    pub subject_id: String,
    pub label: u8,
    pub meta: MetaFeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseFit {
    pub modality: Modality,
    pub selection: SelectionResult,
    pub model: LogisticModel,
    pub report: FitReport,
}

/// Meta-features of one outer fold plus everything needed to audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofFold {
    pub fold: usize,
    pub train: Vec<LabeledMeta>,
    pub test: Vec<LabeledMeta>,
    /// Base models fit on the whole outer-training set.
    pub outer_models: Vec<BaseFit>,
    pub provenance: Vec<ProvenanceEvent>,
}

/// Base-model settings shared by every fit in the nested protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub selection: SelectionConfig,
    pub logistic: LogisticConfig,
}

struct Scored {
    fit: BaseFit,
    probs: Vec<f64>,
}

/// Selects, fits on `train` and scores `score` for one modality.
fn fit_and_score(
    data: &PairedDataset,
    modality: Modality,
    train: &[usize],
    score: &[usize],
    config: &BaseConfig,
    seed: u64,
) -> Result<Scored> {
    let table = data.modality(modality);
    let train_table = table.select_rows(train);
    let selection = select_features(&train_table, &config.selection, seed)?;
    let fit_table = train_table.select_features(&selection.selected_names)?;
    let (model, report) = logistic::fit_on_table(&fit_table, &config.logistic)?;
    let probs = logistic::predict_proba(&model, &table.select_rows(score))?;
    Ok(Scored {
        fit: BaseFit {
            modality,
            selection,
            model,
            report,
        },
        probs,
    })
}

fn check_two_classes(labels: &[u8], subjects: &[usize], outer: usize, inner: Option<usize>) -> Result<()> {
    let ones = subjects.iter().filter(|&&i| labels[i] == 1).count();
    if ones == 0 || ones == subjects.len() {
        return Err(UpmiError::DegenerateFold {
            outer,
            inner,
            detail: "training partition holds a single class".into(),
        });
    }
    Ok(())
}

fn label_meta(data: &PairedDataset, subjects: &[usize], p1: &[f64], p2: &[f64]) -> Result<Vec<LabeledMeta>> {
    subjects
        .iter()
        .zip(p1.iter().zip(p2))
        .map(|(&i, (&a, &b))| {
            Ok(LabeledMeta {
                subject: i,
                subject_id: data.subject_ids()[i].clone(),
                label: data.labels()[i],
                meta: build_meta_vector(a, b)?,
            })
        })
        .collect()
}

/// Builds the training and test meta-features of outer fold `outer_k`.
pub fn build_oof_meta_table(
    data: &PairedDataset,
    plan: &FoldPlan,
    outer_k: usize,
    config: &BaseConfig,
    seed: u64,
) -> Result<OofFold> {
    if outer_k >= plan.k_outer() {
        return Err(UpmiError::InvalidArgument(format!(
            "fold {outer_k} does not exist (plan has {})",
            plan.k_outer()
        )));
    }
    if plan.n_subjects != data.len() {
        return Err(UpmiError::Shape("fold plan and dataset differ in subject count".into()));
    }
    let labels = data.labels();
    let train = plan.outer_train(outer_k);
    let test = plan.outer_test(outer_k).to_vec();
    check_two_classes(labels, &train, outer_k, None)?;
    let mut provenance = Vec::new();

    // selection seed is shared by both modalities so identical tables give identical models
    let outer_seed = rng::derive_seed(seed, &[domain::SELECTION, outer_k as u64, 0]);
    let mut outer_models = Vec::with_capacity(2);
    let mut test_probs = Vec::with_capacity(2);
    for m in Modality::BOTH {
        let s = fit_and_score(data, m, &train, &test, config, outer_seed)?;
        provenance.push(ProvenanceEvent::BaseModel {
            outer_fold: outer_k,
            inner_fold: None,
            modality: m,
            selection_subjects: train.clone(),
            fit_subjects: train.clone(),
            scored_subjects: test.clone(),
        });
        outer_models.push(s.fit);
        test_probs.push(s.probs);
    }
    let test_meta = label_meta(data, &test, &test_probs[0], &test_probs[1])?;

    let mut by_subject: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for j in 0..plan.inner_folds[outer_k].len() {
        let held = plan.inner_holdout(outer_k, j).to_vec();
        let inner_train = plan.inner_train(outer_k, j);
        check_two_classes(labels, &inner_train, outer_k, Some(j))?;
        let inner_seed = rng::derive_seed(seed, &[domain::SELECTION, outer_k as u64, j as u64 + 1]);
        let mut probs = Vec::with_capacity(2);
        for m in Modality::BOTH {
            let s = fit_and_score(data, m, &inner_train, &held, config, inner_seed).map_err(|e| match e {
                UpmiError::SingleClass(detail) | UpmiError::ZeroVariance(detail) => UpmiError::DegenerateFold {
                    outer: outer_k,
                    inner: Some(j),
                    detail,
                },
                other => other,
            })?;
            provenance.push(ProvenanceEvent::BaseModel {
                outer_fold: outer_k,
                inner_fold: Some(j),
                modality: m,
                selection_subjects: inner_train.clone(),
                fit_subjects: inner_train.clone(),
                scored_subjects: held.clone(),
            });
            probs.push(s.probs);
        }
        for (pos, &i) in held.iter().enumerate() {
            by_subject.insert(i, (probs[0][pos], probs[1][pos]));
        }
    }
    let train_meta = train
        .iter()
        .map(|&i| {
            let (a, b) = by_subject[&i];
            Ok(LabeledMeta {
                subject: i,
                subject_id: data.subject_ids()[i].clone(),
                label: labels[i],
                meta: build_meta_vector(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(OofFold {
        fold: outer_k,
        train: train_meta,
        test: test_meta,
        outer_models,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub events_checked: usize,
    pub violations: Vec<String>,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every provenance event against the fold plan:
///
/// * no model scores a subject it was selected or fit on;
/// * everything fit in outer fold `k` stays inside fold `k`'s training set;
/// * inner models use exactly their inner training partition, and every
///   outer-training subject receives exactly one inner score per modality;
/// * mixtures are fit on outer-training subjects only;
/// * meta-forests train on outer-training subjects and score only test subjects.
pub fn audit_provenance(plan: &FoldPlan, events: &[ProvenanceEvent]) -> LeakageAudit {
    let mut violations = Vec::new();
    let train_sets: Vec<BTreeSet<usize>> = (0..plan.k_outer())
        .map(|k| plan.outer_train(k).into_iter().collect())
        .collect();
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let mut inner_scores: BTreeMap<(usize, Modality), Vec<usize>> = BTreeMap::new();
    let mut outer_scores: BTreeMap<(usize, Modality), Vec<usize>> = BTreeMap::new();

    for (e, event) in events.iter().enumerate() {
        match event {
            ProvenanceEvent::BaseModel {
                outer_fold: k,
                inner_fold,
                modality,
                selection_subjects,
                fit_subjects,
                scored_subjects,
            } => {
                let Some(train) = train_sets.get(*k) else {
                    violations.push(format!("event {e}: unknown outer fold {k}"));
                    continue;
                };
                let seen: BTreeSet<usize> = set(selection_subjects).union(&set(fit_subjects)).copied().collect();
                for i in scored_subjects {
                    if seen.contains(i) {
                        violations.push(format!(
                            "event {e}: fold {k} {modality:?} model scored subject {i} it was trained on"
                        ));
                    }
                }
                for i in &seen {
                    if !train.contains(i) {
                        violations.push(format!(
                            "event {e}: fold {k} {modality:?} model saw outer-test subject {i}"
                        ));
                    }
                }
                match inner_fold {
                    Some(j) => {
                        let expected = set(&plan.inner_train(*k, *j));
                        if set(fit_subjects) != expected || set(selection_subjects) != expected {
                            violations.push(format!("event {e}: inner model ({k},{j}) used the wrong partition"));
                        }
                        inner_scores.entry((*k, *modality)).or_default().extend(scored_subjects);
                    }
                    None => outer_scores.entry((*k, *modality)).or_default().extend(scored_subjects),
                }
            }
            ProvenanceEvent::GmmFit {
                outer_fold: k,
                class,
                fit_subjects,
            } => {
                let Some(train) = train_sets.get(*k) else {
                    violations.push(format!("event {e}: unknown outer fold {k}"));
                    continue;
                };
                for i in fit_subjects {
                    if !train.contains(i) {
                        violations.push(format!("event {e}: class-{class} mixture of fold {k} used test subject {i}"));
                    }
                }
            }
            ProvenanceEvent::MetaForest {
                outer_fold: k,
                scenario_pct,
                real_subjects,
                scored_subjects,
                ..
            } => {
                let Some(train) = train_sets.get(*k) else {
                    violations.push(format!("event {e}: unknown outer fold {k}"));
                    continue;
                };
                for i in real_subjects {
                    if !train.contains(i) {
                        violations.push(format!("event {e}: {scenario_pct}% forest of fold {k} trained on test subject {i}"));
                    }
                }
                for i in scored_subjects {
                    if train.contains(i) {
                        violations.push(format!("event {e}: {scenario_pct}% forest of fold {k} scored training subject {i}"));
                    }
                }
            }
        }
    }

    for ((k, m), mut scored) in inner_scores {
        scored.sort_unstable();
        let expected: Vec<usize> = train_sets[k].iter().copied().collect();
        if scored != expected {
            violations.push(format!(
                "fold {k} {m:?}: inner models did not score every training subject exactly once"
            ));
        }
    }
    for ((k, m), mut scored) in outer_scores {
        scored.sort_unstable();
        if scored != plan.outer_test(k) {
            violations.push(format!("fold {k} {m:?}: outer model scored a set other than the test fold"));
        }
    }
    LeakageAudit {
        events_checked: events.len(),
        violations,
    }
}
