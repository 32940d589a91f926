//! Threshold-free ranking metrics and confusion-derived rates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Positive-class F1, `2tp / (2tp + fp + fn)`. `None` when there is neither
/// a positive label nor a positive prediction.
pub fn f1_score(c: &Confusion) -> Option<f64> {
    let den = 2 * c.tp + c.fp + c.fn_;
    (den > 0).then(|| (2 * c.tp) as f64 / den as f64)
}

/// `(tp / (tp + fn), tn / (tn + fp))`.
pub fn sensitivity_specificity(c: &Confusion) -> Result<(f64, f64)> {
    if c.tp + c.fn_ == 0 {
        return Err(UpmiError::InvalidArgument("sensitivity undefined: no positive subjects".into()));
    }
    if c.tn + c.fp == 0 {
        return Err(UpmiError::InvalidArgument("specificity undefined: no negative subjects".into()));
    }
    Ok((
        c.tp as f64 / (c.tp + c.fn_) as f64,
        c.tn as f64 / (c.tn + c.fp) as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

fn class_sizes(labels: &[u8]) -> Result<(usize, usize)> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(UpmiError::SingleClass("ROC analysis".into()));
    }
    Ok((n0, n1))
}

/// Mann–Whitney AUC from mid-ranks (ties count ½) plus the ROC curve swept
/// over the unique scores.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<RocPoint>)> {
    if scores.len() != labels.len() {
        return Err(UpmiError::Shape("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(UpmiError::NumericalFailure("NaN score".into()));
    }
    let (n0, n1) = class_sizes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // mid-ranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[start..=end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        start = end + 1;
    }
    let u = rank_sum_pos - (n1 * (n1 + 1)) as f64 / 2.0;
    let auc = u / (n1 * n0) as f64;

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n0 as f64,
            tpr: tp as f64 / n1 as f64,
        });
    }
    Ok((auc, points))
}

/// Area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Upper-envelope linear interpolation of one ROC curve at `fpr`.
fn tpr_at(points: &[RocPoint], fpr: f64) -> f64 {
    let mut best: f64 = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if fpr < a.fpr || fpr > b.fpr {
            continue;
        }
        let v = if b.fpr == a.fpr {
            a.tpr.max(b.tpr)
        } else {
            a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
        };
        best = best.max(v);
    }
    best
}

/// Vertical average of several ROC curves on `grid` evenly spaced FPR values
/// (0 and 1 included); pinned to `(0, 0)` and `(1, 1)` at the ends.
pub fn mean_roc(curves: &[Vec<RocPoint>], grid: usize) -> Vec<RocPoint> {
    if curves.is_empty() || grid < 2 {
        return Vec::new();
    }
    (0..grid)
        .map(|g| {
            let fpr = g as f64 / (grid - 1) as f64;
            let tpr = if g == 0 {
                0.0
            } else if g == grid - 1 {
                1.0
            } else {
                curves.iter().map(|c| tpr_at(c, fpr)).sum::<f64>() / curves.len() as f64
            };
            RocPoint { fpr, tpr }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0usize;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs as f64
    }

    #[test]
    fn all_tied_scores_give_half() {
        let (auc, pts) = roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(pts.len(), 2);
    }

    #[test]
    fn perfect_ranking_gives_one() {
        let (auc, _) = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn matches_pairwise_concordance_and_trapezoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let scores: Vec<f64> = (0..20).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
        let (auc, pts) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, brute_force_auc(&scores, &labels));
        assert!((trapezoid_area(&pts) - auc).abs() < 1e-12);
        assert_eq!(pts.first().unwrap(), &RocPoint { fpr: 0.0, tpr: 0.0 });
        assert_eq!(pts.last().unwrap(), &RocPoint { fpr: 1.0, tpr: 1.0 });
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn confusion_rates_from_reported_counts() {
        let c = Confusion { tp: 18, fn_: 6, fp: 8, tn: 35 };
        assert_eq!(f1_score(&c), Some(0.72));
        let (sens, spec) = sensitivity_specificity(&c).unwrap();
        assert_eq!(sens, 0.75);
        assert_eq!((spec * 1000.0).round() / 1000.0, 0.814);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_score(&Confusion { tp: 5, tn: 3, ..Default::default() }), Some(1.0));
        assert_eq!(f1_score(&Confusion { fn_: 4, tn: 3, ..Default::default() }), Some(0.0));
        assert_eq!(f1_score(&Confusion { tn: 3, ..Default::default() }), None);
        assert_eq!(
            sensitivity_specificity(&Confusion { tp: 2, tn: 3, ..Default::default() }).unwrap(),
            (1.0, 1.0)
        );
        assert!(sensitivity_specificity(&Confusion { tn: 3, ..Default::default() }).is_err());
    }

    #[test]
    fn mean_roc_of_identical_curves_is_that_curve() {
        let (_, pts) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        let mean = mean_roc(&[pts.clone(), pts.clone()], 101);
        assert_eq!(mean.len(), 101);
        assert!(mean.windows(2).all(|w| w[1].tpr >= w[0].tpr));
        assert!((tpr_at(&pts, 0.5) - mean[50].tpr).abs() < 1e-12);
    }
}
