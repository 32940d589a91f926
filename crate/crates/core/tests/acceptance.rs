//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use upmi::ablation::run_ablation;
use upmi::cli::cmd_run;
use upmi::cohort::{generate_cohort, CohortSpec};
use upmi::config::RunConfig;
use upmi::gmm::{class_split, fit_gmm, sample_constrained, synthetic_count, GmmConfig, STANDARD_SCENARIOS};
use upmi::logistic::{loss_and_gradient, SampleWeights};
use upmi::meta::{audit_provenance, MetaFeatureVector, ProvenanceEvent};
use upmi::metrics::{f1_score, roc_auc, sensitivity_specificity, Confusion};
use upmi::stats::{bootstrap_ci_diff, cohens_d_paired, ks_two_sample, paired_t_test, validate_vectors};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..10_000 {
        let v = MetaFeatureVector::from_probabilities(rng.random(), rng.random()).unwrap();
        bad += usize::from(!v.satisfies_identities());
    }
    let mut sampled = 0;
    for seed in 0..20u64 {
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let p1 = (0.5 + 0.3 * gauss(&mut rng)).clamp(0.0, 1.0);
                let p2 = (0.5 + 0.3 * gauss(&mut rng)).clamp(0.0, 1.0);
                MetaFeatureVector::from_probabilities(p1, p2).unwrap().to_array().to_vec()
            })
            .collect();
        let fit = fit_gmm(&data, &GmmConfig::default(), seed).unwrap();
        let batch = sample_constrained(&fit.mixture, 500, 1, seed).unwrap();
        bad += batch.vectors.iter().filter(|v| !v.satisfies_identities()).count();
        sampled += batch.len();
    }
    outcome(bad == 0, format!("10000 random pairs + {sampled} GMM samples, {bad} identity violations"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = rng.random_range(20..60);
        let d = rng.random_range(2..8);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| gauss(&mut rng)).collect()).collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let sw = SampleWeights::balanced(&y).unwrap();
        for _ in 0..4 {
            let theta: Vec<f64> = (0..=d).map(|_| 0.5 * gauss(&mut rng)).collect();
            let (_, g) = loss_and_gradient(&theta, 1.0, &x, &y, &sw).unwrap();
            for j in 0..=d {
                let h = 1e-6;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (loss_and_gradient(&tp, 1.0, &x, &y, &sw).unwrap().0
                    - loss_and_gradient(&tm, 1.0, &x, &y, &sw).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    outcome(worst < 1e-5, format!("20 points over 5 datasets, max relative error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_drop: f64 = 0.0;
    let mut fits = 0;
    let mut rejected = 0;
    for run in 0..50u64 {
        let n = rng.random_range(15..200);
        let dim = rng.random_range(2..=7);
        let sep = rng.random_range(0.0..6.0);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let shift = if i % 2 == 0 { sep } else { 0.0 };
                (0..dim).map(|_| shift + gauss(&mut rng)).collect()
            })
            .collect();
        let fit = fit_gmm(&data, &GmmConfig::default(), run).unwrap();
        fits += 1;
        rejected += fit.notes.iter().filter(|n| n.contains("previous iterate kept")).count();
        for w in fit.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(
        worst_drop <= 1e-9,
        format!("{fits} fits, largest log-likelihood decrease {worst_drop:.2e}, {rejected} likelihood-lowering steps rejected"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        let (mut num, mut pairs) = (0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        mismatches += usize::from(auc != num / pairs as f64);
    }
    outcome(mismatches == 0, format!("100 instances, {mismatches} inexact"))
}

fn criterion_5() -> Outcome {
    let data = generate_cohort(&CohortSpec::strong_effect(5)).unwrap();
    let config = RunConfig::default();
    let r = run_ablation(&data, &STANDARD_SCENARIOS, &config, 5).unwrap();
    let count = |f: fn(&ProvenanceEvent) -> bool| r.provenance.iter().filter(|e| f(e)).count();
    let inner = count(|e| matches!(e, ProvenanceEvent::BaseModel { inner_fold: Some(_), .. }));
    let outer = count(|e| matches!(e, ProvenanceEvent::BaseModel { inner_fold: None, .. }));
    let gmm = count(|e| matches!(e, ProvenanceEvent::GmmFit { .. }));

    // negative control: a mixture fit that saw one outer-test subject must be caught
    let mut tampered = r.provenance.clone();
    let leaked = r.plan.outer_test(0)[0];
    tampered.push(ProvenanceEvent::GmmFit {
        outer_fold: 0,
        class: 0,
        fit_subjects: vec![leaked],
    });
    let caught = !audit_provenance(&r.plan, &tampered).is_clean();
    outcome(
        r.audit.is_clean() && caught && inner == 50 && outer == 10 && gmm == 10,
        format!(
            "67 subjects, {} events ({inner} inner, {outer} outer, {gmm} mixture fits), {} violations; planted leak caught: {caught}",
            r.audit.events_checked,
            r.audit.violations.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let counts: Vec<usize> = STANDARD_SCENARIOS.iter().map(|&p| synthetic_count(53, p)).collect();
    let balanced = counts.iter().all(|&n| {
        let (a, b) = class_split(n);
        a + b == n && a.abs_diff(b) <= 1
    });
    outcome(
        counts == [0, 13, 26, 53, 106] && balanced,
        format!("n_real 53 -> {counts:?}, class splits within 1: {balanced}"),
    )
}

fn criterion_7() -> Outcome {
    let data = generate_cohort(&CohortSpec::default()).unwrap();
    let config = RunConfig::default();
    let mut base = Vec::new();
    let mut not_worse = 0;
    let mut higher = 0;
    let mut lines = Vec::new();
    for seed in 1..=10u64 {
        let r = run_ablation(&data, &[0, 200], &config, seed).unwrap();
        let (a0, a2) = (r.reports[0].auc_mean, r.reports[1].auc_mean);
        base.push(a0);
        not_worse += usize::from(a2 >= a0 - 0.01);
        higher += usize::from(a2 > a0);
        lines.push(format!("{a0:.3}->{a2:.3}"));
    }
    let mean_base = base.iter().sum::<f64>() / base.len() as f64;
    let in_band = (0.80..=0.90).contains(&mean_base);
    outcome(
        in_band && not_worse == 10 && higher >= 7,
        format!(
            "real-only mean AUC {mean_base:.3}; 200% >= real-0.01 in {not_worse}/10, higher in {higher}/10 [{}]",
            lines.join(" ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let a = [1.0, 1.0, 1.0, 1.0, 2.0];
    let b = [0.0; 5];
    let t = paired_t_test(&a, &b).unwrap();
    let d = cohens_d_paired(&a, &b).unwrap();
    let t_ok = (t.t - 6.0).abs() < 1e-6 && (t.p - 0.003882).abs() < 1e-5;
    let d_ok = (d - 1.2 / 0.2f64.sqrt()).abs() < 1e-6;

    let x = [0.1, 0.4, 0.4, 0.7, 0.9];
    let y = [0.2, 0.4, 0.5, 0.8, 1.1];
    let ks = ks_two_sample(&x, &y).unwrap();
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&u| u <= v).count() as f64 / s.len() as f64;
    let exhaustive = x.iter().chain(&y).map(|&v| (ecdf(&x, v) - ecdf(&y, v)).abs()).fold(0.0, f64::max);
    let ks_ok = (ks.d - exhaustive).abs() < 1e-12;

    let flat = bootstrap_ci_diff(&[0.9, 0.8, 0.85], &[0.85, 0.75, 0.8], 1000, 0.95, 0).unwrap();
    let flat_ok = (flat.0 - 0.05).abs() < 1e-12 && (flat.1 - 0.05).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = 0.3;
    let mut covered = 0;
    for sim in 0..1000u64 {
        let diffs: Vec<f64> = (0..100).map(|_| truth + gauss(&mut rng)).collect();
        let zeros = vec![0.0; diffs.len()];
        let (lo, hi) = bootstrap_ci_diff(&diffs, &zeros, 2000, 0.95, sim).unwrap();
        covered += usize::from(lo <= truth && truth <= hi);
    }
    let coverage = covered as f64 / 1000.0;
    let cov_ok = (coverage - 0.95).abs() <= 0.02;
    outcome(
        t_ok && d_ok && ks_ok && flat_ok && cov_ok,
        format!(
            "t {:.6} p {:.6}, d {d:.6}, KS D {:.4} vs exhaustive {exhaustive:.4}, constant-diff CI {flat:?}, coverage {coverage:.3}",
            t.t, t.p, ks.d
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut passing_runs = 0;
    let mut similar = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        // two well-separated clusters in (p_t1, p_t2), away from the clip bounds
        let real: Vec<MetaFeatureVector> = (0..60)
            .map(|i| {
                let (m1, m2) = if i % 2 == 0 { (0.3, 0.35) } else { (0.7, 0.6) };
                let p1 = (m1 + 0.06 * gauss(&mut rng)).clamp(0.0, 1.0);
                let p2 = (m2 + 0.06 * gauss(&mut rng)).clamp(0.0, 1.0);
                MetaFeatureVector::from_probabilities(p1, p2).unwrap()
            })
            .collect();
        let rows: Vec<Vec<f64>> = real.iter().map(|v| v.to_array().to_vec()).collect();
        let fit = fit_gmm(&rows, &GmmConfig::default(), seed).unwrap();
        let synth = sample_constrained(&fit.mixture, real.len(), 0, seed + 1000).unwrap();
        let report = validate_vectors(&real, &synth.vectors).unwrap();
        similar.push(report.n_similar());
        passing_runs += usize::from(report.n_similar() >= 6);
    }
    outcome(
        passing_runs >= 18,
        format!("{passing_runs}/20 runs with >= 6/7 dimensions at p > 0.05 (per-run counts {similar:?})"),
    )
}

fn read_json_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig {
        output_dir: Some(tmp.path().join("run")),
        ..RunConfig::default()
    };
    cmd_run(&config).unwrap();
    let first = read_json_files(&tmp.path().join("run"));
    std::fs::remove_dir_all(tmp.path().join("run")).unwrap();
    cmd_run(&config).unwrap();
    let second = read_json_files(&tmp.path().join("run"));
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    outcome(
        !first.is_empty() && first.len() == second.len() && differing.is_empty(),
        format!("{} JSON reports compared, {} differ {differing:?}", first.len(), differing.len()),
    )
}

fn criterion_11() -> Outcome {
    let c = Confusion {
        tp: 18,
        fn_: 6,
        tn: 35,
        fp: 8,
    };
    let (sens, spec) = sensitivity_specificity(&c).unwrap();
    let f1 = f1_score(&c).unwrap();
    let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
    outcome(
        r3(sens) == 0.750 && r3(spec) == 0.814 && r3(f1) == 0.720 && sens == 0.75 && f1 == 0.72,
        format!("sensitivity {sens:.3}, specificity {spec:.3} ({spec}), F1 {f1:.3}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("meta-feature identities", criterion_1, Duration::from_secs(1)),
        ("logistic gradient check", criterion_2, Duration::from_secs(1)),
        ("EM monotonicity", criterion_3, Duration::from_secs(10)),
        ("AUC oracle equivalence", criterion_4, Duration::from_secs(5)),
        ("leakage audit", criterion_5, Duration::from_secs(120)),
        ("synthetic-count arithmetic", criterion_6, Duration::from_secs(1)),
        ("dose-response analogue", criterion_7, Duration::from_secs(600)),
        ("statistics correctness", criterion_8, Duration::from_secs(60)),
        ("synthetic quality", criterion_9, Duration::from_secs(60)),
        ("determinism", criterion_10, Duration::from_secs(1200)),
        ("confusion-derived metrics", criterion_11, Duration::from_secs(1)),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {} {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
