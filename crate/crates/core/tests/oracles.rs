use statrs::distribution::{ContinuousCDF, StudentsT};
use upmi::stats::{cohens_d_paired, ks_two_sample, paired_t_test, student_t_cdf};

#[test]
fn t_cdf_agrees_with_statrs() {
    for &df in &[1.0, 2.0, 3.0, 4.0, 7.5, 30.0, 200.0] {
        let reference = StudentsT::new(0.0, 1.0, df).unwrap();
        for i in -40..=40 {
            let t = i as f64 * 0.25;
            let ours = student_t_cdf(t, df);
            let theirs = reference.cdf(t);
            assert!((ours - theirs).abs() < 1e-10, "df {df} t {t}: {ours} vs {theirs}");
        }
    }
}

#[test]
fn paired_t_p_matches_statrs_two_sided() {
    let a = [0.81, 0.77, 0.90, 0.85, 0.79, 0.88];
    let b = [0.78, 0.79, 0.84, 0.80, 0.80, 0.83];
    let r = paired_t_test(&a, &b).unwrap();
    let dist = StudentsT::new(0.0, 1.0, r.df as f64).unwrap();
    let p = 2.0 * (1.0 - dist.cdf(r.t.abs()));
    assert!((r.p - p).abs() < 1e-10);
    let d = cohens_d_paired(&a, &b).unwrap();
    assert!((d - r.mean_diff / r.sd_diff).abs() < 1e-12);
}

/// Largest gap between the two empirical CDFs, evaluated at every pooled value.
fn ks_exhaustive(x: &[f64], y: &[f64]) -> f64 {
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    x.iter().chain(y).map(|&t| (ecdf(x, t) - ecdf(y, t)).abs()).fold(0.0, f64::max)
}

#[test]
fn ks_statistic_matches_exhaustive_search() {
    let mut state = 17u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) % 9) as f64
    };
    for n in 1..25 {
        let x: Vec<f64> = (0..n).map(|_| next()).collect();
        let y: Vec<f64> = (0..(n * 3 % 17 + 1)).map(|_| next() + 0.5).collect();
        let r = ks_two_sample(&x, &y).unwrap();
        assert!((r.d - ks_exhaustive(&x, &y)).abs() < 1e-12);
    }
}

#[test]
fn ks_identical_samples() {
    let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let r = ks_two_sample(&x, &x).unwrap();
    assert_eq!(r.d, 0.0);
    assert_eq!(r.p, 1.0);
}
