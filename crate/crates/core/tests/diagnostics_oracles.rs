//! Bound formulas replayed independently and fits on synthetic data.

mod common;

use common::*;
use kse_core::diagnostics::*;
use kse_core::metrics::*;
use kse_core::{SpectralField, TorusSpec};
use rand::seq::SliceRandom;

#[test]
fn tv_bounds_replay() {
    for &(m, s, l) in &[(0.0, 2.0, 1.0), (1e-3, 2.0, 1.0), (0.37, 1.5, 3.0), (12.0, 2.0, 1.0), (400.0, 2.0, 1.0)] {
        let tv = pinsker_tv_bounds(m, s, l);
        let sqrt_replay = 0.5 * s * l * f64::sqrt(m);
        let gap_replay = (0.5 * (-0.5 * s * s * l * l * m).exp()).ln();
        assert!((tv.bound_sqrt - sqrt_replay).abs() <= 1e-10 * sqrt_replay.max(1e-300));
        assert!((tv.log_exp_gap - gap_replay).abs() <= 1e-10 * gap_replay.abs());
        assert!((tv.bound_exp - (1.0 - 0.5 * (-0.5 * s * s * l * l * m).exp())).abs() <= 1e-10);
        assert!(tv.bound_exp >= 0.5 && tv.bound_exp <= 1.0);
        assert!(tv.log_exp_gap <= 0.5f64.ln() && tv.log_exp_gap.is_finite());
    }
}

#[test]
fn moment_bounds_replay() {
    let (beta, c0, c1, u0, t) = (1e-3, 7.5, 3.25, 400.0, 6.0);
    let r11 = (2.0 * (4.0 * beta * c0 + beta * c1 + 4.0 * beta * (-t / 4.0f64).exp() * u0).exp()).ln();
    assert!((log_moment_bound(beta, c0, c1, u0, t) - r11).abs() < 1e-12);
    let r10 = (2.0 * (4.0 * beta * u0 + beta * c0 * t + beta * c1).exp()).ln();
    assert!((log_integrated_d2_bound(beta, c0, c1, u0, t) - r10).abs() < 1e-12);
}

#[test]
fn log_moments_match_direct_means() {
    let x = [0.1, 0.5, -0.3, 2.0, 1.1];
    let m = LogMoment::from_exponents(&x).unwrap();
    let e: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
    let (mean, se) = mean_and_stderr(&e);
    assert!((m.mean() - mean).abs() < 1e-12 * mean);
    assert!((m.log_upper - (mean + 2.0 * se).ln()).abs() < 1e-12);
    // huge exponents stay finite in log space
    let big = LogMoment::from_exponents(&[1e4, 1e4 + 1.0]).unwrap();
    assert!(big.log_mean.is_finite() && big.log_mean > 1e4);
}

#[test]
fn threshold_time_is_smallest_step_multiple() {
    for &dt in &[1e-3, 2e-3, 0.01] {
        let t = t_threshold(dt);
        assert!(8.0 * (-t / 4.0f64).exp() <= 0.5);
        assert!(8.0 * (-(t - dt) / 4.0f64).exp() > 0.5);
        assert!(((t / dt).round() * dt - t).abs() < 1e-9);
    }
    assert!((t_threshold(1e-3) - 11.091).abs() < 1e-9);
}

#[test]
fn rate_constants_replay_in_an_admissible_regime() {
    let p = RateInputs {
        beta: 0.01,
        gamma: 1.0,
        period: 1.0,
        c2: 1000.0,
        k: 100.0,
        c0: 50.0,
        c1: 20.0,
        radius: 1.0,
        sigma_inv_norm: 2.0,
        lambda: 500.5,
        n_c: 10,
        dt: 1e-3,
        sigma_hs_sq_doubled: 4.0,
    };
    let bracket = 1000.0 - 4.0 / 0.01 - 0.01 * 50.0 / 8.0;
    assert!((rate_bracket(&p) - bracket).abs() < 1e-9);
    let rc = theoretical_rates(&p).unwrap();
    assert!((rc.r1_rate - 0.5 * bracket).abs() < 1e-9);
    let r1 = |t: f64| 2.0 * (4.0f64 * 0.01 * 50.0 + 17.0 / 16.0 * 0.01 * 20.0).exp() * (-0.5 * bracket * t).exp();
    assert!((rc.r1(0.01) - r1(0.01)).abs() < 1e-10 * r1(0.01));
    let c = 2f64.sqrt() * 2.0 * 500.5 * (0.01 * 20.0 / 16.0f64).exp() / bracket.sqrt();
    assert!((rc.log_contract_const - c.ln()).abs() < 1e-12);
    let alpha = (2.0 * 0.01 / 1e4f64).exp() * (r1(rc.t_threshold) + c / 100.0);
    assert!((rc.alpha_contract - alpha).abs() < 1e-10 * alpha);
    let inner = 4.0 * (2.0 * 500.5f64).powi(2) * (0.01f64 * 20.0 / 8.0 + 0.01 / 2.0).exp() / bracket;
    assert!((rc.log_epsilon - (0.5f64.ln() - inner)).abs() < 1e-10 * inner);
    assert!(rc.beta_small == (0.01 < 1.0 / 64.0));
    // and the default scenario is outside the admissible regime
    let mut bad = p;
    bad.c2 = 1.0;
    assert!(theoretical_rates(&bad).is_err());
}

#[test]
fn decay_fit_recovers_synthetic_rates() {
    let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
    let v0 = 5.0;
    let y: Vec<f64> = t.iter().map(|s| 3.0 * (-0.4 * s).exp() + 2.0).collect();
    let fit = lyapunov_decay_fit(&t, &y, v0).unwrap();
    assert!((fit.c_fit - 0.4).abs() < 1e-4, "{fit:?}");
    assert!((fit.offset - 2.0).abs() < 1e-3);
    for (s, v) in t.iter().zip(&y) {
        assert!(*v <= fit.c_const * (-fit.c_fit * s).exp() * v0 + fit.c_const + 1e-9);
    }
    assert!(lyapunov_decay_fit(&t[..5], &y[..5], v0).is_err());
}

#[test]
fn scalar_moment_lemma_holds_on_a_grid() {
    let xs: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
    let ts: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
    for &a in &[0.1, 1.0, 4.0] {
        assert!(scalar_moment_lemma_check(1.5, 3.0, a, &xs, &ts).unwrap() > 0);
    }
}

#[test]
fn wasserstein_estimates() {
    let spec = TorusSpec::new(16.0, 64).unwrap();
    let mut r = rng(41);
    let members: Vec<SpectralField> = (0..40).map(|_| random_field(spec, 6, 0.0, &mut r)).collect();
    let a = EnsembleSnapshot::new(members.clone(), 1.0);
    let p = MetricParams::new(100.0, 1e-3).unwrap();
    for d in [Distance::Norm, Distance::DKBeta, Distance::DTilde] {
        assert_eq!(wasserstein_estimate(&a, &a, d, p).unwrap().value, 0.0);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut r);
        let b = EnsembleSnapshot::new(shuffled, 1.0);
        assert_eq!(wasserstein_estimate(&a, &b, d, p).unwrap().value, 0.0);
    }
    let one = EnsembleSnapshot::new(vec![members[0].clone()], 0.0);
    let two = EnsembleSnapshot::new(vec![members[1].clone()], 0.0);
    let w = wasserstein_estimate(&one, &two, Distance::Norm, p).unwrap();
    assert_eq!(w.value, members[0].sub(&members[1]).unwrap().norm());
    assert!(wasserstein_estimate(&a, &one, Distance::Norm, p).is_err());
    // permuting the second ensemble leaves the estimate unchanged
    let z: Vec<SpectralField> = (0..40).map(|_| random_field(spec, 6, 0.0, &mut r)).collect();
    let b = EnsembleSnapshot::new(z.clone(), 0.0);
    let mut zs = z;
    zs.reverse();
    let c = EnsembleSnapshot::new(zs, 0.0);
    let x = wasserstein_estimate(&a, &b, Distance::DTilde, p).unwrap().value;
    let y = wasserstein_estimate(&a, &c, Distance::DTilde, p).unwrap().value;
    assert!((x - y).abs() < 1e-12 * x);
}

#[test]
fn metric_formula_replay() {
    let spec = TorusSpec::new(16.0, 64).unwrap();
    let mut r = rng(42);
    let p = MetricParams::new(2.0, 0.01).unwrap();
    for _ in 0..200 {
        let u = random_field(spec, 5, 0.0, &mut r);
        let v = random_field(spec, 5, 0.0, &mut r).scale(0.1);
        let diff: f64 = (1..=5).map(|k| (u.coeff(k) - v.coeff(k)).norm_sqr()).sum::<f64>() * 2.0;
        let (nu, nv) = (u.sobolev_norm_sq(0), v.sobolev_norm_sq(0));
        let th = diff.sqrt() * (0.01 * nu).exp();
        assert!((theta(&u, &v, 0.01) - th).abs() < 1e-12 * (1.0 + th));
        let d = (2.0 * diff.sqrt() * (0.01 * nu).exp()).min(2.0 * diff.sqrt() * (0.01 * nv).exp()).min(1.0);
        assert!((d_k_beta(&u, &v, p) - d).abs() < 1e-12);
        let dt2 = d * (1.0 + (0.01 * nu).exp() + (0.01 * nv).exp());
        assert!((d_tilde(&u, &v, p).powi(2) - dt2).abs() < 1e-12 * (1.0 + dt2));
    }
    let zero = SpectralField::zeros(spec);
    let unit = random_field(spec, 3, 0.0, &mut r);
    let unit = unit.scale(1.0 / unit.norm());
    assert!((theta(&zero, &unit, 0.2) - 1.0).abs() < 1e-15);
    assert!((theta(&unit, &zero, 0.2) - 0.2f64.exp()).abs() < 1e-14);
}

#[test]
fn rate_fit_on_synthetic_series() {
    let t: Vec<f64> = (0..8).map(|i| 11.0 + 4.0 * i as f64).collect();
    let w: Vec<f64> = t.iter().map(|s| (-0.3 * s).exp()).collect();
    let f = mixing_rate_fit(&t, &w).unwrap();
    assert!((f.c_emp - 0.3).abs() < 1e-6 && (f.r_squared - 1.0).abs() < 1e-12);
    let flat = mixing_rate_fit(&t, &[1.7; 8]).unwrap();
    assert_eq!(flat.c_emp, 0.0);
    assert!(mixing_rate_fit(&t[..5], &w[..5]).is_err());
    let mut z = w.clone();
    z[3] = 0.0;
    assert!(mixing_rate_fit(&t, &z).is_err());
    assert!(decreasing_within(&w, &[0.0; 8], 2.0));
    assert!(!decreasing_within(&[1.0, 1.2], &[0.05, 0.05], 2.0));
    assert!(decreasing_within(&[1.0, 1.1], &[0.05, 0.05], 2.0));
}
