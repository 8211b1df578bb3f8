//! Forcing operator checked against the normal equations and eigenvalues of SᵀS.

mod common;

use common::*;
use kse_core::noise::{ForcingOperator, ForcingTerm, NoiseStream, Phase};
use kse_core::{KseError, SpectralField, TorusSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Real coordinates `(√2 Re u_k, -√2 Im u_k)` for `k = 1..=modes`.
fn real_coords(u: &SpectralField, modes: usize) -> DVector<f64> {
    let r2 = std::f64::consts::SQRT_2;
    DVector::from_iterator(
        2 * modes,
        (1..=modes).flat_map(|k| [r2 * u.coeff(k).re, -r2 * u.coeff(k).im]),
    )
}

fn mixed_columns(spec: TorusSpec, modes: usize, rng: &mut rand::rngs::StdRng) -> Vec<SpectralField> {
    (0..2 * modes)
        .map(|_| {
            let terms: Vec<(usize, f64, f64)> = (1..=modes)
                .map(|k| (k, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            SpectralField::from_trig(spec, &terms).unwrap()
        })
        .collect()
}

#[test]
fn canonical_forcing_constants() {
    let spec = TorusSpec::new(16.0, 128).unwrap();
    let f = ForcingOperator::canonical(spec, 4, 0.5).unwrap();
    assert_eq!(f.rank(), 8);
    assert_eq!(f.range_n(), 4);
    assert!((f.hs_norm_sq() - 2.0).abs() < 1e-14);
    assert!((f.hs_norm_sq_doubled() - 4.0).abs() < 1e-14);
    assert!((f.operator_norm_inverse() - 2.0).abs() < 1e-12);
    for col in f.columns() {
        assert!((col.norm() - 0.5).abs() < 1e-14);
    }
}

#[test]
fn pseudo_inverse_matches_normal_equations() {
    let mut r = rng(21);
    let spec = TorusSpec::new(16.0, 64).unwrap();
    let cols = mixed_columns(spec, 4, &mut r);
    let s = DMatrix::from_columns(&cols.iter().map(|c| real_coords(c, 4)).collect::<Vec<_>>());
    let f = ForcingOperator::new(spec, cols).unwrap();
    for _ in 0..20 {
        let g = random_field(spec, 4, 0.0, &mut r);
        let w = f.sigma_inverse(&g).unwrap();
        let gt = real_coords(&g, 4);
        let oracle = (s.transpose() * &s).lu().solve(&(s.transpose() * gt)).unwrap();
        for (a, b) in w.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let back = f.apply_sigma(&w).unwrap();
        assert!(back.sub(&g).unwrap().norm() < 1e-10 * (1.0 + g.norm()));
    }
}

#[test]
fn inverse_norm_matches_smallest_eigenvalue() {
    let mut r = rng(22);
    let spec = TorusSpec::new(2.0 * std::f64::consts::PI, 64).unwrap();
    for _ in 0..5 {
        let cols = mixed_columns(spec, 3, &mut r);
        let s = DMatrix::from_columns(&cols.iter().map(|c| real_coords(c, 3)).collect::<Vec<_>>());
        let f = ForcingOperator::new(spec, cols).unwrap();
        assert_eq!(f.range_n(), 3);
        let eig = (s.transpose() * &s).symmetric_eigen();
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let oracle = 1.0 / lmin.sqrt();
        let got = f.operator_norm_inverse();
        assert!((got - oracle).abs() < 1e-8 * oracle, "{got} vs {oracle}");
    }
}

#[test]
fn range_condition_detects_gaps() {
    let spec = TorusSpec::new(16.0, 64).unwrap();
    let terms = [
        ForcingTerm::new(1, Phase::Sin, 1.0),
        ForcingTerm::new(1, Phase::Cos, 1.0),
        ForcingTerm::new(2, Phase::Sin, 1.0),
        ForcingTerm::new(3, Phase::Sin, 0.3),
        ForcingTerm::new(3, Phase::Cos, 0.3),
    ];
    let f = ForcingOperator::from_terms(spec, &terms).unwrap();
    // mode 2 lacks its cosine, so only P_1 H lies in the range
    assert_eq!(f.range_n(), 1);
    let g = SpectralField::from_trig(spec, &[(2, 0.0, 1.0)]).unwrap();
    assert!(matches!(f.sigma_inverse(&g), Err(KseError::NotInRange { .. })));
    let ok = SpectralField::from_trig(spec, &[(2, 1.0, 0.0), (3, 0.2, -0.1)]).unwrap();
    let w = f.sigma_inverse(&ok).unwrap();
    assert!(f.apply_sigma(&w).unwrap().sub(&ok).unwrap().norm() < 1e-12);
}

#[test]
fn streams_are_reproducible_and_seekable() {
    let mut a = NoiseStream::new(7, 3);
    let mut first = vec![0.0; 16];
    let mut second = vec![0.0; 16];
    a.standard_normals(&mut first);
    a.standard_normals(&mut second);
    assert_ne!(first, second);
    let mut b = NoiseStream::new(7, 3);
    b.set_counter(1);
    let mut again = vec![0.0; 16];
    b.standard_normals(&mut again);
    assert_eq!(again, second);
    let mut c = NoiseStream::new(7, 4);
    let mut other = vec![0.0; 16];
    c.standard_normals(&mut other);
    assert_ne!(other, first);
}

#[test]
fn increments_have_brownian_moments() {
    let mut s = NoiseStream::new(1, 0);
    let dt = 0.01;
    let n = 50_000;
    let (mut m1, mut m2) = (0.0, 0.0);
    for _ in 0..n {
        let w = s.sample_increment(2, dt);
        m1 += w[0] + w[1];
        m2 += w[0] * w[0] + w[1] * w[1];
    }
    let samples = 2.0 * n as f64;
    let mean = m1 / samples;
    let var = m2 / samples;
    assert!(mean.abs() < 4.0 * (dt / samples).sqrt());
    assert!((var - dt).abs() < 4.0 * dt * (2.0 / samples).sqrt());
}
