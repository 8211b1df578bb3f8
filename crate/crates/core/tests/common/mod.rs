#![allow(dead_code)]

use kse_core::{SpectralField, TorusSpec};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random field on modes `1..=modes` with coefficients decaying like `k^-decay`.
pub fn random_field(spec: TorusSpec, modes: usize, decay: f64, rng: &mut StdRng) -> SpectralField {
    let terms: Vec<(usize, f64, f64)> = (1..=modes)
        .map(|k| {
            let w = (k as f64).powf(-decay);
            (k, w * (2.0 * rng.random::<f64>() - 1.0), w * (2.0 * rng.random::<f64>() - 1.0))
        })
        .collect();
    SpectralField::from_trig(spec, &terms).unwrap()
}

/// Random odd field (sine modes only).
pub fn random_odd(spec: TorusSpec, modes: usize, rng: &mut StdRng) -> SpectralField {
    let terms: Vec<(usize, f64, f64)> = (1..=modes)
        .map(|k| (k, (2.0 * rng.random::<f64>() - 1.0) / k as f64, 0.0))
        .collect();
    SpectralField::from_trig(spec, &terms).unwrap()
}

/// Grid points `-P/2 + jP/n`.
pub fn grid(period: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| -0.5 * period + j as f64 * period / n as f64).collect()
}

/// Trapezoid quadrature on a periodic grid, exact for trigonometric polynomials
/// of degree below `n`.
pub fn periodic_quadrature(values: &[f64], period: f64) -> f64 {
    values.iter().sum::<f64>() * period / values.len() as f64
}
