//! Fourier representation of real, zero-mean, periodic fields.
//!
//! A field on a torus of period `P` is stored by its orthonormal Fourier
//! coefficients `u_k`, `k = 1..=K`, with
//!
//! ```text
//! u(x) = P^{-1/2} * sum_{k != 0} u_k e^{i k q x},   q = 2π / P,   u_{-k} = conj(u_k).
//! ```
//!
//! The `k = 0` coefficient is never stored, so every field has zero mean and
//! is real-valued by construction. With this normalization
//! `‖u‖²_{H^m} = q^{2m} Σ_{k≠0} |k|^{2m} |u_k|²`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KseError, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Period and transform resolution of a 1D torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusSpec {
    period: f64,
    grid_size: usize,
}

impl TorusSpec {
    pub fn new(period: f64, grid_size: usize) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(KseError::InvalidParameter(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        if grid_size < 8 || grid_size % 2 != 0 {
            return Err(KseError::InvalidParameter(format!(
                "grid size must be an even integer >= 8, got {grid_size}"
            )));
        }
        Ok(Self { period, grid_size })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Fundamental wavenumber `q = 2π / P`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Number of stored modes, `n_g / 2 - 1`.
    pub fn max_modes(&self) -> usize {
        self.grid_size / 2 - 1
    }

    /// Highest mode retained by the 2/3 dealiasing rule, the largest `K` with `3K < n_g`.
    pub fn dealiased_modes(&self) -> usize {
        (self.grid_size - 1) / 3
    }

    /// Grid points `x_j = -P/2 + j P / n_g`.
    pub fn grid_points(&self) -> Vec<f64> {
        uniform_points(self.period, self.grid_size)
    }

    /// Same resolution per unit length on twice the period.
    pub fn doubled(&self) -> TorusSpec {
        TorusSpec {
            period: 2.0 * self.period,
            grid_size: 2 * self.grid_size,
        }
    }

    fn check_same(&self, other: &TorusSpec) -> Result<()> {
        if self.period != other.period || self.grid_size != other.grid_size {
            return Err(KseError::PeriodMismatch {
                left: self.period,
                right: other.period,
            });
        }
        Ok(())
    }
}

pub(crate) fn uniform_points(period: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| -0.5 * period + j as f64 * period / n as f64)
        .collect()
}

/// A real, zero-mean periodic field in half-spectrum storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    spec: TorusSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(spec: TorusSpec) -> Self {
        Self {
            spec,
            coeffs: vec![Complex64::new(0.0, 0.0); spec.max_modes()],
        }
    }

    /// Builds a field from `u_1, u_2, ...`; missing modes are zero.
    pub fn from_coeffs(spec: TorusSpec, coeffs: &[Complex64]) -> Result<Self> {
        if coeffs.len() > spec.max_modes() {
            return Err(KseError::GridTooSmall {
                needed: 2 * coeffs.len() + 2,
                got: spec.grid_size(),
            });
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(KseError::NonFinite { step: 0 });
        }
        let mut f = Self::zeros(spec);
        f.coeffs[..coeffs.len()].copy_from_slice(coeffs);
        Ok(f)
    }

    /// `Σ_k (s_k sin(kqx) + c_k cos(kqx))` from (mode, sine amplitude, cosine amplitude).
    pub fn from_trig(spec: TorusSpec, terms: &[(usize, f64, f64)]) -> Result<Self> {
        let mut f = Self::zeros(spec);
        let half_root = 0.5 * spec.period().sqrt();
        for &(k, s, c) in terms {
            if k == 0 || k > spec.max_modes() {
                return Err(KseError::InvalidParameter(format!(
                    "mode {k} outside 1..={}",
                    spec.max_modes()
                )));
            }
            f.coeffs[k - 1] += Complex64::new(c * half_root, -s * half_root);
        }
        Ok(f)
    }

    /// Samples on the uniform grid of `spec`; the mean is discarded.
    pub fn from_grid(spec: TorusSpec, values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n != spec.grid_size() {
            return Err(KseError::DimensionMismatch {
                expected: spec.grid_size(),
                got: n,
            });
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan(n, false).process(&mut buf);
        let scale = spec.period().sqrt() / n as f64;
        let mut f = Self::zeros(spec);
        for (i, c) in f.coeffs.iter_mut().enumerate() {
            let k = i + 1;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *c = buf[k] * (sign * scale);
        }
        Ok(f)
    }

    pub fn spec(&self) -> TorusSpec {
        self.spec
    }

    /// Coefficients `u_1 ..= u_K`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of mode `k >= 1`, zero beyond storage.
    pub fn coeff(&self, k: usize) -> Complex64 {
        if k == 0 || k > self.coeffs.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[k - 1]
        }
    }

    /// Highest mode with a nonzero coefficient (0 for the zero field).
    pub fn bandwidth(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| c.re != 0.0 || c.im != 0.0)
            .map_or(0, |i| i + 1)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn derivative(&self, m: u32) -> SpectralField {
        let q = self.spec.wavenumber();
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            let ik = Complex64::new(0.0, (i + 1) as f64 * q);
            *c *= ik.powu(m);
        }
        out
    }

    /// `‖D^m u‖²_H` over the full two-sided spectrum.
    pub fn sobolev_norm_sq(&self, m: u32) -> f64 {
        let q = self.spec.wavenumber();
        2.0 * self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64 * q).powi(2 * m as i32) * c.norm_sqr())
            .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.sobolev_norm_sq(0).sqrt()
    }

    /// `⟨D^m u, D^m v⟩_H`.
    pub fn inner_product(&self, other: &SpectralField, m: u32) -> Result<f64> {
        self.spec.check_same(&other.spec)?;
        let q = self.spec.wavenumber();
        Ok(2.0
            * self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .enumerate()
                .map(|(i, (a, b))| ((i + 1) as f64 * q).powi(2 * m as i32) * (a * b.conj()).re)
                .sum::<f64>())
    }

    /// `P_N u`: keep wavenumbers `|k| <= n`.
    pub fn project(&self, n: usize) -> SpectralField {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().skip(n) {
            *c = Complex64::new(0.0, 0.0);
        }
        out
    }

    /// `(I - P_N) u`.
    pub fn project_complement(&self, n: usize) -> SpectralField {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().take(n) {
            *c = Complex64::new(0.0, 0.0);
        }
        out
    }

    pub fn scale(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.linear_combination(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.linear_combination(1.0, other, -1.0)
    }

    /// `a u + b v`.
    pub fn linear_combination(&self, a: f64, other: &SpectralField, b: f64) -> Result<SpectralField> {
        self.spec.check_same(&other.spec)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(SpectralField {
            spec: self.spec,
            coeffs,
        })
    }

    /// Translation `x -> u(x + b)`.
    pub fn translate(&self, b: f64) -> SpectralField {
        let q = self.spec.wavenumber();
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            *c *= Complex64::from_polar(1.0, (i + 1) as f64 * q * b);
        }
        out
    }

    /// Dealiased pointwise square `P_{n_g/3}(u²)` with the mean removed.
    pub fn square(&self) -> SpectralField {
        let mut out = SpectralField::zeros(self.spec);
        dealiased_square(&self.coeffs, self.spec, &mut out.coeffs);
        out
    }

    /// Exact coefficients `(u²)_k` for `k = 1..=2 bandwidth`, without truncation.
    pub fn square_coeffs_exact(&self) -> Vec<Complex64> {
        let band = self.bandwidth();
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * band];
        if band == 0 {
            return out;
        }
        let n = (4 * band + 2).next_power_of_two();
        SquareScratch::new(n).square(&self.coeffs, band, self.spec.period(), 2 * band, &mut out);
        out
    }

    /// `u Du = ½ D(u²)`, pseudospectral with 2/3-rule dealiasing.
    pub fn nonlinear_term(&self) -> SpectralField {
        let mut out = self.square();
        let q = self.spec.wavenumber();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            *c *= Complex64::new(0.0, 0.5 * (i + 1) as f64 * q);
        }
        out
    }

    /// The same function viewed on period `2P`.
    pub fn lift_to_double_period(&self) -> SpectralField {
        let spec = self.spec.doubled();
        let mut out = SpectralField::zeros(spec);
        let r2 = std::f64::consts::SQRT_2;
        for (i, c) in self.coeffs.iter().enumerate() {
            out.coeffs[2 * (i + 1) - 1] = c * r2;
        }
        out
    }

    /// Values at `n_points` uniform points `-P/2 + j P / n_points`.
    pub fn evaluate_on_grid(&self, n_points: usize) -> Result<Vec<f64>> {
        let band = self.bandwidth();
        if n_points < 2 * band + 2 {
            return Err(KseError::GridTooSmall {
                needed: 2 * band + 2,
                got: n_points,
            });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n_points];
        let scale = 1.0 / self.spec.period().sqrt();
        for k in 1..=band {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = self.coeffs[k - 1] * (sign * scale);
            buf[k] += c;
            buf[n_points - k] += c.conj();
        }
        plan(n_points, true).process(&mut buf);
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// Value at a single point by direct summation.
    pub fn value_at(&self, x: f64) -> f64 {
        let q = self.spec.wavenumber();
        2.0 / self.spec.period().sqrt()
            * self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| (c * Complex64::from_polar(1.0, (i + 1) as f64 * q * x)).re)
                .sum::<f64>()
    }

    /// `max |u|` on a grid oversampled 4x relative to the bandwidth.
    pub fn linf_norm(&self) -> f64 {
        let band = self.bandwidth();
        if band == 0 {
            return 0.0;
        }
        let n = (4 * (2 * band + 2)).max(16);
        self.evaluate_on_grid(n)
            .expect("oversampled grid always resolves the bandwidth")
            .into_iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Writes `P_K(u²)` (mean dropped) for `K = min(out.len(), n_g/3)`, exactly.
///
/// The transform size is padded when the input band exceeds `n_g/3`.
pub(crate) fn dealiased_square(coeffs: &[Complex64], spec: TorusSpec, out: &mut [Complex64]) {
    let band = coeffs
        .iter()
        .rposition(|c| c.re != 0.0 || c.im != 0.0)
        .map_or(0, |i| i + 1);
    out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
    if band == 0 {
        return;
    }
    let keep = spec.dealiased_modes().min(out.len());
    let mut n = spec.grid_size();
    if band + keep >= n - band {
        n = (2 * band + keep + 2).next_power_of_two().max(n);
    }
    let mut scratch = SquareScratch::new(n);
    scratch.square(coeffs, band, spec.period(), keep, out);
}

/// Grid scratch space for repeated pseudospectral products.
pub(crate) struct SquareScratch {
    n: usize,
    buf: Vec<Complex64>,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
    work: Vec<Complex64>,
}

impl SquareScratch {
    pub(crate) fn new(n: usize) -> Self {
        let inverse = plan(n, true);
        let forward = plan(n, false);
        let work_len = inverse
            .get_inplace_scratch_len()
            .max(forward.get_inplace_scratch_len());
        Self {
            n,
            buf: vec![Complex64::new(0.0, 0.0); n],
            inverse,
            forward,
            work: vec![Complex64::new(0.0, 0.0); work_len],
        }
    }

    /// `out[k-1] = (u²)_k` for `k <= keep`; requires `n > 2 band + keep`.
    pub(crate) fn square(
        &mut self,
        coeffs: &[Complex64],
        band: usize,
        period: f64,
        keep: usize,
        out: &mut [Complex64],
    ) {
        let n = self.n;
        debug_assert!(n > 2 * band + keep);
        self.buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        // The grid starts at -P/2, which puts a factor (-1)^k on mode k.
        let scale = 1.0 / period.sqrt();
        for k in 1..=band {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = coeffs[k - 1] * (sign * scale);
            self.buf[k] = c;
            self.buf[n - k] = c.conj();
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.work);
        for c in self.buf.iter_mut() {
            *c = Complex64::new(c.re * c.re, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.work);
        let back = period.sqrt() / n as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let k = i + 1;
            if k > keep {
                *o = Complex64::new(0.0, 0.0);
                continue;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *o = self.buf[k] * (sign * back);
        }
    }
}
