//! Finite-rank additive forcing `σ W(t) = Σ_j σ_j B_j(t)` and its random streams.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KseError, Result};
use crate::spectral::{SpectralField, TorusSpec};

/// Relative tolerance for span membership and range checks.
pub const RANGE_TOL: f64 = 1e-9;

/// ChaCha words reserved for each step of a stream.
const WORDS_PER_STEP: u128 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Sin,
    Cos,
}

/// One forcing column `amplitude * sqrt(2/P) * {sin, cos}(k q x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcingTerm {
    pub mode: usize,
    pub phase: Phase,
    pub amplitude: f64,
}

impl ForcingTerm {
    pub fn new(mode: usize, phase: Phase, amplitude: f64) -> Self {
        Self {
            mode,
            phase,
            amplitude,
        }
    }

    /// The column as a field; its H-norm equals `|amplitude|`.
    pub fn field(&self, spec: TorusSpec) -> Result<SpectralField> {
        let mut f = SpectralField::zeros(spec);
        if self.mode == 0 || self.mode > spec.max_modes() {
            return Err(KseError::InvalidParameter(format!(
                "forcing mode {} outside 1..={}",
                self.mode,
                spec.max_modes()
            )));
        }
        let a = self.amplitude * std::f64::consts::FRAC_1_SQRT_2;
        f.coeffs_mut()[self.mode - 1] = match self.phase {
            Phase::Cos => Complex64::new(a, 0.0),
            Phase::Sin => Complex64::new(0.0, -a),
        };
        Ok(f)
    }
}

/// Real orthonormal coordinates `(cos_k, sin_k)` of the first `band` modes.
pub(crate) fn real_coords(u: &SpectralField, band: usize) -> DVector<f64> {
    let r2 = std::f64::consts::SQRT_2;
    let mut out = DVector::zeros(2 * band);
    for k in 1..=band {
        let c = u.coeff(k);
        out[2 * (k - 1)] = r2 * c.re;
        out[2 * (k - 1) + 1] = -r2 * c.im;
    }
    out
}

fn field_from_coords(spec: TorusSpec, x: &DVector<f64>) -> SpectralField {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut f = SpectralField::zeros(spec);
    let coeffs = f.coeffs_mut();
    for k in 0..x.len() / 2 {
        coeffs[k] = Complex64::new(r * x[2 * k], -r * x[2 * k + 1]);
    }
    f
}

/// The map `σ: R^M -> H` given by its columns.
#[derive(Clone, Debug)]
pub struct ForcingOperator {
    spec: TorusSpec,
    columns: Vec<SpectralField>,
    band: usize,
    range_n: usize,
    hs_norm_sq: f64,
    /// Columns in real coordinates, `2 band x M`.
    matrix: DMatrix<f64>,
    /// Orthonormal basis of the column span.
    span: DMatrix<f64>,
    /// Moore–Penrose pseudo-inverse, `M x 2 band`.
    pinv: DMatrix<f64>,
    inverse_norm: f64,
}

impl ForcingOperator {
    pub fn new(spec: TorusSpec, columns: Vec<SpectralField>) -> Result<Self> {
        if columns.is_empty() {
            return Err(KseError::InvalidParameter(
                "forcing needs at least one column".into(),
            ));
        }
        for (j, c) in columns.iter().enumerate() {
            if c.spec() != spec {
                return Err(KseError::PeriodMismatch {
                    left: spec.period(),
                    right: c.spec().period(),
                });
            }
            if c.bandwidth() == 0 {
                return Err(KseError::InvalidParameter(format!(
                    "forcing column {j} is zero"
                )));
            }
            if !c.is_finite() {
                return Err(KseError::InvalidParameter(format!(
                    "forcing column {j} is not finite"
                )));
            }
        }
        let band = columns.iter().map(|c| c.bandwidth()).max().unwrap_or(0);
        let m = columns.len();
        let mut matrix = DMatrix::zeros(2 * band, m);
        for (j, c) in columns.iter().enumerate() {
            matrix.set_column(j, &real_coords(c, band));
        }
        let hs_norm_sq = columns.iter().map(|c| c.sobolev_norm_sq(0)).sum();

        let svd = matrix.clone().svd(true, true);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let cut = smax * 1e-12 * (2 * band).max(m) as f64;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cut)
            .collect();
        let span = DMatrix::from_fn(2 * band, keep.len(), |r, c| u[(r, keep[c])]);
        let pinv = svd
            .pseudo_inverse(cut)
            .map_err(|e| KseError::InvalidParameter(e.to_string()))?;

        let mut range_n = 0;
        'modes: for k in 1..=band {
            for off in 0..2 {
                let mut e = DVector::zeros(2 * band);
                e[2 * (k - 1) + off] = 1.0;
                let proj = &span * (span.transpose() * &e);
                if (e - proj).norm() >= RANGE_TOL {
                    break 'modes;
                }
            }
            range_n = k;
        }

        let restricted = pinv.columns(0, 2 * range_n).into_owned();
        let inverse_norm = if range_n == 0 {
            0.0
        } else {
            restricted.singular_values().max()
        };

        Ok(Self {
            spec,
            columns,
            band,
            range_n,
            hs_norm_sq,
            matrix,
            span,
            pinv,
            inverse_norm,
        })
    }

    pub fn from_terms(spec: TorusSpec, terms: &[ForcingTerm]) -> Result<Self> {
        let columns = terms
            .iter()
            .map(|t| t.field(spec))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, columns)
    }

    /// Sine and cosine of every mode `1..=modes` at a common amplitude.
    pub fn canonical(spec: TorusSpec, modes: usize, amplitude: f64) -> Result<Self> {
        let terms: Vec<ForcingTerm> = (1..=modes)
            .flat_map(|k| {
                [
                    ForcingTerm::new(k, Phase::Sin, amplitude),
                    ForcingTerm::new(k, Phase::Cos, amplitude),
                ]
            })
            .collect();
        Self::from_terms(spec, &terms)
    }

    pub fn spec(&self) -> TorusSpec {
        self.spec
    }

    pub fn columns(&self) -> &[SpectralField] {
        &self.columns
    }

    /// Number of driving Brownian motions `M`.
    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    /// Highest mode touched by any column.
    pub fn bandwidth(&self) -> usize {
        self.band
    }

    /// Largest `N` with `P_N H` inside the span of the columns.
    pub fn range_n(&self) -> usize {
        self.range_n
    }

    /// `Σ_j ‖σ_j‖²_H`.
    pub fn hs_norm_sq(&self) -> f64 {
        self.hs_norm_sq
    }

    /// Hilbert–Schmidt norm squared of the forcing viewed on twice the period.
    pub fn hs_norm_sq_doubled(&self) -> f64 {
        2.0 * self.hs_norm_sq
    }

    pub fn apply_sigma(&self, w: &[f64]) -> Result<SpectralField> {
        if w.len() != self.rank() {
            return Err(KseError::DimensionMismatch {
                expected: self.rank(),
                got: w.len(),
            });
        }
        let mut out = SpectralField::zeros(self.spec);
        {
            let coeffs = out.coeffs_mut();
            for (wj, col) in w.iter().zip(&self.columns) {
                for (o, c) in coeffs.iter_mut().zip(col.coeffs()).take(self.band) {
                    *o += c * *wj;
                }
            }
        }
        Ok(out)
    }

    /// Minimal-norm `w` with `σ w = g`, for `g` in the span of the columns.
    pub fn sigma_inverse(&self, g: &SpectralField) -> Result<Vec<f64>> {
        if g.spec() != self.spec {
            return Err(KseError::PeriodMismatch {
                left: self.spec.period(),
                right: g.spec().period(),
            });
        }
        let total = g.sobolev_norm_sq(0).sqrt();
        if total == 0.0 {
            return Ok(vec![0.0; self.rank()]);
        }
        let x = real_coords(g, self.band);
        let inside = x.norm();
        let outside = (total * total - inside * inside).max(0.0).sqrt();
        let in_span = &self.span * (self.span.transpose() * &x);
        let residual = ((&x - in_span).norm() + outside) / total;
        if residual > RANGE_TOL {
            return Err(KseError::NotInRange { residual });
        }
        Ok((&self.pinv * x).iter().copied().collect())
    }

    /// `σ^{-1}` applied to `P_N g` without a range check; `N <= range_n`.
    pub(crate) fn sigma_inverse_low(&self, g: &[Complex64], n: usize, out: &mut [f64]) {
        let r2 = std::f64::consts::SQRT_2;
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..n.min(g.len()) {
            let a = r2 * g[k].re;
            let b = -r2 * g[k].im;
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.pinv[(j, 2 * k)] * a + self.pinv[(j, 2 * k + 1)] * b;
            }
        }
    }

    /// `‖σ^{-1}‖` as an operator on `P_N H` with `N = range_n`.
    pub fn operator_norm_inverse(&self) -> f64 {
        self.inverse_norm
    }

    /// Columns in real orthonormal coordinates (cos, sin per mode).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// A field from real coordinates over the forcing band.
    pub fn field_from_real(&self, x: &[f64]) -> Result<SpectralField> {
        if x.len() != 2 * self.band {
            return Err(KseError::DimensionMismatch {
                expected: 2 * self.band,
                got: x.len(),
            });
        }
        Ok(field_from_coords(self.spec, &DVector::from_column_slice(x)))
    }
}

/// Reproducible Gaussian stream for one trajectory.
///
/// Step `n` of stream `(seed, stream_id)` always reads from the same block
/// of the ChaCha8 keystream, so draws never depend on scheduling.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            counter: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of steps consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Repositions the stream at step `counter`.
    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// Fills `out` with standard normals for the current step and advances.
    pub fn standard_normals(&mut self, out: &mut [f64]) {
        self.rng.set_word_pos(self.counter as u128 * WORDS_PER_STEP);
        for o in out.iter_mut() {
            *o = StandardNormal.sample(&mut self.rng);
        }
        self.counter += 1;
    }

    /// `M` independent `N(0, dt)` increments; `dt = 0` gives zeros.
    pub fn sample_increment(&mut self, m: usize, dt: f64) -> Vec<f64> {
        let mut z = vec![0.0; m];
        self.standard_normals(&mut z);
        let s = dt.max(0.0).sqrt();
        z.iter_mut().for_each(|v| *v *= s);
        z
    }
}
