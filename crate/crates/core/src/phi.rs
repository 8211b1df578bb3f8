//! The odd periodic profile `φ` whose shifted copies manufacture dissipation.
//!
//! On a torus of period `P` (twice the physical period when used by the
//! solver) the profile is fixed through its derivative,
//!
//! ```text
//! Dφ = -(2/√P) Σ_{n≥1} ψ_n cos(n q x),   ψ_n = √P (1/g + 1) f(n / 2M),
//! ```
//!
//! so `φ` is a pure sine series with Fourier coefficients `i ψ_n / (n q)`.
//! Inside the band `n <= 2M` the weights are constant and `Dφ` acts like a
//! negative point mass at the origin plus a constant, which is what turns
//! `½⟨u², Dφ⟩` into a coercive term. The profile is never materialized as one
//! dense field: every pairing needed below only touches the low modes of the
//! other factor, and the norms are closed-form sums over `n <= 4M`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{KseError, Result};
use crate::noise::ForcingOperator;
use crate::spectral::{SpectralField, TorusSpec};

/// `sqrt(ζ(2) ζ(4))` evaluated from the closed forms `π²/6` and `π⁴/90`.
pub fn zeta_product_sqrt() -> f64 {
    (PI.powi(2) / 6.0 * PI.powi(4) / 90.0).sqrt()
}

/// A cut-off equal to 1 on `|x| <= 1`, 0 on `|x| >= 2`, monotone between.
#[derive(Clone, Copy, Debug)]
pub struct CutoffFunction {
    eval: fn(f64) -> f64,
    derivative_bound: f64,
}

fn smoothstep_eval(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let s = a - 1.0;
        1.0 - 3.0 * s * s + 2.0 * s * s * s
    }
}

impl CutoffFunction {
    /// `f = 1 - 3s² + 2s³` with `s = |x| - 1` on the transition band.
    pub fn smoothstep() -> Self {
        Self {
            eval: smoothstep_eval,
            derivative_bound: 1.5,
        }
    }

    pub fn new(eval: fn(f64) -> f64, derivative_bound: f64) -> Self {
        Self {
            eval,
            derivative_bound,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn derivative_bound(&self) -> f64 {
        self.derivative_bound
    }
}

impl Default for CutoffFunction {
    fn default() -> Self {
        Self::smoothstep()
    }
}

/// Predicate (i): `g (nq)⁴ > 2 (nq)² + 1`.
pub fn high_mode_condition(g: f64, q: f64, n: u64) -> bool {
    let x = n as f64 * q;
    g * x.powi(4) > 2.0 * x * x + 1.0
}

/// Threshold that `M` must strictly exceed in predicate (ii).
pub fn cutoff_threshold(g: f64, q: f64, f: &CutoffFunction) -> f64 {
    8.0 / (q.powi(4) * g) * f.derivative_bound() * (1.0 / g + 1.0) * zeta_product_sqrt()
}

/// Smallest positive `M` satisfying both cut-off conditions.
pub fn choose_m(g: f64, q: f64, f: &CutoffFunction) -> Result<u64> {
    if !(g > 0.0 && q > 0.0 && g.is_finite() && q.is_finite()) {
        return Err(KseError::InvalidParameter(format!(
            "choose_m needs positive g and q, got g={g}, q={q}"
        )));
    }
    // g x⁴ - 2x² - 1 has a single positive root in x², and is increasing past it.
    let root = ((1.0 + (1.0 + g).sqrt()) / g).sqrt() / q;
    let mut m_i = (root.floor() as u64).saturating_sub(1);
    while !high_mode_condition(g, q, m_i + 1) {
        m_i += 1;
    }
    while m_i > 0 && high_mode_condition(g, q, m_i) {
        m_i -= 1;
    }
    let threshold = cutoff_threshold(g, q, f);
    if !threshold.is_finite() || threshold > 1e15 {
        return Err(KseError::InvalidParameter(format!(
            "cut-off index threshold {threshold:.3e} is out of reach"
        )));
    }
    let m_ii = threshold.floor() as u64 + 1;
    Ok(m_i.max(m_ii).max(1))
}

/// The profile on period `P`, with diffusion parameter `g` and cut-off index `M`.
#[derive(Clone, Debug)]
pub struct PhiProfile {
    period: f64,
    g: f64,
    m: u64,
    cutoff: CutoffFunction,
    norm_sq: f64,
    d1_norm_sq: f64,
    d2_norm_sq: f64,
}

impl PhiProfile {
    /// Builds the profile with the smallest admissible `M`.
    pub fn build(period: f64, g: f64, cutoff: CutoffFunction) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(KseError::InvalidParameter(format!(
                "profile period must be positive, got {period}"
            )));
        }
        let q = 2.0 * PI / period;
        let m = choose_m(g, q, &cutoff)?;
        Ok(Self::with_cutoff_index(period, g, m, cutoff))
    }

    /// Builds the profile with the given `M`, skipping the admissibility search.
    pub fn with_cutoff_index(period: f64, g: f64, m: u64, cutoff: CutoffFunction) -> Self {
        let mut p = Self {
            period,
            g,
            m,
            cutoff,
            norm_sq: 0.0,
            d1_norm_sq: 0.0,
            d2_norm_sq: 0.0,
        };
        let q = p.wavenumber();
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for n in (1..=p.support()).rev() {
            let psi = p.psi_abs(n);
            let x = n as f64 * q;
            s0 += psi * psi / (x * x);
            s1 += psi * psi;
            s2 += psi * psi * x * x;
        }
        p.norm_sq = 2.0 * s0;
        p.d1_norm_sq = 2.0 * s1;
        p.d2_norm_sq = 2.0 * s2;
        p
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn cutoff_index(&self) -> u64 {
        self.m
    }

    pub fn cutoff(&self) -> &CutoffFunction {
        &self.cutoff
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Highest mode with a nonzero weight, `4M`.
    pub fn support(&self) -> u64 {
        4 * self.m
    }

    /// Plateau value `√P (1/g + 1)` of the weights.
    pub fn plateau(&self) -> f64 {
        self.period.sqrt() * (1.0 / self.g + 1.0)
    }

    /// `ψ_n`, symmetric in `n`, zero at `n = 0` and above `4M`.
    pub fn psi(&self, n: i64) -> f64 {
        self.psi_abs(n.unsigned_abs())
    }

    fn psi_abs(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.plateau() * self.cutoff.eval(n as f64 / (2 * self.m) as f64)
    }

    /// Fourier coefficient of `φ` at mode `n >= 1`.
    pub fn coeff(&self, n: u64) -> Complex64 {
        let psi = self.psi_abs(n);
        Complex64::new(0.0, psi / (n as f64 * self.wavenumber()))
    }

    /// `‖φ‖²`, equal for every translate.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// `‖Dφ‖²`.
    pub fn d1_norm_sq(&self) -> f64 {
        self.d1_norm_sq
    }

    /// `‖D²φ‖²`.
    pub fn d2_norm_sq(&self) -> f64 {
        self.d2_norm_sq
    }

    /// `φ` truncated to `band` modes as a field on a grid that resolves it.
    pub fn field(&self, band: usize) -> Result<SpectralField> {
        let grid = (2 * band + 2).max(8);
        let spec = TorusSpec::new(self.period, grid + grid % 2)?;
        let coeffs: Vec<Complex64> = (1..=band as u64).map(|n| self.coeff(n)).collect();
        SpectralField::from_coeffs(spec, &coeffs)
    }

    /// The full profile, band-limited to `4M` modes.
    pub fn phi_field(&self) -> Result<SpectralField> {
        self.field(self.support() as usize)
    }

    /// `φ(· + b)` truncated to `band` modes.
    pub fn shifted_field(&self, b: f64, band: usize) -> Result<SpectralField> {
        Ok(self.field(band)?.translate(b))
    }

    fn check_half_period(&self, u: &SpectralField) -> Result<()> {
        if (2.0 * u.spec().period() - self.period).abs() > 1e-12 * self.period {
            return Err(KseError::PeriodMismatch {
                left: self.period,
                right: 2.0 * u.spec().period(),
            });
        }
        Ok(())
    }

    fn check_same_period(&self, u: &SpectralField) -> Result<()> {
        if (u.spec().period() - self.period).abs() > 1e-12 * self.period {
            return Err(KseError::PeriodMismatch {
                left: self.period,
                right: u.spec().period(),
            });
        }
        Ok(())
    }

    /// `⟨w, Dφ_b⟩` for `w` given by coefficients `w_n` at modes `stride * (i+1)`.
    fn pair_dphi(&self, w: &[Complex64], stride: u64, b: f64) -> f64 {
        let q = self.wavenumber();
        let rot = Complex64::from_polar(1.0, -(stride as f64) * q * b);
        let mut phase = rot;
        let mut acc = 0.0;
        for (i, c) in w.iter().enumerate() {
            let n = stride * (i as u64 + 1);
            acc += self.psi_abs(n) * (c * phase).re;
            phase *= rot;
            if i % 64 == 63 {
                phase = Complex64::from_polar(1.0, -((n + stride) as f64) * q * b);
            }
        }
        -2.0 * acc
    }

    /// `⟨w, φ_b⟩` with the same layout as [`Self::pair_dphi`].
    fn pair_phi(&self, w: &[Complex64], stride: u64, b: f64) -> f64 {
        let q = self.wavenumber();
        let rot = Complex64::from_polar(1.0, -(stride as f64) * q * b);
        let mut phase = rot;
        let mut acc = 0.0;
        for (i, c) in w.iter().enumerate() {
            let n = stride * (i as u64 + 1);
            let weight = self.psi_abs(n) / (n as f64 * q);
            acc += weight * (c * phase).im;
            phase *= rot;
            if i % 64 == 63 {
                phase = Complex64::from_polar(1.0, -((n + stride) as f64) * q * b);
            }
        }
        2.0 * acc
    }

    /// `⟨u, Dφ_b⟩` for `u` on the profile's own period.
    pub fn inner_dphi(&self, u: &SpectralField, b: f64) -> Result<f64> {
        self.check_same_period(u)?;
        Ok(self.pair_dphi(u.coeffs(), 1, b))
    }

    /// `⟨u, φ_b⟩` for `u` on the profile's own period.
    pub fn inner_phi(&self, u: &SpectralField, b: f64) -> Result<f64> {
        self.check_same_period(u)?;
        Ok(self.pair_phi(u.coeffs(), 1, b))
    }

    /// `⟨lift(u), Dφ_b⟩` for `u` on half the profile's period.
    pub fn inner_dphi_lifted(&self, u: &SpectralField, b: f64) -> Result<f64> {
        self.check_half_period(u)?;
        Ok(std::f64::consts::SQRT_2 * self.pair_dphi(u.coeffs(), 2, b))
    }

    /// `⟨lift(u), φ_b⟩` for `u` on half the profile's period.
    pub fn inner_phi_lifted(&self, u: &SpectralField, b: f64) -> Result<f64> {
        self.check_half_period(u)?;
        Ok(std::f64::consts::SQRT_2 * self.pair_phi(u.coeffs(), 2, b))
    }

    pub(crate) fn inner_dphi_lifted_raw(&self, u: &[Complex64], b: f64) -> f64 {
        std::f64::consts::SQRT_2 * self.pair_dphi(u, 2, b)
    }

    pub(crate) fn inner_phi_lifted_raw(&self, u: &[Complex64], b: f64) -> f64 {
        std::f64::consts::SQRT_2 * self.pair_phi(u, 2, b)
    }

    /// `‖lift(u) - φ_b‖²` on the profile's period.
    pub fn deviation_sq_lifted(&self, u: &SpectralField, b: f64) -> Result<f64> {
        let cross = self.inner_phi_lifted(u, b)?;
        Ok((2.0 * u.sobolev_norm_sq(0) - 2.0 * cross + self.norm_sq).max(0.0))
    }

    /// Left-hand side minus right-hand side of the odd-field coercivity inequality
    ///
    /// `g‖D²u‖² - ‖Du‖² + ½⟨u², Dφ⟩ >= ¼g‖D²u‖² + ½‖u‖²`.
    pub fn antisym_coercivity_margin(&self, u: &SpectralField, g: f64) -> Result<f64> {
        self.check_same_period(u)?;
        let scale = u.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.norm()));
        let max_cos = u.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.re.abs()));
        if max_cos > 1e-12 * (1.0 + scale) {
            return Err(KseError::NotOdd { max_cos });
        }
        let a0 = u.sobolev_norm_sq(0);
        let a1 = u.sobolev_norm_sq(1);
        let a2 = u.sobolev_norm_sq(2);
        let sq = u.square_coeffs_exact();
        let x = self.pair_dphi(&sq, 1, 0.0);
        Ok(g * a2 - a1 + 0.5 * x - (0.25 * g * a2 + 0.5 * a0))
    }

    /// Left-hand side minus right-hand side of the shifted coercivity inequality
    ///
    /// `½γ‖D²u‖² - ‖Du‖² + ½⟨u², Dφ_b⟩ >= ⅛γ‖D²u‖² + ½‖u‖² - (1/4L)⟨u, Dφ_b⟩²`
    ///
    /// with `γ = 2g`, `u` of period `L` lifted to the profile's period `2L`.
    pub fn general_coercivity_margin(&self, u: &SpectralField, b: f64, g: f64) -> Result<f64> {
        self.check_half_period(u)?;
        let gamma = 2.0 * g;
        let half = u.spec().period();
        let a0 = 2.0 * u.sobolev_norm_sq(0);
        let a1 = 2.0 * u.sobolev_norm_sq(1);
        let a2 = 2.0 * u.sobolev_norm_sq(2);
        let sq = u.square_coeffs_exact();
        let x = std::f64::consts::SQRT_2 * self.pair_dphi(&sq, 2, b);
        let y = self.inner_dphi_lifted(u, b)?;
        let lhs = 0.5 * gamma * a2 - a1 + 0.5 * x;
        let rhs = 0.125 * gamma * a2 + 0.5 * a0 - y * y / (4.0 * half);
        Ok(lhs - rhs)
    }
}

/// The additive constants `(C₀, C₁)` of the pathwise energy bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConstants {
    pub c0: f64,
    pub c1: f64,
}

/// `C₀ = (1 + 2/γ)‖φ‖² + 2γ‖D²φ‖² + ‖σ‖²_HS` and `C₁ = 3‖φ‖²`, from the norms.
pub fn energy_constants_from_norms(
    phi_norm_sq: f64,
    phi_d2_norm_sq: f64,
    sigma_hs_sq: f64,
    gamma: f64,
) -> EnergyConstants {
    EnergyConstants {
        c0: (1.0 + 2.0 / gamma) * phi_norm_sq + 2.0 * gamma * phi_d2_norm_sq + sigma_hs_sq,
        c1: 3.0 * phi_norm_sq,
    }
}

/// `(C₀, C₁)` for a profile on `2L` and forcing on `L`.
pub fn energy_constants(
    phi: &PhiProfile,
    forcing: &ForcingOperator,
    gamma: f64,
) -> Result<EnergyConstants> {
    if (phi.period() - 2.0 * forcing.spec().period()).abs() > 1e-12 * phi.period() {
        return Err(KseError::PeriodMismatch {
            left: phi.period(),
            right: 2.0 * forcing.spec().period(),
        });
    }
    Ok(energy_constants_from_norms(
        phi.norm_sq(),
        phi.d2_norm_sq(),
        forcing.hs_norm_sq_doubled(),
        gamma,
    ))
}

/// The profile used by the solver: period `2L`, parameter `g = γ/2`.
pub fn solver_profile(period: f64, gamma: f64) -> Result<PhiProfile> {
    PhiProfile::build(2.0 * period, 0.5 * gamma, CutoffFunction::smoothstep())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_shape() {
        let f = CutoffFunction::smoothstep();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(2.0), 0.0);
        assert_eq!(f.eval(3.0), 0.0);
        assert!((f.eval(1.5) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        let mut max_slope = 0.0_f64;
        for i in 1..=1000 {
            let x = 1.0 + i as f64 / 1000.0;
            let v = f.eval(x);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            max_slope = max_slope.max((prev - v) * 1000.0);
            prev = v;
        }
        assert!(max_slope <= f.derivative_bound() + 1e-9);
        assert!(max_slope > 1.49);
    }

    #[test]
    fn first_condition_scan() {
        // (i) alone with g = q = 1: n = 1 fails, n >= 2 holds.
        assert!(!high_mode_condition(1.0, 1.0, 1));
        assert!(high_mode_condition(1.0, 1.0, 2));
        let f = CutoffFunction::new(smoothstep_eval, 0.0);
        assert_eq!(choose_m(1.0, 1.0, &f).unwrap(), 1);
    }

    #[test]
    fn choose_m_postconditions() {
        let f = CutoffFunction::smoothstep();
        for &(g, q) in &[(0.5, 2.0 * PI / 32.0), (5.0, 0.5), (0.1, 1.0), (1.0, 1.0)] {
            let m = choose_m(g, q, &f).unwrap();
            for n in m + 1..m + 2000 {
                assert!(high_mode_condition(g, q, n));
            }
            assert!(m as f64 > cutoff_threshold(g, q, &f));
            let smaller_ok = (m - 1) as f64 > cutoff_threshold(g, q, &f)
                && (m..m + 2000).all(|n| high_mode_condition(g, q, n));
            assert!(m == 1 || !smaller_ok);
        }
    }

    #[test]
    fn choose_m_nonincreasing_in_g() {
        let f = CutoffFunction::smoothstep();
        let q = 2.0 * PI / 32.0;
        let mut prev = u64::MAX;
        for i in 0..40 {
            let g = 10f64.powf(-1.0 + i as f64 * 0.075);
            let m = choose_m(g, q, &f).unwrap();
            assert!(m <= prev);
            prev = m;
        }
    }

    fn small_profile() -> PhiProfile {
        PhiProfile::build(4.0 * PI, 5.0, CutoffFunction::smoothstep()).unwrap()
    }

    #[test]
    fn psi_support_and_plateau() {
        let p = small_profile();
        let m = p.cutoff_index() as i64;
        assert_eq!(p.psi(0), 0.0);
        for n in 1..=2 * m {
            assert_eq!(p.psi(n), p.plateau());
            assert_eq!(p.psi(-n), p.psi(n));
        }
        for n in 4 * m..4 * m + 10 {
            assert_eq!(p.psi(n), 0.0);
        }
    }

    #[test]
    fn profile_is_odd() {
        let p = small_profile();
        let field = p.phi_field().unwrap();
        let n = field.spec().grid_size();
        let vals = field.evaluate_on_grid(n).unwrap();
        // grid point j sits at -P/2 + jP/n, so -x_j is grid point n - j
        for j in 1..n {
            assert!((vals[j] + vals[n - j]).abs() < 1e-10);
        }
    }

    #[test]
    fn norms_match_field() {
        let p = small_profile();
        let field = p.phi_field().unwrap();
        assert!((field.sobolev_norm_sq(0) - p.norm_sq()).abs() < 1e-12 * p.norm_sq());
        assert!((field.sobolev_norm_sq(2) - p.d2_norm_sq()).abs() < 1e-12 * p.d2_norm_sq());
        for &b in &[0.0, 0.3, -2.1, 17.0] {
            let s = p.shifted_field(b, p.support() as usize).unwrap();
            assert!((s.sobolev_norm_sq(0) - p.norm_sq()).abs() < 1e-12 * p.norm_sq());
        }
    }

    #[test]
    fn shift_by_period_is_identity() {
        let p = small_profile();
        let f0 = p.field(40).unwrap();
        let f1 = p.shifted_field(p.period(), 40).unwrap();
        for (a, b) in f0.coeffs().iter().zip(f1.coeffs()) {
            assert!((a - b).norm() < 1e-10);
        }
        assert_eq!(p.shifted_field(0.0, 40).unwrap(), f0);
    }

    #[test]
    fn pairings_match_dense_fields() {
        let p = small_profile();
        let spec = TorusSpec::new(p.period(), 2 * p.support() as usize + 2).unwrap();
        let u = SpectralField::from_trig(spec, &[(1, 0.4, -0.3), (7, 1.0, 0.2), (130, 0.5, 0.5)])
            .unwrap();
        let b = 0.77;
        let phi_b = p.shifted_field(b, spec.max_modes()).unwrap();
        let phi_b = SpectralField::from_coeffs(spec, phi_b.coeffs()).unwrap();
        let dphi_b = phi_b.derivative(1);
        assert!((p.inner_phi(&u, b).unwrap() - u.inner_product(&phi_b, 0).unwrap()).abs() < 1e-10);
        assert!(
            (p.inner_dphi(&u, b).unwrap() - u.inner_product(&dphi_b, 0).unwrap()).abs() < 1e-10
        );
    }

    #[test]
    fn lifted_pairings_match_explicit_lift() {
        let p = small_profile();
        let half = TorusSpec::new(p.period() / 2.0, 64).unwrap();
        let u = SpectralField::from_trig(half, &[(1, 0.4, -0.3), (9, 1.0, 0.2)]).unwrap();
        let lifted = u.lift_to_double_period();
        let b = -0.4;
        let lifted = SpectralField::from_coeffs(
            TorusSpec::new(p.period(), 2 * p.support() as usize + 2).unwrap(),
            lifted.coeffs(),
        )
        .unwrap();
        assert!(
            (p.inner_dphi_lifted(&u, b).unwrap() - p.inner_dphi(&lifted, b).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (p.inner_phi_lifted(&u, b).unwrap() - p.inner_phi(&lifted, b).unwrap()).abs() < 1e-12
        );
        assert!(matches!(
            p.inner_dphi(&u, b),
            Err(KseError::PeriodMismatch { .. })
        ));
    }

    #[test]
    fn plateau_pairing_is_point_evaluation() {
        // In the flat band, <lift(u), Dφ_b> = -P (1/g + 1) u(-b).
        let p = small_profile();
        let half = TorusSpec::new(p.period() / 2.0, 32).unwrap();
        let u = SpectralField::from_trig(half, &[(1, 0.4, -0.3), (5, 1.0, 0.2)]).unwrap();
        let b = 0.9;
        let expect = -p.period() * (1.0 / p.g() + 1.0) * u.value_at(-b);
        assert!((p.inner_dphi_lifted(&u, b).unwrap() - expect).abs() < 1e-10 * expect.abs());
    }

    #[test]
    fn zero_field_margins() {
        let p = small_profile();
        let spec = TorusSpec::new(p.period(), 32).unwrap();
        let half = TorusSpec::new(p.period() / 2.0, 32).unwrap();
        assert_eq!(p.antisym_coercivity_margin(&SpectralField::zeros(spec), 5.0).unwrap(), 0.0);
        assert_eq!(
            p.general_coercivity_margin(&SpectralField::zeros(half), 0.3, 5.0).unwrap(),
            0.0
        );
        let even = SpectralField::from_trig(spec, &[(1, 0.0, 1.0)]).unwrap();
        assert!(matches!(
            p.antisym_coercivity_margin(&even, 5.0),
            Err(KseError::NotOdd { .. })
        ));
    }

    #[test]
    fn high_single_mode_margin() {
        // Above 4M the profile does not see u² at all, so the margin is
        // (3/4 g x⁴ - x² - 1/2) ‖u‖² with x = nq.
        let p = small_profile();
        let n = 2 * p.support() as usize + 1;
        let spec = TorusSpec::new(p.period(), 4 * n + 8).unwrap();
        let u = SpectralField::from_trig(spec, &[(n, 1.0, 0.0)]).unwrap();
        let x = n as f64 * p.wavenumber();
        let g = p.g();
        let expect = (0.75 * g * x.powi(4) - x * x - 0.5) * u.sobolev_norm_sq(0);
        let got = p.antisym_coercivity_margin(&u, g).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect);
        assert!(got > 0.0);
    }

    #[test]
    fn general_margin_reduces_to_odd_margin() {
        let p = small_profile();
        let half = TorusSpec::new(p.period() / 2.0, 64).unwrap();
        let u = SpectralField::from_trig(half, &[(1, 0.4, 0.0), (3, -1.0, 0.0), (11, 0.2, 0.0)])
            .unwrap();
        let general = p.general_coercivity_margin(&u, 0.0, p.g()).unwrap();
        let lifted = u.lift_to_double_period();
        let odd = p.antisym_coercivity_margin(&lifted, p.g()).unwrap();
        assert!((general - odd).abs() < 1e-10 * (1.0 + odd.abs()));
    }

    #[test]
    fn split_identity() {
        // ‖u - u(0)‖² over one period equals ‖u‖² + P u(0)², by quadrature.
        let spec = TorusSpec::new(5.0, 64).unwrap();
        let u = SpectralField::from_trig(spec, &[(1, 0.4, 0.7), (3, -1.0, 0.1), (9, 0.2, -0.5)])
            .unwrap();
        let u0 = u.value_at(0.0);
        let vals = u.evaluate_on_grid(256).unwrap();
        let quad: f64 = vals.iter().map(|v| (v - u0).powi(2)).sum::<f64>() * 5.0 / 256.0;
        let expect = u.sobolev_norm_sq(0) + 5.0 * u0 * u0;
        assert!((quad - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn constants_from_norms() {
        let c = energy_constants_from_norms(0.0, 0.0, 4.0, 1.0);
        assert_eq!(c, EnergyConstants { c0: 4.0, c1: 0.0 });
        let c = energy_constants_from_norms(2.0, 3.0, 0.0, 2.0);
        assert_eq!(c.c0, 2.0 * 2.0 + 12.0);
        assert_eq!(c.c1, 6.0);
    }
}
