//! Checks of the energy, moment and coupling bounds on simulated data, and the
//! closed-form rate constants they feed into.
//!
//! Exponential statistics are kept in log space throughout: the additive
//! constants are large enough that `e^{β C₀}` overflows at default settings.

use crate::error::{KseError, Result};
use crate::integrator::{CoupledState, KseSolver, TrajectoryState};
use crate::noise::NoiseStream;
use crate::metrics::theta;
use crate::spectral::SpectralField;

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sample mean of `e^{x_i}` with its standard error, all as logarithms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMoment {
    /// `ln mean`.
    pub log_mean: f64,
    /// `ln stderr` (`-inf` for a degenerate sample).
    pub log_stderr: f64,
    /// `ln(mean + 2 stderr)`, the conservative side used in bound checks.
    pub log_upper: f64,
}

impl LogMoment {
    pub fn from_exponents(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(KseError::InsufficientData("empty ensemble".into()));
        }
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            scaled.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let se = (var / n as f64).sqrt();
        Ok(Self {
            log_mean: m + mean.ln(),
            log_stderr: if se > 0.0 { m + se.ln() } else { f64::NEG_INFINITY },
            log_upper: m + (mean + 2.0 * se).ln(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.log_mean.exp()
    }
}

/// One row of the pathwise energy check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovReport {
    pub rows: Vec<LyapunovRow>,
    /// Indices of rows with `margin < -tol (1 + ‖u₀‖² + t)`.
    pub violations: Vec<usize>,
    pub tol: f64,
}

impl LyapunovReport {
    pub fn min_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }
}

/// The pathwise bound
///
/// `‖u(t)‖² + ½γ∫‖D²u‖² + ½∫‖u - φ_b‖² <= 4‖u₀‖² + 2∫⟨u - φ_b, σ dW⟩ + C₀ t + C₁`
///
/// evaluated at every snapshot of `series`; the first snapshot supplies `u₀`.
pub fn lyapunov_pathwise_check(
    series: &[TrajectoryState],
    gamma: f64,
    c0: f64,
    c1: f64,
    tol: f64,
) -> LyapunovReport {
    let Some(first) = series.first() else {
        return LyapunovReport {
            rows: vec![],
            violations: vec![],
            tol,
        };
    };
    let u0_sq = first.u.sobolev_norm_sq(0);
    let mut rows = Vec::with_capacity(series.len());
    let mut violations = vec![];
    for (i, s) in series.iter().enumerate() {
        let lhs = s.u.sobolev_norm_sq(0) + 0.5 * gamma * s.acc_d2 + 0.5 * s.acc_dev;
        let rhs = 4.0 * u0_sq + s.acc_mart + c0 * s.t + c1;
        let margin = rhs - lhs;
        if margin < -tol * (1.0 + u0_sq + s.t) {
            violations.push(i);
        }
        rows.push(LyapunovRow {
            t: s.t,
            lhs,
            rhs,
            margin,
        });
    }
    LyapunovReport {
        rows,
        violations,
        tol,
    }
}

/// Energy balance `½‖u(T)‖² - ½‖u₀‖² - ∫₀ᵀ (‖Du‖² - γ‖D²u‖²) dt` of a noise-free run.
///
/// The time integral uses the trapezoid rule on the solver steps, so the
/// residual measures the combined error of the scheme and the quadrature.
pub fn energy_balance_residual(solver: &mut KseSolver<'_>, u0: &SpectralField) -> Result<f64> {
    let cfg = *solver.config();
    if cfg.stochastic {
        return Err(KseError::InvalidParameter(
            "the energy balance holds only for noise-free runs".into(),
        ));
    }
    let rate = |u: &SpectralField| u.sobolev_norm_sq(1) - cfg.gamma * u.sobolev_norm_sq(2);
    let mut state = solver.initial_state(u0, NoiseStream::new(0, 0))?;
    let mut integral = 0.0;
    let mut prev = rate(&state.u);
    for _ in 0..cfg.n_steps() {
        solver.step(&mut state)?;
        let next = rate(&state.u);
        integral += 0.5 * cfg.dt * (prev + next);
        prev = next;
    }
    Ok(0.5 * state.u.sobolev_norm_sq(0) - 0.5 * u0.sobolev_norm_sq(0) - integral)
}

/// `E e^{β‖u‖²}` over ensemble members.
pub fn exp_moment_estimate(members: &[SpectralField], beta: f64) -> Result<LogMoment> {
    let x: Vec<f64> = members.iter().map(|u| beta * u.sobolev_norm_sq(0)).collect();
    LogMoment::from_exponents(&x)
}

/// `ln` of `2 exp{4βC₀ + βC₁ + 4β e^{-t/4} ‖u₀‖²}`.
pub fn log_moment_bound(beta: f64, c0: f64, c1: f64, u0_norm_sq: f64, t: f64) -> f64 {
    2f64.ln() + 4.0 * beta * c0 + beta * c1 + 4.0 * beta * (-0.25 * t).exp() * u0_norm_sq
}

/// `E exp{½βγ ∫‖D²u‖²}` from the accumulated integrals of the members.
pub fn integrated_d2_exp_moment(acc_d2: &[f64], beta: f64, gamma: f64) -> Result<LogMoment> {
    let x: Vec<f64> = acc_d2.iter().map(|a| 0.5 * beta * gamma * a).collect();
    LogMoment::from_exponents(&x)
}

/// `ln` of `2 exp{4β‖u₀‖² + βC₀ t + βC₁}`.
pub fn log_integrated_d2_bound(beta: f64, c0: f64, c1: f64, u0_norm_sq: f64, t: f64) -> f64 {
    2f64.ln() + 4.0 * beta * u0_norm_sq + beta * c0 * t + beta * c1
}

/// Fit of `E V(u(t)) <= C e^{-ct} V(u₀) + C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub c_fit: f64,
    pub c_const: f64,
    /// Amplitude and offset of the least-squares model `A e^{-ct} + B`.
    pub amplitude: f64,
    pub offset: f64,
}

fn fit_at_rate(t: &[f64], y: &[f64], c: f64) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let e: Vec<f64> = t.iter().map(|t| (-c * t).exp()).collect();
    let em = e.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let see: f64 = e.iter().map(|v| (v - em).powi(2)).sum();
    let sey: f64 = e.iter().zip(y).map(|(a, b)| (a - em) * (b - ym)).sum();
    let (a, b) = if see <= 1e-300 { (0.0, ym) } else { (sey / see, ym - sey / see * em) };
    let sse = e.iter().zip(y).map(|(ei, yi)| (yi - a * ei - b).powi(2)).sum();
    (a, b, sse)
}

/// Least-squares rate `c` of `A e^{-ct} + B`, then the smallest `C` valid on the data.
///
/// The constant is `max(B, max_i (y_i - B)⁺ / (e^{-c t_i} V₀))`, which makes
/// `y_i <= C e^{-c t_i} V₀ + C` hold at every sample.
pub fn lyapunov_decay_fit(times: &[f64], values: &[f64], v0: f64) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(KseError::SizeMismatch {
            left: times.len(),
            right: values.len(),
        });
    }
    if times.len() < 8 {
        return Err(KseError::InsufficientData(format!(
            "decay fit needs at least 8 points, got {}",
            times.len()
        )));
    }
    let t0 = times[0];
    let t: Vec<f64> = times.iter().map(|s| s - t0).collect();
    let span = t.iter().copied().fold(0.0_f64, f64::max);
    if span <= 0.0 {
        return Err(KseError::InsufficientData("all fit times coincide".into()));
    }
    let (_, _, sse0) = fit_at_rate(&t, values, 0.0);
    let mut best = (0.0, sse0);
    let grid = 400;
    let (lo, hi) = ((1e-4 / span).ln(), (200.0 / span).ln());
    for i in 0..=grid {
        let c = (lo + (hi - lo) * i as f64 / grid as f64).exp();
        let (a, _, sse) = fit_at_rate(&t, values, c);
        if a > 0.0 && sse < best.1 {
            best = (c, sse);
        }
    }
    let mut c = best.0;
    if c > 0.0 {
        // golden-section refinement on the bracketing grid cells
        let step = ((hi - lo) / grid as f64).exp();
        let (mut a, mut b) = (c / step, c * step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let sse = |c: f64| fit_at_rate(&t, values, c).2;
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (sse(x1), sse(x2));
        for _ in 0..100 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = sse(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = sse(x2);
            }
        }
        let cand = 0.5 * (a + b);
        if sse(cand) <= best.1 {
            c = cand;
        }
    }
    let (amplitude, offset, _) = fit_at_rate(&t, values, c);
    let (amplitude, offset) = if c == 0.0 {
        (0.0, values.iter().sum::<f64>() / values.len() as f64)
    } else {
        (amplitude, offset)
    };
    let mut c_const = offset;
    for (ti, yi) in t.iter().zip(values) {
        let excess = (yi - offset).max(0.0);
        if excess > 0.0 {
            c_const = c_const.max(excess / ((-c * ti).exp() * v0));
        }
    }
    Ok(DecayFit {
        c_fit: c,
        c_const,
        amplitude,
        offset,
    })
}

/// Upper bounds on the total-variation distance from the coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvBounds {
    /// `½ ‖σ^{-1}‖ λ sqrt(E∫‖u - v‖²)`.
    pub bound_sqrt: f64,
    /// `1 - ½ exp{-½ ‖σ^{-1}‖² λ² E∫‖u - v‖²}`.
    pub bound_exp: f64,
    /// `ln(1 - bound_exp)`, kept exactly even when `bound_exp` rounds to 1.
    pub log_exp_gap: f64,
}

pub fn pinsker_tv_bounds(mean_integral: f64, sigma_inv_norm: f64, lambda: f64) -> TvBounds {
    let s = sigma_inv_norm * lambda;
    let log_exp_gap = 0.5f64.ln() - 0.5 * s * s * mean_integral;
    TvBounds {
        bound_sqrt: 0.5 * s * mean_integral.max(0.0).sqrt(),
        bound_exp: 1.0 - log_exp_gap.exp(),
        log_exp_gap,
    }
}

/// One row of the pathwise coupling check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingRow {
    pub t: f64,
    pub diff_norm: f64,
    /// `ln` of `(1 + 10 dt) ‖u₀ - v₀‖² exp{-C₂ t + √L ∫‖D²u‖}`.
    pub log_bound_sq: f64,
    pub holds: bool,
}

impl CouplingRow {
    /// The bound on `‖u - v‖` itself; may be infinite.
    pub fn bound_rhs(&self) -> f64 {
        (0.5 * self.log_bound_sq).exp()
    }
}

/// `‖u - v‖² <= (1 + 10 dt) ‖u₀ - v₀‖² exp{-C₂ t + √L ∫₀ᵗ ‖D²u‖ ds}` per snapshot.
pub fn coupling_bound_check(series: &[CoupledState], c2: f64, period: f64, dt: f64) -> Vec<CouplingRow> {
    let Some(first) = series.first() else {
        return vec![];
    };
    let d0_sq = first.diff_norm().powi(2);
    let slack = (1.0 + 10.0 * dt).ln();
    series
        .iter()
        .map(|s| {
            let d = s.diff_norm();
            let log_bound_sq = slack + d0_sq.ln() - c2 * s.u_traj.t + period.sqrt() * s.u_traj.acc_d2_root;
            let holds = d == 0.0 || 2.0 * d.ln() <= log_bound_sq;
            CouplingRow {
                t: s.u_traj.t,
                diff_norm: d,
                log_bound_sq,
                holds,
            }
        })
        .collect()
}

/// Inputs to the rate constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateInputs {
    pub beta: f64,
    pub gamma: f64,
    pub period: f64,
    pub c2: f64,
    pub k: f64,
    pub c0: f64,
    pub c1: f64,
    pub radius: f64,
    pub sigma_inv_norm: f64,
    pub lambda: f64,
    pub n_c: usize,
    pub dt: f64,
    /// `‖σ‖²_HS` on the doubled period, for the smallness condition on β.
    pub sigma_hs_sq_doubled: f64,
}

/// `C₂ - 4L/(βγ) - βC₀/8`.
pub fn rate_bracket(p: &RateInputs) -> f64 {
    p.c2 - 4.0 * p.period / (p.beta * p.gamma) - p.beta * p.c0 / 8.0
}

/// Smallest multiple of `dt` with `8 e^{-T/4} <= ½`.
pub fn t_threshold(dt: f64) -> f64 {
    let holds = |k: u64| 8.0 * (-0.25 * k as f64 * dt).exp() <= 0.5;
    let mut k = (4.0 * 16f64.ln() / dt).ceil() as u64;
    while !holds(k) {
        k += 1;
    }
    while k > 0 && holds(k - 1) {
        k -= 1;
    }
    k as f64 * dt
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateConstants {
    pub c2: f64,
    pub lambda: f64,
    pub n_c: usize,
    pub beta: f64,
    pub k: f64,
    pub c0: f64,
    pub c1: f64,
    /// `ln` of `2 exp{4βC₀ + (17/16)βC₁}`.
    pub log_r1_prefactor: f64,
    /// `½ (C₂ - 4L/(βγ) - βC₀/8)`.
    pub r1_rate: f64,
    pub t_threshold: f64,
    /// `ln` of the prefactor `C = √2 ‖σ^{-1}‖ λ e^{βC₁/16} / sqrt(C₂ - 4L/(βγ) - βC₀/8)`.
    pub log_contract_const: f64,
    /// `α = e^{2β/K²}[r₁(T) + C/K]` at the threshold time.
    pub alpha_contract: f64,
    /// `ln ε` of the small-set constant.
    pub log_epsilon: f64,
    pub epsilon_small: f64,
    /// Whether `β < 1/(16 ‖σ‖²_HS)` on the doubled period.
    pub beta_small: bool,
}

impl RateConstants {
    /// `ln r₁(t)`.
    pub fn log_r1(&self, t: f64) -> f64 {
        self.log_r1_prefactor - self.r1_rate * t
    }

    pub fn r1(&self, t: f64) -> f64 {
        self.log_r1(t).exp()
    }

    /// `α(t) = e^{2β/K²}[r₁(t) + C/K]`.
    pub fn alpha(&self, t: f64) -> f64 {
        let log_c_over_k = self.log_contract_const - self.k.ln();
        (2.0 * self.beta / (self.k * self.k) + log_add_exp(self.log_r1(t), log_c_over_k)).exp()
    }

    /// Whether `8 e^{-T/4} <= ½` at `t`.
    pub fn threshold_holds(&self, t: f64) -> bool {
        8.0 * (-0.25 * t).exp() <= 0.5
    }
}

/// Rate constants, or [`KseError::Inadmissible`] when the rate bracket is not positive.
pub fn theoretical_rates(p: &RateInputs) -> Result<RateConstants> {
    let bracket = rate_bracket(p);
    if !(bracket > 0.0) {
        return Err(KseError::Inadmissible(format!(
            "C2 - 4L/(beta gamma) - beta C0/8 = {bracket:.6e} is not positive"
        )));
    }
    let t_thr = t_threshold(p.dt);
    let log_r1_prefactor = 2f64.ln() + 4.0 * p.beta * p.c0 + 17.0 / 16.0 * p.beta * p.c1;
    let log_contract_const = 0.5 * 2f64.ln() + (p.sigma_inv_norm * p.lambda).ln()
        + p.beta * p.c1 / 16.0
        - 0.5 * bracket.ln();
    let r2 = p.radius * p.radius;
    let s2 = (p.sigma_inv_norm * p.lambda).powi(2);
    let log_inner = (4.0 * r2 * s2).ln() + p.beta * p.c1 / 8.0 + p.beta * r2 / 2.0 - bracket.ln();
    let log_epsilon = 0.5f64.ln() - log_inner.exp();
    let mut out = RateConstants {
        c2: p.c2,
        lambda: p.lambda,
        n_c: p.n_c,
        beta: p.beta,
        k: p.k,
        c0: p.c0,
        c1: p.c1,
        log_r1_prefactor,
        r1_rate: 0.5 * bracket,
        t_threshold: t_thr,
        log_contract_const,
        alpha_contract: 0.0,
        log_epsilon,
        epsilon_small: log_epsilon.exp(),
        beta_small: p.beta < 1.0 / (16.0 * p.sigma_hs_sq_doubled),
    };
    out.alpha_contract = out.alpha(t_thr);
    Ok(out)
}

/// `E θ_β(u(t), v(t))` over coupled pairs.
pub fn coupled_theta_decay(pairs: &[(SpectralField, SpectralField)], beta: f64) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(KseError::InsufficientData("no coupled pairs".into()));
    }
    let x: Vec<f64> = pairs.iter().map(|(u, v)| theta(u, v, beta)).collect();
    Ok(crate::metrics::mean_and_stderr(&x))
}

/// `ln(r₁(t) θ_{β/2}(u₀, v₀))`.
pub fn log_theta_bound(rates: &RateConstants, t: f64, u0: &SpectralField, v0: &SpectralField) -> f64 {
    rates.log_r1(t) + theta(u0, v0, 0.5 * rates.beta).ln()
}

/// Deterministic core of the scalar moment lemma on a grid:
/// `c₁ e^{e^{-at/2} x} <= 2c₁ e^{-at/2} e^x + 2c₁` for `x >= 0`, `t >= (2/a) ln c₂`.
///
/// Returns the number of grid points checked, or `None` if any point fails.
pub fn scalar_moment_lemma_check(c1: f64, c2: f64, a: f64, xs: &[f64], ts: &[f64]) -> Option<usize> {
    let t_min = 2.0 / a * c2.ln();
    let mut checked = 0;
    for &t in ts.iter().filter(|&&t| t >= t_min) {
        let decay = (-0.5 * a * t).exp();
        for &x in xs.iter().filter(|&&x| x >= 0.0) {
            let lhs = c1.ln() + decay * x;
            let rhs = (2.0 * c1).ln() + log_add_exp(-0.5 * a * t + x, 0.0);
            if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
                return None;
            }
            checked += 1;
        }
    }
    Some(checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusSpec;

    #[test]
    fn log_moment_of_constants() {
        let m = LogMoment::from_exponents(&[0.0; 10]).unwrap();
        assert_eq!(m.log_mean, 0.0);
        assert_eq!(m.log_stderr, f64::NEG_INFINITY);
        let big = LogMoment::from_exponents(&[1000.0, 1000.0 + 2f64.ln()]).unwrap();
        assert!((big.log_mean - (1000.0 + 1.5f64.ln())).abs() < 1e-12);
        assert!(LogMoment::from_exponents(&[]).is_err());
    }

    #[test]
    fn moment_of_zero_ensemble() {
        let spec = TorusSpec::new(16.0, 32).unwrap();
        let members = vec![SpectralField::zeros(spec); 5];
        assert_eq!(exp_moment_estimate(&members, 0.1).unwrap().mean(), 1.0);
        let u = SpectralField::from_trig(spec, &[(1, 2.0, 0.0)]).unwrap();
        assert_eq!(exp_moment_estimate(&[u], 0.0).unwrap().mean(), 1.0);
        assert_eq!(integrated_d2_exp_moment(&[0.0, 0.0], 0.1, 1.0).unwrap().mean(), 1.0);
    }

    #[test]
    fn decay_fit_constant() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![3.0; 10];
        let fit = lyapunov_decay_fit(&t, &y, 5.0).unwrap();
        assert_eq!(fit.c_fit, 0.0);
        assert_eq!(fit.c_const, 3.0);
        assert!(lyapunov_decay_fit(&t[..7], &y[..7], 5.0).is_err());
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.4).collect();
        let y: Vec<f64> = t.iter().map(|t| 4.0 * (-t).exp() + 1.0).collect();
        let fit = lyapunov_decay_fit(&t, &y, 4.0).unwrap();
        assert!((fit.c_fit - 1.0).abs() < 0.05, "{}", fit.c_fit);
        for (ti, yi) in t.iter().zip(&y) {
            assert!(*yi <= fit.c_const * ((-fit.c_fit * ti).exp() * 4.0 + 1.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tv_bounds_at_zero() {
        let b = pinsker_tv_bounds(0.0, 2.0, 1.0);
        assert_eq!(b.bound_sqrt, 0.0);
        assert_eq!(b.bound_exp, 0.5);
        let far = pinsker_tv_bounds(1e4, 2.0, 1.0);
        assert!(far.bound_exp >= 0.5 && far.log_exp_gap < 0.0 && far.log_exp_gap.is_finite());
        let b = pinsker_tv_bounds(3.0, 2.0, 1.5);
        assert!((b.bound_sqrt - 0.5 * 2.0 * 1.5 * 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn threshold_time() {
        let t = t_threshold(1e-3);
        assert!(t >= 4.0 * 16f64.ln());
        assert!(t - 1e-3 < 4.0 * 16f64.ln());
        assert!((t - 11.091).abs() < 1e-9);
    }

    fn admissible_inputs() -> RateInputs {
        RateInputs {
            beta: 0.05,
            gamma: 10.0,
            period: 2.0 * std::f64::consts::PI,
            c2: 100.0,
            k: 10.0,
            c0: 10.0,
            c1: 5.0,
            radius: 1.0,
            sigma_inv_norm: 2.0,
            lambda: 50.0,
            n_c: 3,
            dt: 1e-3,
            sigma_hs_sq_doubled: 4.0,
        }
    }

    #[test]
    fn rate_shape() {
        let r = theoretical_rates(&admissible_inputs()).unwrap();
        assert!(r.r1_rate > 0.0);
        assert!(r.r1(1.0) > r.r1(2.0));
        assert!(r.r1(1e4) < 1e-100);
        let expect_c = 2f64.sqrt() * 2.0 * 50.0 * (0.05 * 5.0 / 16.0f64).exp()
            / rate_bracket(&admissible_inputs()).sqrt();
        assert!((r.log_contract_const.exp() - expect_c).abs() < 1e-10 * expect_c);
        let mut tiny = admissible_inputs();
        tiny.beta = 1e-12;
        assert!(matches!(theoretical_rates(&tiny), Err(KseError::Inadmissible(_))));
    }

    #[test]
    fn scalar_lemma_grid() {
        let xs: Vec<f64> = (0..=500).map(|i| i as f64 * 0.1).collect();
        let ts: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        assert_eq!(scalar_moment_lemma_check(1.0, 1.0, 1.0, &xs, &ts), Some(501 * 401));
        assert!(scalar_moment_lemma_check(2.0, 3.0, 0.5, &[0.0], &[10.0]).is_some());
        assert!(scalar_moment_lemma_check(1.0, 1.0, 1.0, &[100.0], &[60.0]).is_some());
    }
}
