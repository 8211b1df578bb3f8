//! Exponential time differencing for the stochastic KSE and its nudged copy.
//!
//! In Fourier space mode `k` obeys `du_k = s_k u_k dt + N_k(u) dt + (σ dW)_k`
//! with `s_k = (kq)² - γ(kq)⁴` and `N(u) = -P(u Du)`. The linear part is
//! integrated exactly, the nonlinearity explicitly, and the noise enters as
//! the exact stochastic convolution `∫ e^{s_k (dt - τ)} (σ dW)_k(τ)` sampled
//! jointly with the Brownian increment `ΔW` so that the same `ΔW` drives the
//! martingale accumulator and, for coupled runs, the Girsanov bookkeeping.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{KseError, Result};
use crate::noise::{ForcingOperator, NoiseStream};
use crate::phi::PhiProfile;
use crate::spectral::{SpectralField, SquareScratch, TorusSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Etd1,
    Etdrk2,
}

impl Scheme {
    pub fn order(&self) -> u32 {
        match self {
            Scheme::Etd1 => 1,
            Scheme::Etdrk2 => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_final: f64,
    pub record_stride: usize,
    pub gamma: f64,
    /// Drop the `u Du` term, for linear reference runs.
    pub nonlinear: bool,
    /// Switch the forcing off while keeping the stream layout, for `σ = 0` runs.
    pub stochastic: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64, gamma: f64) -> Self {
        Self {
            dt,
            scheme: Scheme::Etdrk2,
            t_final,
            record_stride: 1,
            gamma,
            nonlinear: true,
            stochastic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KseError::InvalidParameter(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return bad(format!("dt must lie in (0, 0.1], got {}", self.dt));
        }
        if self.dt * max_growth_rate(self.gamma) > 0.5 {
            return bad(format!(
                "dt = {} exceeds the stability guard 0.5 / max growth rate {}",
                self.dt,
                max_growth_rate(self.gamma)
            ));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be nonnegative, got {}", self.t_final));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_final`.
    pub fn n_steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }
}

/// `s_k = (kq)² - γ (kq)⁴` for the stored modes `k = 1..`.
pub fn linear_symbol(gamma: f64, spec: TorusSpec) -> Vec<f64> {
    let q = spec.wavenumber();
    (1..=spec.max_modes())
        .map(|k| {
            let x = k as f64 * q;
            x * x - gamma * x.powi(4)
        })
        .collect()
}

/// `max_x (x² - γ x⁴) = 1 / (4γ)`.
pub fn max_growth_rate(gamma: f64) -> f64 {
    0.25 / gamma
}

/// `(e^z - 1) / z`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// `(e^z - 1 - z) / z²`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 6.0 + z * z / 24.0 + z.powi(3) / 120.0 + z.powi(4) / 720.0
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Sampling plan for one forcing column: `ΔW` plus one convolution per mode.
#[derive(Clone, Debug)]
struct ColumnNoise {
    /// Modes touched by the column (1-based) and the column coefficient there.
    modes: Vec<(usize, Complex64)>,
    /// Conditional mean of each convolution per unit `ΔW`.
    mean: Vec<f64>,
    /// Factor of the conditional covariance, row-major `r x r`.
    factor: Vec<f64>,
}

#[derive(Clone, Debug)]
struct NoiseLayout {
    columns: Vec<ColumnNoise>,
    normals: usize,
}

impl NoiseLayout {
    fn new(forcing: &ForcingOperator, symbol: &[f64], dt: f64) -> Self {
        let mut normals = forcing.rank();
        let columns = forcing
            .columns()
            .iter()
            .map(|col| {
                let modes: Vec<(usize, Complex64)> = col
                    .coeffs()
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
                    .map(|(i, c)| (i + 1, *c))
                    .collect();
                let r = modes.len();
                let rates: Vec<f64> = modes.iter().map(|(k, _)| symbol[k - 1]).collect();
                let cross: Vec<f64> = rates.iter().map(|s| dt * phi1(s * dt)).collect();
                let cov = DMatrix::from_fn(r, r, |i, j| {
                    dt * phi1((rates[i] + rates[j]) * dt) - cross[i] * cross[j] / dt
                });
                let eig = SymmetricEigen::new(cov);
                let mut factor = vec![0.0; r * r];
                for i in 0..r {
                    for j in 0..r {
                        factor[i * r + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
                    }
                }
                normals += r;
                ColumnNoise {
                    modes,
                    mean: cross.iter().map(|c| c / dt).collect(),
                    factor,
                }
            })
            .collect();
        Self { columns, normals }
    }
}

/// One trajectory of the KSE with its shift and running integrals.
#[derive(Clone, Debug)]
pub struct TrajectoryState {
    pub u: SpectralField,
    pub t: f64,
    pub step: u64,
    /// Shift `b(t)` of the profile.
    pub b: f64,
    /// `∫ ‖D²u‖²_H ds`.
    pub acc_d2: f64,
    /// `∫ ‖D²u‖_H ds`.
    pub acc_d2_root: f64,
    /// `∫ ‖lift(u) - φ_b‖² ds` on the doubled period.
    pub acc_dev: f64,
    /// `Σ 2⟨lift(u) - φ_b, lift(σ ΔW)⟩` on the doubled period, left-point.
    pub acc_mart: f64,
    pub stream: NoiseStream,
}

impl TrajectoryState {
    pub fn new(u: SpectralField, stream: NoiseStream) -> Self {
        Self {
            u,
            t: 0.0,
            step: 0,
            b: 0.0,
            acc_d2: 0.0,
            acc_d2_root: 0.0,
            acc_dev: 0.0,
            acc_mart: 0.0,
            stream,
        }
    }

    fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.b.is_finite()
            && self.acc_d2.is_finite()
            && self.acc_dev.is_finite()
            && self.acc_mart.is_finite()
    }
}

/// A leader trajectory and its nudged follower sharing one noise path.
#[derive(Clone, Debug)]
pub struct CoupledState {
    pub u_traj: TrajectoryState,
    pub v: SpectralField,
    pub lambda: f64,
    pub n_c: usize,
    /// `½ ∫ ‖σ^{-1}(λ P_N (u - v))‖² ds`.
    pub acc_kl: f64,
    /// `∫ ‖u - v‖²_H ds`.
    pub acc_diff_sq: f64,
    /// Set when `(λ, N_c)` did not come from [`select_coupling_params`].
    pub params_overridden: bool,
}

impl CoupledState {
    pub fn u(&self) -> &SpectralField {
        &self.u_traj.u
    }

    pub fn diff_norm(&self) -> f64 {
        self.u_traj
            .u
            .sub(&self.v)
            .expect("leader and follower share a torus")
            .norm()
    }
}

/// `(N_c, λ)`: `λ = 1/(2γ) + C₂/2` and the smallest `N >= 1` with
/// `(γ/2) α_N² >= λ`, where `α_N = (q (N + 1))²`.
pub fn select_coupling_params(gamma: f64, c2: f64, spec: TorusSpec) -> Result<(usize, f64)> {
    if !(c2 > 0.0 && gamma > 0.0) {
        return Err(KseError::InvalidParameter(format!(
            "coupling needs positive gamma and C2, got gamma={gamma}, C2={c2}"
        )));
    }
    let lambda = 0.5 / gamma + 0.5 * c2;
    let q = spec.wavenumber();
    let mut n = 1usize;
    while 0.5 * gamma * (q * (n + 1) as f64).powi(4) < lambda {
        n += 1;
    }
    Ok((n, lambda))
}

/// Time stepper bound to one forcing, profile and resolution.
///
/// A solver owns scratch buffers and is meant to be used by one thread; build
/// one per worker.
pub struct KseSolver<'a> {
    cfg: SolverConfig,
    spec: TorusSpec,
    forcing: &'a ForcingOperator,
    phi: &'a PhiProfile,
    band: usize,
    q: f64,
    half_period: f64,
    expo: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    noise: NoiseLayout,
    scratch: SquareScratch,
    z: Vec<f64>,
    dw: Vec<f64>,
    ou: Vec<Complex64>,
    sigma_dw: Vec<Complex64>,
    n0: Vec<Complex64>,
    na: Vec<Complex64>,
    a: Vec<Complex64>,
    av: Vec<Complex64>,
    m0: Vec<Complex64>,
    ma: Vec<Complex64>,
    c: Vec<Complex64>,
    kl: Vec<f64>,
    sq: Vec<Complex64>,
}

impl<'a> KseSolver<'a> {
    pub fn new(cfg: SolverConfig, forcing: &'a ForcingOperator, phi: &'a PhiProfile) -> Result<Self> {
        cfg.validate()?;
        let spec = forcing.spec();
        if (phi.period() - 2.0 * spec.period()).abs() > 1e-12 * phi.period() {
            return Err(KseError::PeriodMismatch {
                left: phi.period(),
                right: 2.0 * spec.period(),
            });
        }
        let band = spec.dealiased_modes().min(spec.max_modes());
        if forcing.bandwidth() > band {
            return Err(KseError::InvalidParameter(format!(
                "forcing reaches mode {} beyond the dealiased band {band}",
                forcing.bandwidth()
            )));
        }
        let symbol = linear_symbol(cfg.gamma, spec);
        let dt = cfg.dt;
        let expo = symbol[..band].iter().map(|s| (s * dt).exp()).collect();
        let p1 = symbol[..band].iter().map(|s| dt * phi1(s * dt)).collect();
        let p2 = symbol[..band].iter().map(|s| dt * phi2(s * dt)).collect();
        let noise = NoiseLayout::new(forcing, &symbol, dt);
        let m = forcing.rank();
        Ok(Self {
            cfg,
            spec,
            forcing,
            phi,
            band,
            q: spec.wavenumber(),
            half_period: spec.period(),
            expo,
            p1,
            p2,
            z: vec![0.0; noise.normals],
            noise,
            scratch: SquareScratch::new(spec.grid_size()),
            dw: vec![0.0; m],
            ou: vec![ZERO; band],
            sigma_dw: vec![ZERO; band],
            n0: vec![ZERO; band],
            na: vec![ZERO; band],
            a: vec![ZERO; band],
            av: vec![ZERO; band],
            m0: vec![ZERO; band],
            ma: vec![ZERO; band],
            c: vec![ZERO; band],
            kl: vec![0.0; m],
            sq: vec![ZERO; band],
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn spec(&self) -> TorusSpec {
        self.spec
    }

    /// Number of modes evolved, `n_g/3`.
    pub fn band(&self) -> usize {
        self.band
    }

    /// Checks an initial condition and wraps it in a fresh state.
    pub fn initial_state(&self, u0: &SpectralField, stream: NoiseStream) -> Result<TrajectoryState> {
        if u0.spec() != self.spec {
            return Err(KseError::PeriodMismatch {
                left: self.spec.period(),
                right: u0.spec().period(),
            });
        }
        if u0.bandwidth() > self.band {
            return Err(KseError::InvalidParameter(format!(
                "initial condition reaches mode {} beyond the dealiased band {}",
                u0.bandwidth(),
                self.band
            )));
        }
        Ok(TrajectoryState::new(u0.clone(), stream))
    }

    /// Builds a coupled state with explicit `(λ, N_c)`.
    pub fn coupled_state(
        &self,
        u0: &SpectralField,
        v0: &SpectralField,
        lambda: f64,
        n_c: usize,
        stream: NoiseStream,
    ) -> Result<CoupledState> {
        let u_traj = self.initial_state(u0, stream.clone())?;
        self.initial_state(v0, stream)?;
        if n_c > self.forcing.range_n() {
            return Err(KseError::NotInRange {
                residual: f64::INFINITY,
            });
        }
        if !(lambda >= 0.0 && lambda * self.cfg.dt <= 0.5) {
            return Err(KseError::InvalidParameter(format!(
                "nudging gain {lambda} must be nonnegative with lambda * dt <= 0.5"
            )));
        }
        Ok(CoupledState {
            u_traj,
            v: v0.clone(),
            lambda,
            n_c,
            acc_kl: 0.0,
            acc_diff_sq: 0.0,
            params_overridden: false,
        })
    }

    /// Draws `ΔW` and the exact noise convolution for one step.
    fn sample_noise(&mut self, stream: &mut NoiseStream) {
        stream.standard_normals(&mut self.z);
        self.ou.iter_mut().for_each(|c| *c = ZERO);
        self.sigma_dw.iter_mut().for_each(|c| *c = ZERO);
        if !self.cfg.stochastic {
            self.dw.iter_mut().for_each(|w| *w = 0.0);
            return;
        }
        let sdt = self.cfg.dt.sqrt();
        let m = self.forcing.rank();
        for j in 0..m {
            self.dw[j] = sdt * self.z[j];
        }
        let mut pos = m;
        for (j, col) in self.noise.columns.iter().enumerate() {
            let r = col.modes.len();
            let zeta = &self.z[pos..pos + r];
            for (i, &(k, coef)) in col.modes.iter().enumerate() {
                let mut conv = col.mean[i] * self.dw[j];
                for l in 0..r {
                    conv += col.factor[i * r + l] * zeta[l];
                }
                self.ou[k - 1] += coef * conv;
                self.sigma_dw[k - 1] += coef * self.dw[j];
            }
            pos += r;
        }
    }

    fn shift_rate(&self, u: &[Complex64], b: f64) -> f64 {
        self.phi.inner_dphi_lifted_raw(u, b) / (4.0 * self.half_period)
    }

    fn deviation_sq(&self, u: &[Complex64], b: f64) -> f64 {
        let norm_sq = 2.0 * norm_sq(u);
        (2.0 * norm_sq - 2.0 * self.phi.inner_phi_lifted_raw(u, b) + self.phi.norm_sq()).max(0.0)
    }

    fn d2_norm_sq(&self, u: &[Complex64]) -> f64 {
        2.0 * u
            .iter()
            .enumerate()
            .map(|(i, c)| ((i + 1) as f64 * self.q).powi(4) * c.norm_sqr())
            .sum::<f64>()
    }

    /// Advances one trajectory by one step.
    pub fn step(&mut self, state: &mut TrajectoryState) -> Result<()> {
        let dt = self.cfg.dt;
        let band = self.band;
        let mut u: Vec<Complex64> = state.u.coeffs()[..band].to_vec();
        let b0 = state.b;
        let f0 = self.shift_rate(&u, b0);
        let d2_0 = self.d2_norm_sq(&u);
        let dev0 = self.deviation_sq(&u, b0);

        self.sample_noise(&mut state.stream);
        state.acc_mart += 2.0 * (2.0 * inner(&u, &self.sigma_dw)
            - self.phi.inner_phi_lifted_raw(&self.sigma_dw, b0));

        let lin = Linear {
            scheme: self.cfg.scheme,
            expo: &self.expo,
            p1: &self.p1,
            p2: &self.p2,
            ou: &self.ou,
        };
        let nl = Nonlinear {
            on: self.cfg.nonlinear,
            q: self.q,
            period: self.half_period,
            band,
        };
        nl.drift(&mut self.scratch, &u, &mut self.n0, &mut self.sq);
        match lin.scheme {
            Scheme::Etd1 => lin.advance(&mut u, &self.n0),
            Scheme::Etdrk2 => {
                lin.predict(&mut self.a, &u, &self.n0);
                nl.drift(&mut self.scratch, &self.a, &mut self.na, &mut self.sq);
                lin.correct(&mut u, &self.a, &self.n0, &self.na);
            }
        }

        let b_pred = b0 + dt * f0;
        let f1 = self.shift_rate(&u, b_pred);
        let b1 = b0 + 0.5 * dt * (f0 + f1);
        let d2_1 = self.d2_norm_sq(&u);
        let dev1 = self.deviation_sq(&u, b1);
        state.acc_d2 += 0.5 * dt * (d2_0 + d2_1);
        state.acc_d2_root += 0.5 * dt * (d2_0.sqrt() + d2_1.sqrt());
        state.acc_dev += 0.5 * dt * (dev0 + dev1);
        state.b = b1;
        state.u.coeffs_mut()[..band].copy_from_slice(&u);
        state.step += 1;
        state.t = state.step as f64 * dt;
        if !state.is_finite() {
            return Err(KseError::NonFinite { step: state.step });
        }
        Ok(())
    }

    fn kl_density(&mut self, u: &[Complex64], v: &[Complex64], lambda: f64, n_c: usize) -> f64 {
        for k in 0..n_c {
            self.c[k] = (u[k] - v[k]) * lambda;
        }
        self.forcing
            .sigma_inverse_low(&self.c[..n_c], n_c, &mut self.kl);
        0.5 * self.kl.iter().map(|w| w * w).sum::<f64>()
    }

    /// Advances leader and follower by one step with a shared noise draw.
    pub fn step_coupled(&mut self, cs: &mut CoupledState) -> Result<()> {
        if cs.n_c > self.forcing.range_n() {
            return Err(KseError::NotInRange {
                residual: f64::INFINITY,
            });
        }
        let dt = self.cfg.dt;
        let band = self.band;
        let lambda = cs.lambda;
        let n_c = cs.n_c.min(band);
        let state = &mut cs.u_traj;
        let mut u: Vec<Complex64> = state.u.coeffs()[..band].to_vec();
        let mut v: Vec<Complex64> = cs.v.coeffs()[..band].to_vec();
        let b0 = state.b;
        let f0 = self.shift_rate(&u, b0);
        let d2_0 = self.d2_norm_sq(&u);
        let dev0 = self.deviation_sq(&u, b0);
        let diff0 = diff_norm_sq(&u, &v);
        let kl0 = self.kl_density(&u, &v, lambda, n_c);

        self.sample_noise(&mut state.stream);
        state.acc_mart += 2.0 * (2.0 * inner(&u, &self.sigma_dw)
            - self.phi.inner_phi_lifted_raw(&self.sigma_dw, b0));

        let lin = Linear {
            scheme: self.cfg.scheme,
            expo: &self.expo,
            p1: &self.p1,
            p2: &self.p2,
            ou: &self.ou,
        };
        let nl = Nonlinear {
            on: self.cfg.nonlinear,
            q: self.q,
            period: self.half_period,
            band,
        };
        nl.drift(&mut self.scratch, &u, &mut self.n0, &mut self.sq);
        nl.drift(&mut self.scratch, &v, &mut self.m0, &mut self.sq);
        nudge(&mut self.m0, &u, &v, lambda, n_c);
        match lin.scheme {
            Scheme::Etd1 => {
                lin.advance(&mut u, &self.n0);
                lin.advance(&mut v, &self.m0);
            }
            Scheme::Etdrk2 => {
                lin.predict(&mut self.a, &u, &self.n0);
                lin.predict(&mut self.av, &v, &self.m0);
                nl.drift(&mut self.scratch, &self.a, &mut self.na, &mut self.sq);
                nl.drift(&mut self.scratch, &self.av, &mut self.ma, &mut self.sq);
                nudge(&mut self.ma, &self.a, &self.av, lambda, n_c);
                lin.correct(&mut u, &self.a, &self.n0, &self.na);
                lin.correct(&mut v, &self.av, &self.m0, &self.ma);
            }
        }

        let b_pred = b0 + dt * f0;
        let f1 = self.shift_rate(&u, b_pred);
        let b1 = b0 + 0.5 * dt * (f0 + f1);
        let d2_1 = self.d2_norm_sq(&u);
        let dev1 = self.deviation_sq(&u, b1);
        let diff1 = diff_norm_sq(&u, &v);
        let kl1 = self.kl_density(&u, &v, lambda, n_c);
        state.acc_d2 += 0.5 * dt * (d2_0 + d2_1);
        state.acc_d2_root += 0.5 * dt * (d2_0.sqrt() + d2_1.sqrt());
        state.acc_dev += 0.5 * dt * (dev0 + dev1);
        state.b = b1;
        state.u.coeffs_mut()[..band].copy_from_slice(&u);
        state.step += 1;
        state.t = state.step as f64 * dt;
        cs.v.coeffs_mut()[..band].copy_from_slice(&v);
        cs.acc_diff_sq += 0.5 * dt * (diff0 + diff1);
        cs.acc_kl += 0.5 * dt * (kl0 + kl1);
        if !(cs.u_traj.is_finite() && cs.v.is_finite() && cs.acc_kl.is_finite()) {
            return Err(KseError::NonFinite {
                step: cs.u_traj.step,
            });
        }
        Ok(())
    }

    /// Snapshots every `record_stride` steps, always including the first and last.
    pub fn run(&mut self, u0: &SpectralField, stream: NoiseStream) -> Result<Vec<TrajectoryState>> {
        let mut state = self.initial_state(u0, stream)?;
        let n = self.cfg.n_steps();
        let stride = self.cfg.record_stride as u64;
        let mut out = vec![state.clone()];
        for i in 1..=n {
            self.step(&mut state)?;
            if i % stride == 0 || i == n {
                out.push(state.clone());
            }
        }
        Ok(out)
    }

    /// Coupled analogue of [`Self::run`].
    pub fn run_coupled(&mut self, mut cs: CoupledState) -> Result<Vec<CoupledState>> {
        let n = self.cfg.n_steps();
        let stride = self.cfg.record_stride as u64;
        let mut out = vec![cs.clone()];
        for i in 1..=n {
            self.step_coupled(&mut cs)?;
            if i % stride == 0 || i == n {
                out.push(cs.clone());
            }
        }
        Ok(out)
    }
}

/// Exact linear propagator pieces for one step.
struct Linear<'b> {
    scheme: Scheme,
    expo: &'b [f64],
    p1: &'b [f64],
    p2: &'b [f64],
    ou: &'b [Complex64],
}

impl Linear<'_> {
    /// `u <- e^{s dt} u + dt φ1 N + O`.
    fn advance(&self, u: &mut [Complex64], n0: &[Complex64]) {
        for k in 0..u.len() {
            u[k] = u[k] * self.expo[k] + n0[k] * self.p1[k] + self.ou[k];
        }
    }

    fn predict(&self, a: &mut [Complex64], u: &[Complex64], n0: &[Complex64]) {
        for k in 0..u.len() {
            a[k] = u[k] * self.expo[k] + n0[k] * self.p1[k] + self.ou[k];
        }
    }

    /// `u <- a + dt φ2 (N(a) - N(u))`.
    fn correct(&self, u: &mut [Complex64], a: &[Complex64], n0: &[Complex64], na: &[Complex64]) {
        for k in 0..u.len() {
            u[k] = a[k] + (na[k] - n0[k]) * self.p2[k];
        }
    }
}

/// Dealiased `-u Du` on the solver band.
struct Nonlinear {
    on: bool,
    q: f64,
    period: f64,
    band: usize,
}

impl Nonlinear {
    fn drift(
        &self,
        scratch: &mut SquareScratch,
        u: &[Complex64],
        out: &mut [Complex64],
        sq: &mut [Complex64],
    ) {
        let band = u.iter().rposition(|c| c.re != 0.0 || c.im != 0.0).map_or(0, |i| i + 1);
        if !self.on || band == 0 {
            out.iter_mut().for_each(|c| *c = ZERO);
            return;
        }
        scratch.square(u, band, self.period, self.band, sq);
        for (k, (o, s)) in out.iter_mut().zip(sq.iter()).enumerate() {
            *o = *s * Complex64::new(0.0, -0.5 * (k + 1) as f64 * self.q);
        }
    }
}

/// Adds `λ P_N (u - v)` to a drift.
fn nudge(out: &mut [Complex64], u: &[Complex64], v: &[Complex64], lambda: f64, n_c: usize) {
    for k in 0..n_c {
        out[k] += (u[k] - v[k]) * lambda;
    }
}

fn norm_sq(u: &[Complex64]) -> f64 {
    u.iter().map(|c| c.norm_sqr()).sum()
}

fn inner(u: &[Complex64], v: &[Complex64]) -> f64 {
    2.0 * u.iter().zip(v).map(|(a, b)| (a * b.conj()).re).sum::<f64>()
}

fn diff_norm_sq(u: &[Complex64], v: &[Complex64]) -> f64 {
    2.0 * u.iter().zip(v).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
}

/// One Heun step of `b' = ⟨lift(u), Dφ_b⟩ / (4L)` with `u` frozen over the step.
pub fn step_shift(b: f64, u: &SpectralField, phi: &PhiProfile, dt: f64) -> Result<f64> {
    let rate = |b: f64| -> Result<f64> {
        Ok(phi.inner_dphi_lifted(u, b)? / (4.0 * u.spec().period()))
    };
    let f0 = rate(b)?;
    let f1 = rate(b + dt * f0)?;
    Ok(b + 0.5 * dt * (f0 + f1))
}

/// Single-step convenience wrapper; prefer [`KseSolver`] for loops.
pub fn step_kse(
    state: &TrajectoryState,
    cfg: &SolverConfig,
    forcing: &ForcingOperator,
    phi: &PhiProfile,
) -> Result<TrajectoryState> {
    let mut solver = KseSolver::new(*cfg, forcing, phi)?;
    let mut next = state.clone();
    solver.step(&mut next)?;
    Ok(next)
}

/// Single coupled step; prefer [`KseSolver`] for loops.
pub fn step_coupled(
    cs: &CoupledState,
    cfg: &SolverConfig,
    forcing: &ForcingOperator,
    phi: &PhiProfile,
) -> Result<CoupledState> {
    let mut solver = KseSolver::new(*cfg, forcing, phi)?;
    let mut next = cs.clone();
    solver.step_coupled(&mut next)?;
    Ok(next)
}

/// Snapshot series of one trajectory.
pub fn run_trajectory(
    cfg: &SolverConfig,
    forcing: &ForcingOperator,
    phi: &PhiProfile,
    u0: &SpectralField,
    stream: NoiseStream,
) -> Result<Vec<TrajectoryState>> {
    KseSolver::new(*cfg, forcing, phi)?.run(u0, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::solver_profile;
    use std::f64::consts::PI;

    #[test]
    fn symbol_values() {
        let spec = TorusSpec::new(2.0 * PI, 16).unwrap();
        let s = linear_symbol(1.0, spec);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], -12.0);
    }

    #[test]
    fn symbol_maximum() {
        for i in 0..20 {
            let gamma = 0.1 * 1.3f64.powi(i);
            let best = (0..200_000)
                .map(|j| {
                    let x = j as f64 * 1e-5 * 10.0 / gamma.sqrt();
                    x * x - gamma * x.powi(4)
                })
                .fold(f64::MIN, f64::max);
            assert!((best - max_growth_rate(gamma)).abs() < 1e-6 * max_growth_rate(gamma));
        }
    }

    #[test]
    fn phi_functions_are_smooth_across_branches() {
        for &z in &[1e-6, 1e-5, 9.9e-4, 1e-3, 1.1e-3, -1e-3, -0.5, -20.0] {
            let exact1 = if z == 0.0 { 1.0 } else { (z as f64).exp_m1() / z };
            assert!((phi1(z) - exact1).abs() < 1e-10);
            let h = phi2(z);
            let series: f64 = (0..30)
                .scan(1.0, |f, n| {
                    *f /= (n + 2) as f64;
                    Some(*f * z.powi(n as i32))
                })
                .sum();
            if z.abs() < 1.0 {
                assert!((h - series).abs() < 1e-12, "z = {z}");
            }
        }
    }

    #[test]
    fn coupling_params() {
        let spec = TorusSpec::new(2.0 * PI, 32).unwrap();
        assert_eq!(select_coupling_params(1.0, 1.0, spec).unwrap(), (1, 1.0));
        let (_, lambda) = select_coupling_params(0.5, 2.0, spec).unwrap();
        assert_eq!(lambda, 2.0);
        let spec16 = TorusSpec::new(16.0, 128).unwrap();
        assert_eq!(select_coupling_params(1.0, 1.0, spec16).unwrap().0, 3);
        let mut prev = usize::MAX;
        for i in 0..30 {
            let gamma = 0.1 * 1.2f64.powi(i);
            let (n, _) = select_coupling_params(gamma, 1.0, spec16).unwrap();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.2, 1.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(-1.0, 1.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.01, 1.0, 0.001).validate().is_err());
        assert!(SolverConfig::new(0.001, 1.0, 1.0).validate().is_ok());
    }

    fn setup(period: f64, n: usize, gamma: f64, amp: f64) -> (ForcingOperator, PhiProfile) {
        let spec = TorusSpec::new(period, n).unwrap();
        let f = ForcingOperator::canonical(spec, 4, amp).unwrap();
        (f, solver_profile(period, gamma).unwrap())
    }

    #[test]
    fn zero_stays_zero_without_noise() {
        let (f, phi) = setup(2.0 * PI, 32, 1.0, 0.5);
        let spec = f.spec();
        let mut cfg = SolverConfig::new(1e-3, 0.01, 1.0);
        cfg.record_stride = 5;
        cfg.stochastic = false;
        let mut solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let series = solver.run(&SpectralField::zeros(spec), NoiseStream::new(1, 0)).unwrap();
        assert_eq!(series.len(), 3);
        for s in &series {
            assert_eq!(s.u.norm(), 0.0);
        }
    }

    #[test]
    fn stable_mode_follows_linear_flow() {
        let (f, phi) = setup(2.0 * PI, 32, 1.0, 0.5);
        let spec = f.spec();
        let mut cfg = SolverConfig::new(1e-3, 0.2, 1.0);
        cfg.stochastic = false;
        let u0 = SpectralField::from_trig(spec, &[(2, 1e-3, 0.0)]).unwrap();
        let series = run_trajectory(&cfg, &f, &phi, &u0, NoiseStream::new(3, 0)).unwrap();
        let last = series.last().unwrap();
        let expect = u0.coeff(2) * (-12.0 * last.t).exp();
        // The nonlinearity only feeds modes 4, 6, ... back at second order.
        assert!((last.u.coeff(2) - expect).norm() < 1e-6 * expect.norm());
    }

    #[test]
    fn t_final_zero_gives_one_snapshot() {
        let (f, phi) = setup(16.0, 64, 1.0, 0.5);
        let cfg = SolverConfig::new(1e-3, 0.0, 1.0);
        let u0 = SpectralField::from_trig(f.spec(), &[(1, 1.0, 0.0)]).unwrap();
        let series = run_trajectory(&cfg, &f, &phi, &u0, NoiseStream::new(3, 0)).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].u, u0);
    }

    #[test]
    fn runs_are_reproducible() {
        let (f, phi) = setup(16.0, 64, 1.0, 0.5);
        let cfg = SolverConfig::new(1e-3, 0.3, 1.0);
        let u0 = SpectralField::from_trig(f.spec(), &[(1, 1.0, 0.0)]).unwrap();
        let a = run_trajectory(&cfg, &f, &phi, &u0, NoiseStream::new(9, 2)).unwrap();
        let b = run_trajectory(&cfg, &f, &phi, &u0, NoiseStream::new(9, 2)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.u, y.u);
            assert_eq!(x.acc_mart.to_bits(), y.acc_mart.to_bits());
        }
        let c = run_trajectory(&cfg, &f, &phi, &u0, NoiseStream::new(9, 3)).unwrap();
        assert_ne!(a.last().unwrap().u, c.last().unwrap().u);
    }

    #[test]
    fn ensemble_noise_variance_matches_ou() {
        // Linear run of one forced stable mode: Var of the sine coordinate
        // after one step equals amp² ∫ e^{2 s τ} dτ.
        let spec = TorusSpec::new(2.0 * PI, 16).unwrap();
        let f = ForcingOperator::from_terms(
            spec,
            &[crate::noise::ForcingTerm::new(2, crate::noise::Phase::Sin, 1.0)],
        )
        .unwrap();
        let phi = solver_profile(2.0 * PI, 1.0).unwrap();
        let mut cfg = SolverConfig::new(0.05, 0.05, 1.0);
        cfg.nonlinear = false;
        let mut solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let n = 40_000;
        let mut var = 0.0;
        for i in 0..n {
            let mut s = solver
                .initial_state(&SpectralField::zeros(spec), NoiseStream::new(5, i))
                .unwrap();
            solver.step(&mut s).unwrap();
            let coord = -std::f64::consts::SQRT_2 * s.u.coeff(2).im;
            var += coord * coord;
        }
        var /= n as f64;
        let s = -12.0;
        let expect = ((2.0 * s * 0.05f64).exp() - 1.0) / (2.0 * s);
        let se = expect * (2.0 / n as f64).sqrt();
        assert!((var - expect).abs() < 4.0 * se, "{var} vs {expect}");
    }

    #[test]
    fn shift_is_still_for_zero_field() {
        let phi = solver_profile(2.0 * PI, 1.0).unwrap();
        let spec = TorusSpec::new(2.0 * PI, 32).unwrap();
        assert_eq!(step_shift(0.3, &SpectralField::zeros(spec), &phi, 0.1).unwrap(), 0.3);
    }

    #[test]
    fn shift_direction_follows_pairing() {
        let phi = solver_profile(2.0 * PI, 1.0).unwrap();
        let spec = TorusSpec::new(2.0 * PI, 32).unwrap();
        let u = SpectralField::from_trig(spec, &[(1, 0.2, 0.5)]).unwrap();
        let pairing = phi.inner_dphi_lifted(&u, 0.0).unwrap();
        let b = step_shift(0.0, &u, &phi, 1e-4).unwrap();
        assert_eq!(b.signum(), pairing.signum());
    }

    #[test]
    fn shift_step_is_second_order() {
        let phi = solver_profile(2.0 * PI, 1.0).unwrap();
        let spec = TorusSpec::new(2.0 * PI, 32).unwrap();
        let u = SpectralField::from_trig(spec, &[(1, 0.2, 0.5), (2, 0.1, 0.0)]).unwrap();
        let t = 0.002;
        let integrate = |dt: f64| {
            let steps = (t / dt).round() as usize;
            let mut b = 0.0;
            for _ in 0..steps {
                b = step_shift(b, &u, &phi, dt).unwrap();
            }
            b
        };
        let reference = integrate(t / 100.0 / 8.0);
        let e1 = (integrate(t / 4.0) - reference).abs();
        let e2 = (integrate(t / 8.0) - reference).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn coupled_fixed_point() {
        let (f, phi) = setup(16.0, 64, 1.0, 0.5);
        let cfg = SolverConfig::new(1e-3, 0.5, 1.0);
        let mut solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let u0 = SpectralField::from_trig(f.spec(), &[(1, 1.0, 0.3), (3, 0.2, 0.0)]).unwrap();
        let cs = solver.coupled_state(&u0, &u0, 1.0, 3, NoiseStream::new(4, 0)).unwrap();
        for s in solver.run_coupled(cs).unwrap() {
            assert!(s.diff_norm() <= 1e-12);
            assert_eq!(s.acc_kl, 0.0);
        }
    }

    #[test]
    fn zero_gain_follower_is_plain_kse() {
        let (f, phi) = setup(16.0, 64, 1.0, 0.5);
        let cfg = SolverConfig::new(1e-3, 0.3, 1.0);
        let mut solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let u0 = SpectralField::from_trig(f.spec(), &[(1, 1.0, 0.3)]).unwrap();
        let v0 = SpectralField::from_trig(f.spec(), &[(2, -0.5, 0.1)]).unwrap();
        let cs = solver.coupled_state(&u0, &v0, 0.0, 2, NoiseStream::new(4, 1)).unwrap();
        let coupled = solver.run_coupled(cs).unwrap();
        let plain = solver.run(&v0, NoiseStream::new(4, 1)).unwrap();
        assert_eq!(coupled.last().unwrap().v, plain.last().unwrap().u);
    }

    #[test]
    fn linear_nudged_difference_decays_at_shifted_rate() {
        let (f, phi) = setup(2.0 * PI, 32, 1.0, 0.5);
        let mut cfg = SolverConfig::new(1e-3, 1.0, 1.0);
        cfg.nonlinear = false;
        let mut solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let u0 = SpectralField::zeros(f.spec());
        let v0 = SpectralField::from_trig(f.spec(), &[(1, 1.0, 0.0)]).unwrap();
        let lambda = 2.0;
        let cs = solver.coupled_state(&u0, &v0, lambda, 1, NoiseStream::new(8, 0)).unwrap();
        let last = solver.run_coupled(cs).unwrap().pop().unwrap();
        // s_1 = 0 on this torus, so the difference decays like e^{-λ t}.
        let expect = v0.norm() * (-lambda * last.u_traj.t).exp();
        assert!((last.diff_norm() - expect).abs() < 1e-5 * expect);
    }

    #[test]
    fn coupling_outside_range_is_rejected() {
        let (f, phi) = setup(16.0, 64, 1.0, 0.5);
        let cfg = SolverConfig::new(1e-3, 0.3, 1.0);
        let solver = KseSolver::new(cfg, &f, &phi).unwrap();
        let u0 = SpectralField::zeros(f.spec());
        assert!(matches!(
            solver.coupled_state(&u0, &u0, 1.0, 5, NoiseStream::new(1, 0)),
            Err(KseError::NotInRange { .. })
        ));
    }
}
