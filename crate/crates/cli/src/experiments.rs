//! The six subcommands as library functions returning typed outcomes.
//!
//! Trajectories run on a rayon pool with one solver per worker. Results are
//! collected in trajectory order, so every table is independent of the worker
//! count.

use anyhow::{anyhow, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use kse_core::diagnostics::{
    coupling_bound_check, exp_moment_estimate, integrated_d2_exp_moment, log_integrated_d2_bound,
    log_moment_bound, log_theta_bound, lyapunov_decay_fit, lyapunov_pathwise_check, pinsker_tv_bounds,
    scalar_moment_lemma_check, t_threshold, theoretical_rates, CouplingRow, DecayFit, LogMoment,
    LyapunovReport, RateConstants, RateInputs, TvBounds,
};
use kse_core::integrator::{select_coupling_params, CoupledState, KseSolver, SolverConfig, TrajectoryState};
use kse_core::metrics::{
    d_k_beta, d_tilde, decreasing_within, estimate_from_costs, mixing_rate_fit, theta, triangle_defect,
    Distance, EnsembleSnapshot, MetricParams, Provenance, RateFit,
};
use kse_core::noise::{ForcingOperator, NoiseStream};
use kse_core::phi::{energy_constants, solver_profile, EnergyConstants, PhiProfile};
use kse_core::assignment::CostMatrix;
use kse_core::{SpectralField, TorusSpec};

use crate::config::{ExperimentConfig, InitialKind, Pairing};
use crate::output::{Cell, Report, Table};

/// `Σ_{k=1}^{8} (sin + cos)(kqx) / k`, scaled to the given `H` norm.
pub fn big_field(spec: TorusSpec, norm: f64) -> SpectralField {
    let terms: Vec<(usize, f64, f64)> = (1..=8).map(|k| (k, 1.0 / k as f64, 1.0 / k as f64)).collect();
    let f = SpectralField::from_trig(spec, &terms).expect("modes 1..=8 fit every admissible grid");
    f.scale(norm / f.norm())
}

/// Everything derived once from a validated config.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub spec: TorusSpec,
    pub forcing: ForcingOperator,
    pub phi: PhiProfile,
    pub solver: SolverConfig,
    pub energy: EnergyConstants,
    pub hash: String,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let spec = cfg.spec()?;
        let forcing = cfg.forcing_operator()?;
        let phi = solver_profile(cfg.physics.period, cfg.physics.gamma)
            .context("phi_builder: building the solver profile")?;
        let energy = energy_constants(&phi, &forcing, cfg.physics.gamma)?;
        let solver = cfg.solver_config();
        solver.validate().context("integrator: solver configuration")?;
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            spec,
            forcing,
            phi,
            solver,
            energy,
            hash,
        })
    }

    pub fn initial(&self, kind: InitialKind) -> SpectralField {
        match kind {
            InitialKind::Zero => SpectralField::zeros(self.spec),
            InitialKind::Big => big_field(self.spec, self.cfg.initial.big_norm),
        }
    }

    pub fn stream(&self, id: u64) -> NoiseStream {
        NoiseStream::new(self.cfg.noise.seed, id)
    }

    fn provenance(&self, first: u64, last: u64) -> Provenance {
        Provenance {
            first_stream: first,
            last_stream: last,
            seed: self.cfg.noise.seed,
            config_hash: self.hash.clone(),
        }
    }

    /// `(N_c, λ, overridden)` from the config or the selection rule.
    pub fn coupling_params(&self) -> Result<(usize, f64, bool)> {
        match (self.cfg.coupling.n_c, self.cfg.coupling.lambda) {
            (Some(n), Some(l)) => Ok((n, l, true)),
            _ => {
                let (n, l) = select_coupling_params(self.cfg.physics.gamma, self.cfg.coupling.c2, self.spec)?;
                Ok((n, l, false))
            }
        }
    }

    /// Runs `f` for each id in `ids` on `workers` threads, results in id order.
    fn par_runs<'a, T: Send>(
        &'a self,
        workers: usize,
        ids: std::ops::Range<u64>,
        what: &str,
        f: impl Fn(&mut KseSolver<'a>, u64) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        KseSolver::new(self.solver, &self.forcing, &self.phi).context("integrator: building the solver")?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        pool.install(|| {
            ids.into_par_iter()
                .map_init(
                    || KseSolver::new(self.solver, &self.forcing, &self.phi).expect("validated above"),
                    |s, id| f(s, id).with_context(|| format!("{what}: trajectory {id}")),
                )
                .collect()
        })
    }

    fn base_summary(&self, r: &mut Report) {
        r.set("scenario", &self.cfg.scenario);
        r.set("config_hash", &self.hash);
        r.set("seed", self.cfg.noise.seed);
        r.set_f("L", self.cfg.physics.period);
        r.set_f("gamma", self.cfg.physics.gamma);
        r.set("n_grid", self.cfg.numerics.n_grid);
        r.set_f("dt", self.cfg.numerics.dt);
        r.set_f("t_final", self.cfg.numerics.t_final);
        r.set("phi_M", self.phi.cutoff_index());
        r.set_f("C0", self.energy.c0);
        r.set_f("C1", self.energy.c1);
    }
}

fn state_cells(s: &TrajectoryState) -> Vec<Cell> {
    vec![
        s.t.into(),
        s.u.norm().into(),
        s.u.sobolev_norm_sq(2).sqrt().into(),
        s.b.into(),
        s.acc_d2.into(),
        s.acc_dev.into(),
        s.acc_mart.into(),
    ]
}

const TRAJ_HEADER: [&str; 8] = ["traj", "t", "norm_H", "norm_H2", "b", "acc_D2", "acc_dev", "acc_mart"];

/// Output of `simulate`.
pub struct SimulateOutcome {
    pub series: Vec<Vec<TrajectoryState>>,
    pub pathwise: Vec<LyapunovReport>,
    pub report: Report,
}

pub fn simulate(setup: &Setup, workers: usize) -> Result<SimulateOutcome> {
    let cfg = &setup.cfg;
    let n = cfg.noise.n_traj as u64;
    let u0 = setup.initial(cfg.initial.u0);
    let series = setup.par_runs(workers, 0..n, "simulate", |s, id| Ok(s.run(&u0, setup.stream(id))?))?;

    let tol = cfg.lyapunov.tol_dt * cfg.numerics.dt;
    let mut r = Report::new("simulate");
    setup.base_summary(&mut r);
    let mut table = Table::new(&TRAJ_HEADER);
    let mut pathwise = Vec::with_capacity(series.len());
    let sqrt_l = cfg.physics.period.sqrt();
    let mut max_norm: f64 = 0.0;
    for (id, traj) in series.iter().enumerate() {
        for s in traj {
            let mut row = vec![Cell::from(id)];
            row.extend(state_cells(s));
            table.push(row);
            max_norm = max_norm.max(s.u.norm());
            let du_inf = s.u.derivative(1).linf_norm();
            let bound = sqrt_l * s.u.sobolev_norm_sq(2).sqrt();
            if du_inf > bound * (1.0 + 1e-9) + 1e-12 {
                r.violations.push(format!("sobolev_chain:traj={id}:t={}", s.t));
            }
        }
        let rep = lyapunov_pathwise_check(traj, cfg.physics.gamma, setup.energy.c0, setup.energy.c1, tol);
        for &i in &rep.violations {
            r.violations.push(format!("lyapunov_pathwise:traj={id}:t={}", rep.rows[i].t));
        }
        pathwise.push(rep);
    }
    let min_margin = pathwise.iter().map(|p| p.min_margin()).fold(f64::INFINITY, f64::min);
    r.set("n_traj", n);
    r.set_f("pathwise_tol", tol);
    r.set_f("pathwise_min_margin", min_margin);
    r.set_f("max_norm_H", max_norm);
    r.tables.push(("simulate".into(), table));
    Ok(SimulateOutcome {
        series,
        pathwise,
        report: r,
    })
}

/// Output of `couple`.
pub struct CoupleOutcome {
    pub series: Vec<Vec<CoupledState>>,
    pub rows: Vec<Vec<CouplingRow>>,
    pub lambda: f64,
    pub n_c: usize,
    pub overridden: bool,
    pub sync_fraction: f64,
    /// `E ∫₀ᵀ ‖u - v‖² dt` over pairs.
    pub mean_integral: f64,
    pub tv: TvBounds,
    pub sigma_inv_norm: f64,
    pub report: Report,
}

fn run_pairs<'a>(
    setup: &'a Setup,
    workers: usize,
    n: u64,
    lambda: f64,
    n_c: usize,
    overridden: bool,
    what: &str,
) -> Result<Vec<Vec<CoupledState>>> {
    let u0 = setup.initial(setup.cfg.initial.u0);
    let v0 = setup.initial(setup.cfg.initial.v0);
    setup.par_runs(workers, 0..n, what, |s, id| {
        let mut cs = s.coupled_state(&u0, &v0, lambda, n_c, setup.stream(id))?;
        cs.params_overridden = overridden;
        Ok(s.run_coupled(cs)?)
    })
}

pub fn couple(setup: &Setup, workers: usize) -> Result<CoupleOutcome> {
    let cfg = &setup.cfg;
    let n = cfg.noise.n_traj as u64;
    let (n_c, lambda, overridden) = setup.coupling_params()?;
    let series = run_pairs(setup, workers, n, lambda, n_c, overridden, "couple")?;

    let mut r = Report::new("couple");
    setup.base_summary(&mut r);
    let mut table = Table::new(&[
        "traj", "t", "norm_H", "norm_H2", "b", "acc_D2", "acc_dev", "acc_mart", "diff_norm", "bound_rhs",
        "acc_kl",
    ]);
    let inv = setup.forcing.operator_norm_inverse();
    let mut rows_all = Vec::with_capacity(series.len());
    let mut synced = 0usize;
    for (id, traj) in series.iter().enumerate() {
        let rows = coupling_bound_check(traj, cfg.coupling.c2, cfg.physics.period, cfg.numerics.dt);
        for (s, row) in traj.iter().zip(&rows) {
            let mut cells = vec![Cell::from(id)];
            cells.extend(state_cells(&s.u_traj));
            cells.extend([row.diff_norm.into(), row.bound_rhs().into(), s.acc_kl.into()]);
            table.push(cells);
            if !row.holds && !overridden {
                r.violations.push(format!("coupling_bound:traj={id}:t={}", row.t));
            }
            let kl_cap = 0.5 * (inv * lambda).powi(2) * s.acc_diff_sq;
            if s.acc_kl > kl_cap * (1.0 + 1e-9) + 1e-300 {
                r.violations.push(format!("kl_domination:traj={id}:t={}", row.t));
            }
        }
        if traj.last().is_some_and(|s| s.diff_norm() < cfg.coupling.sync_threshold) {
            synced += 1;
        }
        rows_all.push(rows);
    }
    let finals: Vec<f64> = series.iter().filter_map(|t| t.last()).map(|s| s.acc_diff_sq).collect();
    let mean_integral = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
    let tv = pinsker_tv_bounds(mean_integral, inv, lambda);
    if !tv_in_range(&tv) {
        r.violations.push(format!("tv_exp_range:log_gap={}", tv.log_exp_gap));
    }
    let sync_fraction = synced as f64 / n as f64;
    r.set("n_traj", n);
    r.set_f("lambda", lambda);
    r.set("N_c", n_c);
    r.set("params_overridden", overridden);
    r.set_f("sync_threshold", cfg.coupling.sync_threshold);
    r.set_f("sync_fraction", sync_fraction);
    r.set_f("sigma_inv_norm", inv);
    r.set_f("mean_integral_diff_sq", mean_integral);
    r.set_f("tv_bound_sqrt", tv.bound_sqrt);
    r.set_f("tv_bound_exp", tv.bound_exp);
    r.set_f("tv_log_exp_gap", tv.log_exp_gap);
    r.tables.push(("couple".into(), table));
    Ok(CoupleOutcome {
        series,
        rows: rows_all,
        lambda,
        n_c,
        overridden,
        sync_fraction,
        mean_integral,
        tv,
        sigma_inv_norm: inv,
        report: r,
    })
}

/// `½ <= bound_exp < 1`, judged on `ln(1 - bound_exp)`.
///
/// The gap `½ e^{-x}` drops below one ulp of 1 once `x` exceeds about 36, so
/// `bound_exp` itself prints as 1 while the logarithm stays exact.
pub fn tv_in_range(tv: &TvBounds) -> bool {
    tv.log_exp_gap.is_finite() && tv.log_exp_gap <= 0.5f64.ln() && tv.bound_exp >= 0.5 && tv.bound_exp <= 1.0
}

/// Runs one trajectory and keeps the fields at the given step counts.
fn capture(solver: &mut KseSolver<'_>, u0: &SpectralField, stream: NoiseStream, steps: &[u64]) -> Result<Vec<SpectralField>> {
    let mut state = solver.initial_state(u0, stream)?;
    let mut out = Vec::with_capacity(steps.len());
    for &target in steps {
        while state.step < target {
            solver.step(&mut state)?;
        }
        out.push(state.u.clone());
    }
    Ok(out)
}

/// Output of `mix`.
pub struct MixOutcome {
    pub times: Vec<f64>,
    pub w_h: Vec<f64>,
    pub w_dk: Vec<f64>,
    pub w_dtilde: Vec<f64>,
    pub floor: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fit over the leading points above twice the floor.
    pub fit: std::result::Result<RateFit, String>,
    /// Fit over every point, for reference.
    pub fit_all: std::result::Result<RateFit, String>,
    pub monotone: bool,
    pub report: Report,
}

/// `n` step counts evenly spread over `[t0, t1]`, rounded to the step grid.
pub fn time_grid(t0: f64, t1: f64, n: usize, dt: f64) -> Vec<u64> {
    (0..n)
        .map(|j| {
            let t = t0 + (t1 - t0) * j as f64 / (n - 1) as f64;
            (t / dt).round() as u64
        })
        .collect()
}

fn assignment_value(a: &[SpectralField], b: &[SpectralField], d: Distance, p: MetricParams) -> (f64, f64) {
    let cost = CostMatrix::from_fn(a.len(), |i, j| d.eval(&a[i], &b[j], p));
    let e = estimate_from_costs(&cost);
    (e.value, e.stderr)
}

pub fn mix(setup: &Setup, workers: usize) -> Result<MixOutcome> {
    let cfg = &setup.cfg;
    let dt = cfg.numerics.dt;
    let n = cfg.mix.ensemble_size as u64;
    let t0 = cfg.mix.t_start.unwrap_or_else(|| t_threshold(dt));
    let t1 = cfg.mix.t_end.unwrap_or(4.0 * t0);
    let steps = time_grid(t0, t1, cfg.mix.n_times, dt);
    let times: Vec<f64> = steps.iter().map(|&k| k as f64 * dt).collect();
    let offset = match cfg.mix.pairing {
        Pairing::Common => 0,
        Pairing::Independent => n,
    };
    let u0 = setup.initial(cfg.initial.u0);
    let v0 = setup.initial(cfg.initial.v0);
    let a = setup.par_runs(workers, 0..n, "mix: first ensemble", |s, id| {
        capture(s, &u0, setup.stream(id), &steps)
    })?;
    let b = setup.par_runs(workers, offset..offset + n, "mix: second ensemble", |s, id| {
        capture(s, &v0, setup.stream(id), &steps)
    })?;
    let p = MetricParams::new(cfg.metric.k, cfg.metric.beta)?;
    let snapshots: Vec<(EnsembleSnapshot, EnsembleSnapshot)> = (0..steps.len())
        .map(|j| {
            let mut ea = EnsembleSnapshot::new(a.iter().map(|m| m[j].clone()).collect(), times[j]);
            ea.provenance = setup.provenance(0, n - 1);
            let mut eb = EnsembleSnapshot::new(b.iter().map(|m| m[j].clone()).collect(), times[j]);
            eb.provenance = setup.provenance(offset, offset + n - 1);
            (ea, eb)
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let per_time: Vec<[f64; 5]> = pool.install(|| {
        snapshots
            .par_iter()
            .map(|(ea, eb)| {
                let (wh, _) = assignment_value(&ea.members, &eb.members, Distance::Norm, p);
                let (wk, _) = assignment_value(&ea.members, &eb.members, Distance::DKBeta, p);
                let (wt, se) = assignment_value(&ea.members, &eb.members, Distance::DTilde, p);
                let (h1, h2) = ea.split_halves();
                let (floor, _) = assignment_value(&h1.members, &h2.members, Distance::DTilde, p);
                [wh, wk, wt, floor, se]
            })
            .collect()
    });
    let col = |i: usize| per_time.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let (w_h, w_dk, w_dtilde, floor, stderr) = (col(0), col(1), col(2), col(3), col(4));

    let above = w_dtilde
        .iter()
        .zip(&floor)
        .take_while(|(w, f)| **w > 2.0 * **f)
        .count();
    let fit = mixing_rate_fit(&times[..above], &w_dtilde[..above]).map_err(|e| e.to_string());
    let fit_all = mixing_rate_fit(&times, &w_dtilde).map_err(|e| e.to_string());
    let monotone = decreasing_within(&w_dtilde, &stderr, 2.0);

    let mut r = Report::new("mix");
    setup.base_summary(&mut r);
    r.set("ensemble_size", n);
    r.set("pairing", format!("{:?}", cfg.mix.pairing).to_lowercase());
    r.set_f("K", cfg.metric.k);
    r.set_f("beta", cfg.metric.beta);
    r.set_f("t_start", times[0]);
    r.set_f("t_end", *times.last().expect("at least two times"));
    r.set("fit_points", above);
    match &fit {
        Ok(f) => {
            r.set_f("c_emp", f.c_emp);
            r.set_f("r_squared", f.r_squared);
            if !(f.c_emp > 0.0) {
                r.violations.push(format!("mixing_rate_nonpositive:c_emp={}", f.c_emp));
            }
            if !(f.r_squared >= 0.9) {
                r.violations.push(format!("mixing_fit_poor:r_squared={}", f.r_squared));
            }
        }
        Err(e) => {
            r.set("c_emp", "none");
            r.set("r_squared", "none");
            r.set("fit_status", e);
            r.violations.push(format!("mixing_fit_unavailable:points_above_floor={above}"));
        }
    }
    if let Ok(f) = &fit_all {
        r.set_f("c_emp_all_points", f.c_emp);
        r.set_f("r_squared_all_points", f.r_squared);
    }
    r.set("monotone_within_2se", monotone);
    if !monotone {
        r.violations.push("mixing_not_monotone".into());
    }
    theory_summary(setup, &mut r);

    let mut table = Table::new(&["t", "W_H", "W_dK", "W_dtilde", "floor", "stderr"]);
    for j in 0..times.len() {
        table.push(vec![
            times[j].into(),
            w_h[j].into(),
            w_dk[j].into(),
            w_dtilde[j].into(),
            floor[j].into(),
            stderr[j].into(),
        ]);
    }
    r.tables.push(("mix".into(), table));
    Ok(MixOutcome {
        times,
        w_h,
        w_dk,
        w_dtilde,
        floor,
        stderr,
        fit,
        fit_all,
        monotone,
        report: r,
    })
}

/// Rate ingredients for the current config.
pub fn rate_inputs(setup: &Setup) -> Result<RateInputs> {
    let cfg = &setup.cfg;
    let (n_c, lambda, _) = setup.coupling_params()?;
    Ok(RateInputs {
        beta: cfg.metric.beta,
        gamma: cfg.physics.gamma,
        period: cfg.physics.period,
        c2: cfg.coupling.c2,
        k: cfg.metric.k,
        c0: setup.energy.c0,
        c1: setup.energy.c1,
        radius: cfg.lyapunov.radius,
        sigma_inv_norm: setup.forcing.operator_norm_inverse(),
        lambda,
        n_c,
        dt: cfg.numerics.dt,
        sigma_hs_sq_doubled: setup.forcing.hs_norm_sq_doubled(),
    })
}

fn theory_summary(setup: &Setup, r: &mut Report) -> Option<RateConstants> {
    let inputs = match rate_inputs(setup) {
        Ok(i) => i,
        Err(e) => {
            r.set("rates_admissible", false);
            r.set("rates_status", e);
            return None;
        }
    };
    r.set_f("rate_bracket", kse_core::diagnostics::rate_bracket(&inputs));
    r.set_f("T_threshold", t_threshold(inputs.dt));
    match theoretical_rates(&inputs) {
        Ok(rc) => {
            r.set("rates_admissible", true);
            r.set_f("r1_rate", rc.r1_rate);
            r.set_f("log_r1_prefactor", rc.log_r1_prefactor);
            r.set_f("r1_at_threshold", rc.r1(rc.t_threshold));
            r.set_f("log_contract_const", rc.log_contract_const);
            r.set_f("alpha", rc.alpha_contract);
            r.set_f("log_epsilon", rc.log_epsilon);
            r.set_f("epsilon", rc.epsilon_small);
            r.set("beta_small", rc.beta_small);
            Some(rc)
        }
        Err(e) => {
            r.set("rates_admissible", false);
            r.set("rates_status", e);
            None
        }
    }
}

/// Output of `lyapunov`.
pub struct LyapunovOutcome {
    pub times: Vec<f64>,
    pub exp_moment: Vec<LogMoment>,
    pub exp_log_rhs: Vec<f64>,
    pub d2_moment: Vec<LogMoment>,
    pub d2_log_rhs: Vec<f64>,
    pub pathwise: Vec<LyapunovReport>,
    pub decay: std::result::Result<DecayFit, String>,
    pub rates: Option<RateConstants>,
    pub report: Report,
}

pub fn lyapunov(setup: &Setup, workers: usize) -> Result<LyapunovOutcome> {
    let cfg = &setup.cfg;
    let (beta, gamma) = (cfg.metric.beta, cfg.physics.gamma);
    let (c0, c1) = (setup.energy.c0, setup.energy.c1);
    let n = cfg.lyapunov.ensemble_size as u64;
    let u0 = setup.initial(cfg.initial.u0);
    let u0_sq = u0.sobolev_norm_sq(0);
    let series = setup.par_runs(workers, 0..n, "lyapunov: ensemble", |s, id| Ok(s.run(&u0, setup.stream(id))?))?;
    let tol = cfg.lyapunov.tol_dt * cfg.numerics.dt;
    let pathwise: Vec<LyapunovReport> = series
        .iter()
        .map(|t| lyapunov_pathwise_check(t, gamma, c0, c1, tol))
        .collect();

    let pairs_n = cfg.lyapunov.coupled_pairs as u64;
    let (n_c, lambda, overridden) = setup.coupling_params()?;
    let pairs = if pairs_n > 0 {
        run_pairs(setup, workers, pairs_n, lambda, n_c, overridden, "lyapunov: coupled pairs")?
    } else {
        vec![]
    };
    let pair_rows: Vec<Vec<CouplingRow>> = pairs
        .iter()
        .map(|t| coupling_bound_check(t, cfg.coupling.c2, cfg.physics.period, cfg.numerics.dt))
        .collect();

    let mut r = Report::new("lyapunov");
    setup.base_summary(&mut r);
    let rates = theory_summary(setup, &mut r);
    let inv = setup.forcing.operator_norm_inverse();

    let n_times = series[0].len();
    let mut table = Table::new(&[
        "t",
        "lyap_lhs",
        "lyap_rhs",
        "d2_log_upper",
        "d2_log_rhs",
        "exp_log_upper",
        "exp_log_rhs",
        "coupling_log_diff_sq",
        "coupling_log_bound_sq",
        "tv_bound_sqrt",
        "tv_bound_exp",
        "theta_mean",
        "theta_log_bound",
    ]);
    let (mut times, mut exp_moment, mut exp_log_rhs, mut d2_moment, mut d2_log_rhs) =
        (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n_times {
        let t = series[0][i].t;
        let members: Vec<SpectralField> = series.iter().map(|s| s[i].u.clone()).collect();
        let em = exp_moment_estimate(&members, beta)?;
        let em_rhs = log_moment_bound(beta, c0, c1, u0_sq, t);
        let acc: Vec<f64> = series.iter().map(|s| s[i].acc_d2).collect();
        let dm = integrated_d2_exp_moment(&acc, beta, gamma)?;
        let dm_rhs = log_integrated_d2_bound(beta, c0, c1, u0_sq, t);
        if em.log_upper > em_rhs {
            r.violations.push(format!("exp_moment:t={t}"));
        }
        if dm.log_upper > dm_rhs {
            r.violations.push(format!("integrated_d2_moment:t={t}"));
        }
        let worst = pathwise
            .iter()
            .map(|p| p.rows[i])
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .expect("nonempty ensemble");

        let (mut log_diff, mut log_bound, mut tv_sqrt, mut tv_exp) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        let (mut theta_mean, mut theta_bound) = (f64::NAN, f64::NAN);
        if !pairs.is_empty() {
            let worst_pair = pair_rows
                .iter()
                .map(|rows| rows[i])
                .max_by(|a, b| {
                    (2.0 * a.diff_norm.ln() - a.log_bound_sq).total_cmp(&(2.0 * b.diff_norm.ln() - b.log_bound_sq))
                })
                .expect("nonempty pairs");
            log_diff = 2.0 * worst_pair.diff_norm.ln();
            log_bound = worst_pair.log_bound_sq;
            for (id, rows) in pair_rows.iter().enumerate() {
                if !rows[i].holds && !overridden {
                    r.violations.push(format!("coupling_bound:pair={id}:t={t}"));
                }
            }
            let mean = pairs.iter().map(|p| p[i].acc_diff_sq).sum::<f64>() / pairs.len() as f64;
            let tv = pinsker_tv_bounds(mean, inv, lambda);
            tv_sqrt = tv.bound_sqrt;
            tv_exp = tv.bound_exp;
            if !tv_in_range(&tv) {
                r.violations.push(format!("tv_exp_range:t={t}"));
            }
            if let Some(rc) = &rates {
                let fields: Vec<(SpectralField, SpectralField)> =
                    pairs.iter().map(|p| (p[i].u().clone(), p[i].v.clone())).collect();
                let (m, se) = kse_core::diagnostics::coupled_theta_decay(&fields, beta)?;
                theta_mean = m;
                theta_bound = log_theta_bound(rc, t, pairs[0][0].u(), &pairs[0][0].v);
                if t >= rc.t_threshold && (m + 2.0 * se).ln() > theta_bound {
                    r.violations.push(format!("theta_decay:t={t}"));
                }
            }
        }
        table.push(vec![
            t.into(),
            worst.lhs.into(),
            worst.rhs.into(),
            dm.log_upper.into(),
            dm_rhs.into(),
            em.log_upper.into(),
            em_rhs.into(),
            log_diff.into(),
            log_bound.into(),
            tv_sqrt.into(),
            tv_exp.into(),
            theta_mean.into(),
            theta_bound.into(),
        ]);
        times.push(t);
        exp_moment.push(em);
        exp_log_rhs.push(em_rhs);
        d2_moment.push(dm);
        d2_log_rhs.push(dm_rhs);
    }
    for (id, p) in pathwise.iter().enumerate() {
        for &i in &p.violations {
            r.violations.push(format!("lyapunov_pathwise:traj={id}:t={}", p.rows[i].t));
        }
    }

    let (ft, fv): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&exp_moment)
        .filter(|(t, _)| **t >= cfg.lyapunov.fit_start)
        .map(|(t, m)| (*t, m.mean()))
        .unzip();
    let decay = lyapunov_decay_fit(&ft, &fv, (beta * u0_sq).exp()).map_err(|e| e.to_string());
    match &decay {
        Ok(d) => {
            r.set_f("decay_c_fit", d.c_fit);
            r.set_f("decay_C", d.c_const);
        }
        Err(e) => r.set("decay_status", e),
    }

    let xs: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
    let ts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    let mut lemma_points = 0usize;
    for &lc1 in &[0.5, 1.0, 2.0, 10.0] {
        for &lc2 in &[1.0, 2.0, 8.0] {
            for &la in &[0.25, 0.5, 1.0, 2.0] {
                match scalar_moment_lemma_check(lc1, lc2, la, &xs, &ts) {
                    Some(k) => lemma_points += k,
                    None => r
                        .violations
                        .push(format!("scalar_moment_lemma:c1={lc1}:c2={lc2}:a={la}")),
                }
            }
        }
    }
    r.set("ensemble_size", n);
    r.set("coupled_pairs", pairs_n);
    r.set_f("lambda", lambda);
    r.set("N_c", n_c);
    r.set_f("pathwise_tol", tol);
    r.set_f(
        "pathwise_min_margin",
        pathwise.iter().map(|p| p.min_margin()).fold(f64::INFINITY, f64::min),
    );
    r.set("scalar_lemma_points", lemma_points);
    r.tables.push(("lyapunov".into(), table));
    Ok(LyapunovOutcome {
        times,
        exp_moment,
        exp_log_rhs,
        d2_moment,
        d2_log_rhs,
        pathwise,
        decay,
        rates,
        report: r,
    })
}

/// A random trigonometric polynomial with at most `max_modes` modes and a random decay.
pub fn random_trig(spec: TorusSpec, max_modes: usize, rng: &mut ChaCha8Rng) -> SpectralField {
    let m = rng.random_range(1..=max_modes);
    let decay = [0.0, 1.0, 2.0][rng.random_range(0..3)];
    let terms: Vec<(usize, f64, f64)> = (1..=m)
        .map(|k| {
            let w = (k as f64).powf(-decay);
            let s: f64 = rng.sample(StandardNormal);
            let c: f64 = rng.sample(StandardNormal);
            (k, w * s, w * c)
        })
        .collect();
    SpectralField::from_trig(spec, &terms).expect("grid resolves the requested modes")
}

/// Output of `verify-phi`.
pub struct VerifyPhiOutcome {
    pub norm_h2: Vec<f64>,
    pub margin: Vec<f64>,
    /// `min margin / (1 + ‖u‖²_{H²})`.
    pub min_scaled_margin: f64,
    pub report: Report,
}

pub fn verify_phi(cfg: &ExperimentConfig, workers: usize) -> Result<VerifyPhiOutcome> {
    let (period, gamma) = (cfg.physics.period, cfg.physics.gamma);
    let max_modes = cfg.checks.phi_max_modes;
    let grid = (2 * max_modes + 4).max(cfg.numerics.n_grid).next_multiple_of(2);
    let spec = TorusSpec::new(period, grid)?;
    let phi = solver_profile(period, gamma).context("phi_builder: building the profile")?;
    let g = 0.5 * gamma;
    let n = cfg.checks.phi_samples;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rows: Vec<(f64, f64)> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
                rng.set_stream(id);
                let u = random_trig(spec, max_modes, &mut rng);
                let b = rng.random_range(0.0..2.0 * period);
                let m = phi
                    .general_coercivity_margin(&u, b, g)
                    .with_context(|| format!("verify-phi: sample {id}"))?;
                Ok((u.sobolev_norm_sq(2), m))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut r = Report::new("verify_phi");
    r.set("config_hash", cfg.hash());
    r.set("seed", cfg.noise.seed);
    r.set_f("L", period);
    r.set_f("gamma", gamma);
    r.set("phi_M", phi.cutoff_index());
    r.set("samples", n);
    r.set("max_modes", max_modes);
    let mut table = Table::new(&["sample_id", "norm_H2", "margin"]);
    let mut min_margin = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    for (id, &(h2, m)) in rows.iter().enumerate() {
        table.push(vec![id.into(), h2.sqrt().into(), m.into()]);
        min_margin = min_margin.min(m);
        min_scaled = min_scaled.min(m / (1.0 + h2));
        if m < -1e-8 * (1.0 + h2) {
            r.violations.push(format!("coercivity:sample={id}:margin={m}"));
        }
    }
    r.set_f("min_margin", min_margin);
    r.set_f("min_scaled_margin", min_scaled);
    r.tables.push(("verify_phi".into(), table));
    Ok(VerifyPhiOutcome {
        norm_h2: rows.iter().map(|r| r.0.sqrt()).collect(),
        margin: rows.iter().map(|r| r.1).collect(),
        min_scaled_margin: min_scaled,
        report: r,
    })
}

/// A random field for the metric checks: a spread of sizes, sometimes a small
/// perturbation of `near` so that the distances do not all saturate.
fn metric_sample(spec: TorusSpec, near: Option<&SpectralField>, rng: &mut ChaCha8Rng) -> SpectralField {
    let size = 30.0 * rng.random::<f64>();
    let base = random_trig(spec, 8, rng);
    let base = if base.norm() > 0.0 { base.scale(size / base.norm()) } else { base };
    match near {
        Some(u) if rng.random_bool(0.5) => {
            let eps = 10f64.powf(-5.0 * rng.random::<f64>());
            let dir = random_trig(spec, 8, rng);
            u.add(&dir.scale(eps / dir.norm().max(1e-300))).expect("same torus")
        }
        _ => base,
    }
}

/// Output of `verify-metrics`.
pub struct VerifyMetricsOutcome {
    pub min_defect: f64,
    pub indicator_violations: usize,
    pub symmetry_violations: usize,
    pub min_linf_margin: f64,
    pub report: Report,
}

pub fn verify_metrics(cfg: &ExperimentConfig, workers: usize) -> Result<VerifyMetricsOutcome> {
    let spec = cfg.spec()?;
    let p = MetricParams::new(cfg.metric.k, cfg.metric.beta)?;
    let n = cfg.checks.metric_samples;
    let sqrt_l = cfg.physics.period.sqrt();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    // (defect, d, indicator, d_tilde, asymmetry, linf margin)
    let rows: Vec<[f64; 6]> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
                rng.set_stream(id);
                let u = metric_sample(spec, None, &mut rng);
                let v = metric_sample(spec, Some(&u), &mut rng);
                let z = if rng.random_bool(0.5) {
                    metric_sample(spec, Some(&u), &mut rng)
                } else {
                    metric_sample(spec, Some(&v), &mut rng)
                };
                let defect = triangle_defect(&u, &v, &z, p);
                let d = d_k_beta(&u, &v, p);
                let indicator = if u == v { 0.0 } else { 1.0 };
                let dt = d_tilde(&u, &v, p);
                let asym = (d - d_k_beta(&v, &u, p)).abs().max((dt - d_tilde(&v, &u, p)).abs());
                let linf = sqrt_l * u.derivative(1).norm() - u.linf_norm();
                [defect, d, indicator, dt, asym, linf]
            })
            .collect()
    });
    let mut r = Report::new("verify_metrics");
    r.set("config_hash", cfg.hash());
    r.set("seed", cfg.noise.seed);
    r.set_f("K", p.k);
    r.set_f("beta", p.beta);
    r.set("samples", n);
    let mut table = Table::new(&["sample_id", "defect", "d_K_beta", "indicator", "d_tilde", "linf_margin"]);
    let (mut min_defect, mut min_linf) = (f64::INFINITY, f64::INFINITY);
    let (mut ind_v, mut sym_v) = (0, 0);
    for (id, row) in rows.iter().enumerate() {
        let [defect, d, ind, dt, asym, linf] = *row;
        table.push(vec![id.into(), defect.into(), d.into(), ind.into(), dt.into(), linf.into()]);
        min_defect = min_defect.min(defect);
        min_linf = min_linf.min(linf);
        if defect < -1e-12 {
            r.violations.push(format!("triangle_defect:sample={id}:value={defect}"));
        }
        if d > ind {
            ind_v += 1;
            r.violations.push(format!("indicator_domination:sample={id}"));
        }
        if asym != 0.0 {
            sym_v += 1;
            r.violations.push(format!("symmetry:sample={id}"));
        }
        if linf < -1e-9 {
            r.violations.push(format!("linf_embedding:sample={id}:margin={linf}"));
        }
    }
    // identity of indiscernibles on the first ensemble member
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed ^ 0x5eed);
    let u = metric_sample(spec, None, &mut rng);
    if d_k_beta(&u, &u, p) != 0.0 || d_tilde(&u, &u, p) != 0.0 || theta(&u, &u, p.beta) != 0.0 {
        r.violations.push("identity:self_distance_nonzero".into());
    }
    r.set_f("min_triangle_defect", min_defect);
    r.set("indicator_violations", ind_v);
    r.set("symmetry_violations", sym_v);
    r.set_f("min_linf_margin", min_linf);
    r.tables.push(("verify_metrics".into(), table));
    Ok(VerifyMetricsOutcome {
        min_defect,
        indicator_violations: ind_v,
        symmetry_violations: sym_v,
        min_linf_margin: min_linf,
        report: r,
    })
}

/// Dispatches a subcommand by name.
pub fn run_named(name: &str, cfg: &ExperimentConfig) -> Result<Report> {
    let workers = cfg.output.workers;
    Ok(match name {
        "simulate" => simulate(&Setup::new(cfg.clone())?, workers)?.report,
        "couple" => couple(&Setup::new(cfg.clone())?, workers)?.report,
        "mix" => mix(&Setup::new(cfg.clone())?, workers)?.report,
        "lyapunov" => lyapunov(&Setup::new(cfg.clone())?, workers)?.report,
        "verify-phi" => verify_phi(cfg, workers)?.report,
        "verify-metrics" => verify_metrics(cfg, workers)?.report,
        other => return Err(anyhow!("unknown subcommand `{other}`")),
    })
}
