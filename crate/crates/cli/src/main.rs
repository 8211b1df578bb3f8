use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use kse_cli::config::parse_with_overrides;
use kse_cli::experiments::run_named;

/// Environment variable that overrides the configured output directory.
const OUTPUT_ENV: &str = "KSE_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "kse", version, about = "Stochastic Kuramoto-Sivashinsky experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Independent trajectories with the pathwise energy check.
    Simulate,
    /// Leader and nudged follower pairs with the contraction check.
    Couple,
    /// Empirical Wasserstein distances between two evolving ensembles.
    Mix,
    /// Moment bounds, coupling bounds and rate constants.
    Lyapunov,
    /// Coercivity margins of the shifted profile on random fields.
    VerifyPhi,
    /// Triangle and domination properties of the distance functions.
    VerifyMetrics,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Mix => "mix",
            Command::Lyapunov => "lyapunov",
            Command::VerifyPhi => "verify-phi",
            Command::VerifyMetrics => "verify-metrics",
        }
    }
}

/// Flags mirror config keys and take precedence over the file.
#[derive(clap::Args, Debug, Default)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true, allow_negative_numbers = true)]
    config: Option<PathBuf>,
    /// Generic override, `section.key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, allow_negative_numbers = true)]
    set: Vec<String>,
    #[arg(long = "L", global = true, allow_negative_numbers = true)]
    period: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    n_grid: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    scheme: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    t_final: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    record_stride: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    seed: Option<u64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    n_traj: Option<usize>,
    #[arg(long = "K", global = true, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long = "C2", global = true, allow_negative_numbers = true)]
    c2: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long = "N-c", global = true, allow_negative_numbers = true)]
    n_c: Option<usize>,
    /// `zero` or `big`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    u0: Option<String>,
    /// `zero` or `big`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    v0: Option<String>,
    /// Ensemble size for `mix` and `lyapunov`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    ensemble_size: Option<usize>,
    /// Sample count for `verify-phi` and `verify-metrics`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    samples: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    n_times: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    t_start: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// `common` or `independent`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pairing: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    output_dir: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    workers: Option<usize>,
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl Common {
    fn overrides(&self, command: Command) -> Result<Vec<(String, String)>> {
        let mut out = vec![];
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let num = |v: &Option<f64>| v.map(|x| format!("{x:?}"));
        put("physics.L", num(&self.period));
        put("physics.gamma", num(&self.gamma));
        put("numerics.n_grid", self.n_grid.map(|v| v.to_string()));
        put("numerics.dt", num(&self.dt));
        put("numerics.scheme", self.scheme.as_deref().map(quoted));
        put("numerics.t_final", num(&self.t_final));
        put("numerics.record_stride", self.record_stride.map(|v| v.to_string()));
        put("noise.seed", self.seed.map(|v| v.to_string()));
        put("noise.n_traj", self.n_traj.map(|v| v.to_string()));
        put("metric.K", num(&self.k));
        put("metric.beta", num(&self.beta));
        put("coupling.C2", num(&self.c2));
        put("coupling.lambda", num(&self.lambda));
        put("coupling.N_c", self.n_c.map(|v| v.to_string()));
        put("initial.u0", self.u0.as_deref().map(quoted));
        put("initial.v0", self.v0.as_deref().map(quoted));
        let ensemble_key = match command {
            Command::Lyapunov => "lyapunov.ensemble_size",
            _ => "mix.ensemble_size",
        };
        put(ensemble_key, self.ensemble_size.map(|v| v.to_string()));
        let samples_key = match command {
            Command::VerifyMetrics => "checks.metric_samples",
            _ => "checks.phi_samples",
        };
        put(samples_key, self.samples.map(|v| v.to_string()));
        put("mix.n_times", self.n_times.map(|v| v.to_string()));
        put("mix.t_start", num(&self.t_start));
        put("mix.t_end", num(&self.t_end));
        put("mix.pairing", self.pairing.as_deref().map(quoted));
        let env_dir = std::env::var(OUTPUT_ENV).ok();
        put("output.dir", self.output_dir.clone().or(env_dir).as_deref().map(quoted));
        put("output.workers", self.workers.map(|v| v.to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let text = match &cli.common.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let overrides = cli.common.overrides(cli.command)?;
    let cfg = parse_with_overrides(&text, &overrides).map_err(|e| {
        let source = cli
            .common
            .config
            .as_ref()
            .map_or("<defaults>".to_string(), |p| p.display().to_string());
        anyhow::anyhow!("{source}: {e}")
    })?;
    let name = cli.command.name();
    let report = run_named(name, &cfg)?;
    let dir = PathBuf::from(&cfg.output.dir);
    let echo = format!("# config_hash = {}\n{}", cfg.hash(), cfg.emit());
    report.write(&dir, &echo)?;
    print!("{}", report.summary_text());
    if !report.passed() {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
