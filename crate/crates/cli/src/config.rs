//! Experiment configuration: TOML text in, validated config out.

use std::fmt;

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kse_core::integrator::{Scheme, SolverConfig};
use kse_core::noise::{ForcingOperator, ForcingTerm, Phase};
use kse_core::TorusSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Etd1,
    Etdrk2,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Etd1 => Scheme::Etd1,
            SchemeName::Etdrk2 => Scheme::Etdrk2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseName {
    Sin,
    Cos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// The zero field.
    Zero,
    /// The fixed modes 1..=8 field scaled to `big_norm`.
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Member `i` of both ensembles is driven by noise stream `i`.
    Common,
    /// The two ensembles use disjoint noise streams.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    #[serde(rename = "L")]
    pub period: f64,
    pub gamma: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            period: 16.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub n_grid: usize,
    pub dt: f64,
    pub scheme: SchemeName,
    pub t_final: f64,
    pub record_stride: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            n_grid: 128,
            dt: 1e-3,
            scheme: SchemeName::Etdrk2,
            t_final: 50.0,
            record_stride: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub seed: u64,
    pub n_traj: usize,
    /// Run with the forcing switched off.
    pub deterministic: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_traj: 64,
            deterministic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingEntry {
    pub mode: usize,
    pub phase: PhaseName,
    pub amplitude: f64,
}

fn default_forcing() -> Vec<ForcingEntry> {
    (1..=4)
        .flat_map(|k| {
            [PhaseName::Sin, PhaseName::Cos].map(|phase| ForcingEntry {
                mode: k,
                phase,
                amplitude: 0.5,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    #[serde(rename = "K")]
    pub k: f64,
    pub beta: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { k: 100.0, beta: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Explicit nudging gain; overrides the selection rule when set with `n_c`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "N_c", skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    /// Threshold for counting a pair as synchronized at the final time.
    pub sync_threshold: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            c2: 1.0,
            lambda: None,
            n_c: None,
            sync_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub u0: InitialKind,
    pub v0: InitialKind,
    pub big_norm: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            u0: InitialKind::Zero,
            v0: InitialKind::Big,
            big_norm: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub ensemble_size: usize,
    pub n_times: usize,
    pub pairing: Pairing,
    /// Window start; defaults to the threshold time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    /// Window end; defaults to four times the threshold time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 256,
            n_times: 8,
            pairing: Pairing::Common,
            t_start: None,
            t_end: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    pub ensemble_size: usize,
    /// Pathwise tolerance in units of `dt`.
    pub tol_dt: f64,
    /// Radius `R` of the small set in the rate constants.
    pub radius: f64,
    /// Fit start time for the decay fit.
    pub fit_start: f64,
    /// Coupled pairs run alongside the ensemble.
    pub coupled_pairs: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 256,
            tol_dt: 10.0,
            radius: 1.0,
            fit_start: 0.0,
            coupled_pairs: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Random samples for `verify-phi`.
    pub phi_samples: usize,
    /// Highest mode of the random trigonometric polynomials.
    pub phi_max_modes: usize,
    /// Random samples for `verify-metrics`.
    pub metric_samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            phi_samples: 1000,
            phi_max_modes: 64,
            metric_samples: 10_000,
        }
    }
}

/// Where results go and how many workers run; neither affects the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub workers: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "kse-output".into(),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub physics: Physics,
    pub numerics: Numerics,
    pub noise: NoiseConfig,
    pub metric: MetricConfig,
    pub coupling: CouplingConfig,
    pub initial: InitialConfig,
    pub mix: MixConfig,
    pub lyapunov: LyapunovConfig,
    pub checks: CheckConfig,
    pub output: OutputConfig,
    #[serde(default = "default_forcing")]
    pub forcing: Vec<ForcingEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            physics: Physics::default(),
            numerics: Numerics::default(),
            noise: NoiseConfig::default(),
            metric: MetricConfig::default(),
            coupling: CouplingConfig::default(),
            initial: InitialConfig::default(),
            mix: MixConfig::default(),
            lyapunov: LyapunovConfig::default(),
            checks: CheckConfig::default(),
            output: OutputConfig::default(),
            forcing: default_forcing(),
        }
    }
}

/// A configuration error tied to a key and, when known, a line of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Finds the line defining `section.key` (or a top-level `key`).
fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let (section, key) = match path.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, path),
    };
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let matches_here = match (section, current.as_deref()) {
            (None, None) => lhs == key,
            (Some(s), Some(c)) => c == s && lhs == key,
            (Some(s), None) => lhs == format!("{s}.{key}"),
            // an unknown field is reported without its section
            (None, Some(_)) => lhs == key,
        };
        if matches_here {
            return Some(i + 1);
        }
    }
    None
}

/// Parses TOML text, fills defaults, and validates every key.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError {
        key: "<syntax>".into(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    from_table(table, text)
}

fn from_table(table: toml::Table, text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let message = e.message().to_string();
        let key = message
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "<value>".into());
        ConfigError {
            line: e
                .span()
                .map(|s| line_of_offset(text, s.start))
                .or_else(|| line_of_key(text, &key)),
            key,
            message,
        }
    })?;
    cfg.validate().map_err(|(key, message)| ConfigError {
        line: line_of_key(text, &key),
        key,
        message,
    })?;
    Ok(cfg)
}

/// Parses `text` and applies `section.key=value` overrides on top.
pub fn parse_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> std::result::Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError {
        key: "<syntax>".into(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    for (path, raw) in overrides {
        let value = parse_override_value(raw);
        let mut parts: Vec<&str> = path.split('.').collect();
        let last = parts.pop().expect("split yields at least one part");
        let mut cursor = &mut table;
        for p in parts {
            cursor = cursor
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError {
                    key: path.clone(),
                    line: None,
                    message: format!("`{p}` is not a section"),
                })?;
        }
        cursor.insert(last.to_string(), value);
    }
    from_table(table, text)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("probe table has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |k: &str, m: String| Err((k.to_string(), m));
        let pos = |k: &str, v: f64| -> std::result::Result<(), (String, String)> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                err(k, format!("must be positive and finite, got {v}"))
            }
        };
        pos("physics.L", self.physics.period)?;
        pos("physics.gamma", self.physics.gamma)?;
        pos("numerics.dt", self.numerics.dt)?;
        if self.numerics.dt > 0.1 {
            return err("numerics.dt", format!("must not exceed 0.1, got {}", self.numerics.dt));
        }
        if self.numerics.dt * 0.25 / self.physics.gamma > 0.5 {
            return err(
                "numerics.dt",
                "violates the stability guard dt / (4 gamma) <= 0.5".into(),
            );
        }
        if !(self.numerics.t_final >= 0.0 && self.numerics.t_final.is_finite()) {
            return err(
                "numerics.t_final",
                format!("must be nonnegative, got {}", self.numerics.t_final),
            );
        }
        if self.numerics.n_grid < 8 || self.numerics.n_grid % 2 != 0 {
            return err(
                "numerics.n_grid",
                format!("must be an even integer >= 8, got {}", self.numerics.n_grid),
            );
        }
        if self.numerics.record_stride == 0 {
            return err("numerics.record_stride", "must be at least 1".into());
        }
        if self.noise.n_traj == 0 {
            return err("noise.n_traj", "must be at least 1".into());
        }
        pos("metric.K", self.metric.k)?;
        pos("metric.beta", self.metric.beta)?;
        pos("coupling.C2", self.coupling.c2)?;
        pos("coupling.sync_threshold", self.coupling.sync_threshold)?;
        if let Some(l) = self.coupling.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return err("coupling.lambda", format!("must be nonnegative, got {l}"));
            }
        }
        if self.coupling.lambda.is_some() != self.coupling.n_c.is_some() {
            return err(
                "coupling.lambda",
                "lambda and N_c must be given together".into(),
            );
        }
        pos("initial.big_norm", self.initial.big_norm)?;
        if self.mix.ensemble_size < 2 || self.mix.ensemble_size > 4096 {
            return err(
                "mix.ensemble_size",
                format!("must lie in 2..=4096, got {}", self.mix.ensemble_size),
            );
        }
        if self.mix.n_times < 2 {
            return err("mix.n_times", "must be at least 2".into());
        }
        if let (Some(a), Some(b)) = (self.mix.t_start, self.mix.t_end) {
            if !(0.0 <= a && a < b) {
                return err("mix.t_start", "window must satisfy 0 <= t_start < t_end".into());
            }
        }
        if self.lyapunov.ensemble_size == 0 {
            return err("lyapunov.ensemble_size", "must be at least 1".into());
        }
        pos("lyapunov.tol_dt", self.lyapunov.tol_dt)?;
        pos("lyapunov.radius", self.lyapunov.radius)?;
        if self.checks.phi_max_modes == 0 {
            return err("checks.phi_max_modes", "must be at least 1".into());
        }
        if self.output.workers == 0 {
            return err("output.workers", "must be at least 1".into());
        }
        if self.forcing.is_empty() {
            return err("forcing", "at least one forcing entry is required".into());
        }
        let max_mode = (self.numerics.n_grid - 1) / 3;
        for f in &self.forcing {
            if f.mode == 0 || f.mode > max_mode {
                return err(
                    "forcing.mode",
                    format!("mode {} outside the resolved band 1..={max_mode}", f.mode),
                );
            }
            if !(f.amplitude != 0.0 && f.amplitude.is_finite()) {
                return err("forcing.amplitude", format!("must be nonzero, got {}", f.amplitude));
            }
        }
        Ok(())
    }

    /// Canonical TOML text with every default filled in.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text, leaving out the output section.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        hex::encode(Sha256::digest(c.emit().as_bytes()))
    }

    pub fn spec(&self) -> Result<TorusSpec> {
        Ok(TorusSpec::new(self.physics.period, self.numerics.n_grid)?)
    }

    pub fn forcing_operator(&self) -> Result<ForcingOperator> {
        let spec = self.spec()?;
        let terms: Vec<ForcingTerm> = self
            .forcing
            .iter()
            .map(|f| {
                ForcingTerm::new(
                    f.mode,
                    match f.phase {
                        PhaseName::Sin => Phase::Sin,
                        PhaseName::Cos => Phase::Cos,
                    },
                    f.amplitude,
                )
            })
            .collect();
        ForcingOperator::from_terms(spec, &terms).map_err(|e| anyhow!("forcing: {e}"))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.numerics.dt,
            scheme: self.numerics.scheme.into(),
            t_final: self.numerics.t_final,
            record_stride: self.numerics.record_stride,
            gamma: self.physics.gamma,
            nonlinear: true,
            stochastic: !self.noise.deterministic,
        }
    }
}
