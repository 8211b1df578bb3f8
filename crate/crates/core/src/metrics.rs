//! Distance-like functions on `H`, empirical Wasserstein estimates between
//! ensembles, and exponential rate fits.

use crate::assignment::{self, CostMatrix};
use crate::error::{KseError, Result};
use crate::spectral::SpectralField;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricParams {
    pub k: f64,
    pub beta: f64,
}

impl MetricParams {
    pub fn new(k: f64, beta: f64) -> Result<Self> {
        if !(k > 0.0 && beta > 0.0 && k.is_finite() && beta.is_finite()) {
            return Err(KseError::InvalidParameter(format!(
                "metric parameters must be positive, got K={k}, beta={beta}"
            )));
        }
        Ok(Self { k, beta })
    }
}

fn diff_norm(u: &SpectralField, v: &SpectralField) -> f64 {
    let s: f64 = u
        .coeffs()
        .iter()
        .zip(v.coeffs())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    (2.0 * s).sqrt()
}

/// `θ_β(u, v) = ‖u - v‖ e^{β‖u‖²}`.
pub fn theta(u: &SpectralField, v: &SpectralField, beta: f64) -> f64 {
    diff_norm(u, v) * (beta * u.sobolev_norm_sq(0)).exp()
}

/// `d_{K,β}(u, v) = min(K θ_β(u, v), K θ_β(v, u), 1)`.
pub fn d_k_beta(u: &SpectralField, v: &SpectralField, p: MetricParams) -> f64 {
    let d = diff_norm(u, v);
    let w = (p.beta * u.sobolev_norm_sq(0).min(v.sobolev_norm_sq(0))).exp();
    (p.k * d * w).min(1.0)
}

/// `d̃_{K,β}(u, v) = sqrt(d_{K,β}(u, v) (1 + e^{β‖u‖²} + e^{β‖v‖²}))`.
pub fn d_tilde(u: &SpectralField, v: &SpectralField, p: MetricParams) -> f64 {
    // grouped so that swapping u and v gives the same bits
    let weight = 1.0 + ((p.beta * u.sobolev_norm_sq(0)).exp() + (p.beta * v.sobolev_norm_sq(0)).exp());
    (d_k_beta(u, v, p) * weight).sqrt()
}

/// `e^{2β/K²}[d_{K,2β}(u, z) + d_{K,2β}(z, v)] - d_{K,β}(u, v)`, nonnegative.
pub fn triangle_defect(u: &SpectralField, v: &SpectralField, z: &SpectralField, p: MetricParams) -> f64 {
    let doubled = MetricParams {
        k: p.k,
        beta: 2.0 * p.beta,
    };
    (2.0 * p.beta / (p.k * p.k)).exp() * (d_k_beta(u, z, doubled) + d_k_beta(z, v, doubled))
        - d_k_beta(u, v, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Norm,
    DKBeta,
    DTilde,
}

impl Distance {
    pub fn eval(&self, u: &SpectralField, v: &SpectralField, p: MetricParams) -> f64 {
        match self {
            Distance::Norm => diff_norm(u, v),
            Distance::DKBeta => d_k_beta(u, v, p),
            Distance::DTilde => d_tilde(u, v, p),
        }
    }
}

/// Where an ensemble came from.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub first_stream: u64,
    pub last_stream: u64,
    pub seed: u64,
    pub config_hash: String,
}

/// Ensemble members at a common time.
#[derive(Clone, Debug)]
pub struct EnsembleSnapshot {
    pub members: Vec<SpectralField>,
    pub t: f64,
    pub provenance: Provenance,
}

impl EnsembleSnapshot {
    pub fn new(members: Vec<SpectralField>, t: f64) -> Self {
        Self {
            members,
            t,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// First and second halves of the members.
    pub fn split_halves(&self) -> (EnsembleSnapshot, EnsembleSnapshot) {
        let h = self.members.len() / 2;
        let first = EnsembleSnapshot {
            members: self.members[..h].to_vec(),
            t: self.t,
            provenance: self.provenance.clone(),
        };
        let second = EnsembleSnapshot {
            members: self.members[h..2 * h].to_vec(),
            t: self.t,
            provenance: self.provenance.clone(),
        };
        (first, second)
    }
}

/// Optimal matching between two equal-size ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct WassersteinEstimate {
    /// Mean matched distance.
    pub value: f64,
    /// Standard error of the matched distances.
    pub stderr: f64,
    pub assignment: Vec<usize>,
}

/// Empirical `W_d` between two ensembles of the same size.
pub fn wasserstein_estimate(
    a: &EnsembleSnapshot,
    b: &EnsembleSnapshot,
    dist: Distance,
    p: MetricParams,
) -> Result<WassersteinEstimate> {
    if a.len() != b.len() {
        return Err(KseError::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() > 4096 {
        return Err(KseError::InvalidParameter(format!(
            "ensembles of {} members exceed the 4096 limit",
            a.len()
        )));
    }
    let cost = CostMatrix::from_fn(a.len(), |i, j| dist.eval(&a.members[i], &b.members[j], p));
    Ok(estimate_from_costs(&cost))
}

/// Wasserstein estimate from a precomputed distance matrix.
pub fn estimate_from_costs(cost: &CostMatrix) -> WassersteinEstimate {
    let n = cost.size();
    if n == 0 {
        return WassersteinEstimate {
            value: 0.0,
            stderr: 0.0,
            assignment: vec![],
        };
    }
    let sol = assignment::solve(cost);
    let matched: Vec<f64> = sol
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .collect();
    let (mean, stderr) = mean_and_stderr(&matched);
    WassersteinEstimate {
        value: mean,
        stderr,
        assignment: sol.assignment,
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Log-linear fit of a decaying series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub c_emp: f64,
    pub r_squared: f64,
    pub intercept: f64,
}

/// Least-squares slope of `ln W` against `t`, with `c_emp = -slope`.
pub fn mixing_rate_fit(times: &[f64], w: &[f64]) -> Result<RateFit> {
    if times.len() != w.len() {
        return Err(KseError::SizeMismatch {
            left: times.len(),
            right: w.len(),
        });
    }
    if times.len() < 6 {
        return Err(KseError::InsufficientData(format!(
            "rate fit needs at least 6 points, got {}",
            times.len()
        )));
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(KseError::NonpositiveDistance { index, value });
    }
    let y: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = times.iter().zip(&y).map(|(t, v)| (t - tm) * (v - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    if sxx == 0.0 {
        return Err(KseError::InsufficientData("all fit times coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let sse: f64 = times
            .iter()
            .zip(&y)
            .map(|(t, v)| (v - intercept - slope * t).powi(2))
            .sum();
        1.0 - sse / syy
    };
    Ok(RateFit {
        c_emp: -slope,
        r_squared,
        intercept,
    })
}

/// True when each value exceeds its predecessor by at most `k` combined standard errors.
pub fn decreasing_within(values: &[f64], stderr: &[f64], k: f64) -> bool {
    values
        .windows(2)
        .zip(stderr.windows(2))
        .all(|(v, s)| v[1] <= v[0] + k * (s[0] * s[0] + s[1] * s[1]).sqrt())
}
