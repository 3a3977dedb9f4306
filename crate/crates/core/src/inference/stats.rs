//! Max-t statistic over many moment inequalities and its critical values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Moments whose standard deviation falls below this are dropped.
pub const MIN_SIGMA: f64 = 1e-10;

/// Which tail of `sqrt(n) mu / sigma` counts as evidence against `theta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `max_j sqrt(n) (-mu_j) / sigma_j`: large when some `E[m g] >= 0`
    /// fails.
    #[default]
    Violation,
    /// `max_j sqrt(n) mu_j / sigma_j`, as the statistic is sometimes
    /// printed. Rejects parameters whose inequalities hold strictly.
    Literal,
}

impl SignConvention {
    pub fn factor(self) -> f64 {
        match self {
            SignConvention::Violation => -1.0,
            SignConvention::Literal => 1.0,
        }
    }
}

/// Law of the bootstrap multipliers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    #[default]
    Gaussian,
    Rademacher,
}

/// Multipliers of replicate `b`; a function of `(seed, b)` only.
pub fn multipliers(seed: u64, b: u64, n: usize, kind: Multiplier) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    (0..n)
        .map(|_| match kind {
            Multiplier::Gaussian => rng.sample(StandardNormal),
            Multiplier::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect()
}

/// `max_j sign * sqrt(n) mu_j / sigma_j` over moments with
/// `sigma_j >= MIN_SIGMA`.
pub fn test_statistic(mu: &[f64], sigma: &[f64], n: usize, sign: SignConvention) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            what: "moment standard deviations",
            expected: mu.len(),
            actual: sigma.len(),
        });
    }
    let root = (n as f64).sqrt();
    mu.iter()
        .zip(sigma)
        .filter(|(_, &s)| s >= MIN_SIGMA)
        .map(|(&m, &s)| sign.factor() * root * m / s)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .ok_or_else(|| Error::invalid("moments", "no moment has positive variance"))
}

/// `q / sqrt(1 - q^2 / n)` with `q = Phi^{-1}(1 - pi / p)`.
pub fn critical_value_sn(pi: f64, p: usize, n: usize) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid("significance level", format!("{pi} not in (0, 1)")));
    }
    if p == 0 {
        return Err(Error::invalid("moment count", "at least one moment is required"));
    }
    let q = Normal::standard().inverse_cdf(1.0 - pi / p as f64);
    let q2 = q * q;
    if q2 >= n as f64 {
        return Err(Error::InfeasibleSample { quantile_sq: q2, n });
    }
    Ok(q / (1.0 - q2 / n as f64).sqrt())
}

/// Order statistic `ceil(level * B)` of `values` (1-based).
pub fn empirical_quantile(values: &mut [f64], level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let b = values.len();
    let k = ((level * b as f64).ceil() as usize).clamp(1, b);
    values[k - 1]
}

/// Per-moment mean and `1/n` standard deviation of `values[i][j]`.
pub fn mean_and_sd(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() as f64;
    let p = values.first().map_or(0, |r| r.len());
    let mut mu = vec![0.0; p];
    for row in values {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; p];
    for row in values {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mu) {
            *s += (v - m).powi(2) / n;
        }
    }
    (mu, var.into_iter().map(f64::sqrt).collect())
}

/// Settings of the multiplier bootstrap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub multiplier: Multiplier,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            draws: 500,
            seed: 0,
            multiplier: Multiplier::Gaussian,
        }
    }
}

impl BootstrapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 100 {
            return Err(Error::invalid("bootstrap draws", format!("{} < 100", self.draws)));
        }
        Ok(())
    }
}

/// Multiplier-bootstrap critical value from the `n x p` matrix of
/// `m(W_i, v_j, theta) g_j(Z_i)`: the `1 - pi` quantile over replicates of
/// `max_j sign * sqrt(n) (n^{-1} sum_i e_i (y_ij - mu_j)) / sigma_j`.
pub fn bootstrap_critical_value(
    values: &[Vec<f64>],
    pi: f64,
    opts: &BootstrapOptions,
    sign: SignConvention,
) -> Result<f64> {
    opts.validate()?;
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid("significance level", format!("{pi} not in (0, 1)")));
    }
    let n = values.len();
    let (mu, sd) = mean_and_sd(values);
    let kept: Vec<usize> = (0..mu.len()).filter(|&j| sd[j] >= MIN_SIGMA).collect();
    if kept.is_empty() {
        return Err(Error::invalid("moments", "no moment has positive variance"));
    }
    let root = (n as f64).sqrt();
    let mut stats: Vec<f64> = (0..opts.draws as u64)
        .into_par_iter()
        .map(|b| {
            let e = multipliers(opts.seed, b, n, opts.multiplier);
            kept.iter()
                .map(|&j| {
                    let s: f64 = values.iter().zip(&e).map(|(row, ei)| ei * (row[j] - mu[j])).sum();
                    sign.factor() * root * (s / n as f64) / sd[j]
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(empirical_quantile(&mut stats, 1.0 - pi))
}
