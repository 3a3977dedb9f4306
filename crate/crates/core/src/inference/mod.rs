//! Finite-sample confidence sets for `theta`.
//!
//! The conditional inequalities are turned into `p_n` unconditional ones,
//! `E[m(W, v_j, theta) g_j(Z)] >= 0`, with `g_j` indicator instrument
//! functions. Each `theta` is tested with the max-t statistic
//! `T_n = max_j sqrt(n) (-mu_j) / sigma_j`, so large values indicate a
//! violated inequality, and kept when `T_n <= c`.

mod instruments;
mod stats;

pub use instruments::{
    build_instruments, transform_instruments, Cube, InstrumentFunction, InstrumentFunctionSet, InstrumentSpec,
    PairCells, DEFAULT_MIN_COUNT,
};
pub use stats::{
    bootstrap_critical_value, critical_value_sn, empirical_quantile, mean_and_sd, multipliers, test_statistic,
    BootstrapOptions, Multiplier, SignConvention, MIN_SIGMA,
};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridPoint, GridResult};
use crate::identified::{
    direction_terms, equilibrium_bounds, DirectionSet, ObjectInterval, SupportOptions, SupportProfile,
};
use crate::inversion::InversionOptions;
use crate::model::{Dataset, MarketObservation, MixingSpec, OutsideShareSet, ParamTheta, ThetaGrid};
use crate::shares::EquilibriumObject;

/// Ordered `(direction, instrument function)` pairs.
#[derive(Clone, Debug)]
pub struct MomentSystem {
    directions: DirectionSet,
    instruments: InstrumentFunctionSet,
    pairs: Vec<(usize, usize)>,
}

impl MomentSystem {
    /// Every direction against every unflagged instrument function,
    /// direction-major.
    pub fn new(directions: DirectionSet, instruments: InstrumentFunctionSet) -> Result<Self> {
        let usable = instruments.usable();
        let pairs: Vec<(usize, usize)> = (0..directions.len())
            .flat_map(|d| usable.iter().map(move |&g| (d, g)))
            .collect();
        if pairs.is_empty() {
            return Err(Error::invalid("moment system", "no directions or no usable instrument functions"));
        }
        Ok(MomentSystem {
            directions,
            instruments,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    pub fn instruments(&self) -> &InstrumentFunctionSet {
        &self.instruments
    }
}

/// Treatment of markets whose support moment is `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfinitePolicy {
    /// Replace `m` by this constant.
    Cap(f64),
    /// Drop every moment to which such a market contributes.
    Drop,
}

impl Default for InfinitePolicy {
    fn default() -> Self {
        InfinitePolicy::Cap(1e6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticalValueMethod {
    SelfNormalized,
    MultiplierBootstrap(BootstrapOptions),
    /// Reserved; not available.
    TwoStepHybrid,
}

impl Default for CriticalValueMethod {
    fn default() -> Self {
        CriticalValueMethod::SelfNormalized
    }
}

impl CriticalValueMethod {
    fn validate(&self) -> Result<()> {
        match self {
            CriticalValueMethod::SelfNormalized => Ok(()),
            CriticalValueMethod::MultiplierBootstrap(b) => b.validate(),
            CriticalValueMethod::TwoStepHybrid => Err(Error::invalid(
                "critical value method",
                "the two-step hybrid critical value is not implemented",
            )),
        }
    }
}

/// Test of one `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// `-inf` when no moment is retained.
    pub statistic: f64,
    /// `+inf` when no moment is retained.
    pub critical_value: f64,
    pub method: CriticalValueMethod,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Moments that entered `T_n`. The self-normalized `p_n` counts every
    /// moment of the system, so `c` does not depend on `theta`.
    pub retained: Vec<bool>,
    pub reject: bool,
}

/// Moment means and standard deviations at one `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub n: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub retained: Vec<bool>,
}

/// Everything besides the data and `theta` that defines the test.
#[derive(Clone, Debug)]
pub struct Inference {
    pub mixing: MixingSpec,
    pub s0set: OutsideShareSet,
    pub system: MomentSystem,
    pub support: SupportOptions,
    pub infinite: InfinitePolicy,
    pub sign: SignConvention,
    pub pi: f64,
    pub method: CriticalValueMethod,
}

/// Per-market moment inputs at one `lambda`. For moment `j` and market `i`,
/// `y_ij = g_j(z_i) (h_i, x_i'v_j, v_j'p_i)` with `h = sup_{s_0} v'delta`,
/// so that `m g = w'y` with `w = (1, -beta, alpha)`.
#[derive(Clone, Debug)]
pub struct InferenceSlice {
    n: usize,
    dim: usize,
    mean: Vec<f64>,
    cov: Vec<f64>,
    dropped: Vec<bool>,
    /// `[b][j]` blocks of `sum_i e_i^(b) (y_ij - mean_j)`.
    boot: Option<Vec<f64>>,
}

impl Inference {
    pub fn new(mixing: MixingSpec, s0set: OutsideShareSet, system: MomentSystem) -> Self {
        Inference {
            mixing,
            s0set,
            system,
            support: SupportOptions::default(),
            infinite: InfinitePolicy::default(),
            sign: SignConvention::default(),
            pi: 0.05,
            method: CriticalValueMethod::default(),
        }
    }

    pub fn with_pi(mut self, pi: f64) -> Self {
        self.pi = pi;
        self
    }

    pub fn with_method(mut self, method: CriticalValueMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_sign(mut self, sign: SignConvention) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_infinite(mut self, infinite: InfinitePolicy) -> Self {
        self.infinite = infinite;
        self
    }

    pub fn with_support(mut self, support: SupportOptions) -> Self {
        self.support = support;
        self
    }

    fn validate(&self, dataset: &Dataset) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::invalid("significance level", format!("{} not in (0, 1)", self.pi)));
        }
        if let InfinitePolicy::Cap(c) = self.infinite {
            if !c.is_finite() {
                return Err(Error::invalid("infinite-moment cap", "must be finite"));
            }
        }
        let n_active = self.system.instruments.active.first().map_or(0, |a| a.len());
        if n_active != dataset.len() {
            return Err(Error::DimensionMismatch {
                what: "instrument functions (markets)",
                expected: dataset.len(),
                actual: n_active,
            });
        }
        self.s0set.validate()?;
        self.method.validate()
    }

    /// `sup_{s_0} v'delta` for every market and direction (`+inf` allowed).
    fn sups(&self, dataset: &Dataset, lambda: &[f64]) -> Result<Vec<Vec<f64>>> {
        dataset
            .markets()
            .par_iter()
            .map(|m| {
                let profile = SupportProfile::build(m, lambda, &self.mixing, &self.s0set, &self.support)?;
                self.system
                    .directions
                    .iter()
                    .map(|d| profile.sup(&d.v).map(|r| r.value))
                    .collect()
            })
            .collect()
    }

    fn y_rows(&self, dataset: &Dataset, sups: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
        let dim = 2 + dataset.n_chars();
        let p = self.system.len();
        let mut dropped = vec![false; p];
        let rows = dataset
            .markets()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut row = vec![0.0; p * dim];
                let terms: Vec<(Vec<f64>, f64)> =
                    self.system.directions.iter().map(|d| direction_terms(m, &d.v)).collect();
                for (j, &(d, g)) in self.system.pairs.iter().enumerate() {
                    if !self.system.instruments.active[g][i] {
                        continue;
                    }
                    let y = &mut row[j * dim..(j + 1) * dim];
                    let h = sups[i][d];
                    if h.is_finite() {
                        y[0] = h;
                        y[1..dim - 1].copy_from_slice(&terms[d].0);
                        y[dim - 1] = terms[d].1;
                    } else {
                        match self.infinite {
                            InfinitePolicy::Cap(c) => y[0] = c,
                            InfinitePolicy::Drop => dropped[j] = true,
                        }
                    }
                }
                row
            })
            .collect();
        (rows, dropped)
    }

    /// Moment inputs at `lambda`, including bootstrap sums when the method
    /// needs them.
    pub fn slice(&self, dataset: &Dataset, lambda: &[f64]) -> Result<InferenceSlice> {
        self.validate(dataset)?;
        let sups = self.sups(dataset, lambda)?;
        let (rows, dropped) = self.y_rows(dataset, &sups);
        let n = dataset.len();
        let dim = 2 + dataset.n_chars();
        let width = self.system.len() * dim;
        let mut mean = vec![0.0; width];
        for row in &rows {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut cov = vec![0.0; width * dim];
        for row in &rows {
            for j in 0..self.system.len() {
                let y = &row[j * dim..(j + 1) * dim];
                let mu = &mean[j * dim..(j + 1) * dim];
                let block = &mut cov[j * dim * dim..(j + 1) * dim * dim];
                for a in 0..dim {
                    for b in 0..dim {
                        block[a * dim + b] += (y[a] - mu[a]) * (y[b] - mu[b]);
                    }
                }
            }
        }
        cov.iter_mut().for_each(|v| *v /= n as f64);
        let boot = match self.method {
            CriticalValueMethod::MultiplierBootstrap(opts) => Some(
                (0..opts.draws as u64)
                    .into_par_iter()
                    .flat_map_iter(|b| {
                        let e = multipliers(opts.seed, b, n, opts.multiplier);
                        let mut z = vec![0.0; width];
                        for (row, ei) in rows.iter().zip(&e) {
                            for ((acc, y), mu) in z.iter_mut().zip(row).zip(&mean) {
                                *acc += ei * (y - mu);
                            }
                        }
                        z
                    })
                    .collect(),
            ),
            _ => None,
        };
        Ok(InferenceSlice {
            n,
            dim,
            mean,
            cov,
            dropped,
            boot,
        })
    }

    /// Test of `(alpha, beta)` on a slice computed at the matching `lambda`.
    pub fn evaluate(&self, slice: &InferenceSlice, alpha: f64, beta: &[f64]) -> Result<TestOutcome> {
        let stats = slice.stats(alpha, beta);
        let kept: Vec<usize> = (0..stats.mu.len()).filter(|&j| stats.retained[j]).collect();
        if kept.is_empty() {
            warn!("no moment retained at alpha = {alpha}, beta = {beta:?}; theta is not rejected");
            return Ok(TestOutcome {
                statistic: f64::NEG_INFINITY,
                critical_value: f64::INFINITY,
                method: self.method,
                mu: stats.mu,
                sigma: stats.sigma,
                retained: stats.retained,
                reject: false,
            });
        }
        let mu: Vec<f64> = kept.iter().map(|&j| stats.mu[j]).collect();
        let sigma: Vec<f64> = kept.iter().map(|&j| stats.sigma[j]).collect();
        let statistic = test_statistic(&mu, &sigma, slice.n, self.sign)?;
        let critical_value = match self.method {
            CriticalValueMethod::SelfNormalized => critical_value_sn(self.pi, self.system.len(), slice.n)?,
            CriticalValueMethod::MultiplierBootstrap(opts) => {
                let boot = slice
                    .boot
                    .as_ref()
                    .ok_or_else(|| Error::invalid("inference slice", "built without bootstrap sums"))?;
                let w = weights(alpha, beta);
                let (p, dim, n) = (stats.mu.len(), slice.dim, slice.n as f64);
                let mut draws: Vec<f64> = (0..opts.draws)
                    .map(|b| {
                        kept.iter()
                            .map(|&j| {
                                let z = &boot[(b * p + j) * dim..(b * p + j + 1) * dim];
                                let s: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
                                self.sign.factor() * n.sqrt() * (s / n) / stats.sigma[j]
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                empirical_quantile(&mut draws, 1.0 - self.pi)
            }
            CriticalValueMethod::TwoStepHybrid => unreachable!("rejected by validate"),
        };
        Ok(TestOutcome {
            statistic,
            critical_value,
            method: self.method,
            mu: stats.mu,
            sigma: stats.sigma,
            retained: stats.retained,
            reject: statistic > critical_value,
        })
    }

    pub fn test(&self, dataset: &Dataset, theta: &ParamTheta) -> Result<TestOutcome> {
        let slice = self.slice(dataset, &theta.lambda)?;
        self.evaluate(&slice, theta.alpha, &theta.beta)
    }

    pub fn moment_stats(&self, dataset: &Dataset, theta: &ParamTheta) -> Result<MomentStats> {
        let plain = Inference {
            method: CriticalValueMethod::SelfNormalized,
            ..self.clone()
        };
        Ok(plain.slice(dataset, &theta.lambda)?.stats(theta.alpha, &theta.beta))
    }

    /// `n x p_n` matrix of `m(W_i, v_j, theta) g_j(Z_i)`, with `+inf`
    /// replaced by the cap (or kept under [`InfinitePolicy::Drop`]).
    pub fn moment_values(&self, dataset: &Dataset, theta: &ParamTheta) -> Result<Vec<Vec<f64>>> {
        self.validate(dataset)?;
        let sups = self.sups(dataset, &theta.lambda)?;
        let (rows, dropped) = self.y_rows(dataset, &sups);
        let w = weights(theta.alpha, &theta.beta);
        let dim = w.len();
        Ok(rows
            .iter()
            .map(|row| {
                (0..self.system.len())
                    .map(|j| {
                        if dropped[j] {
                            f64::INFINITY
                        } else {
                            w.iter().zip(&row[j * dim..(j + 1) * dim]).map(|(a, b)| a * b).sum()
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Confidence set over a grid: members are the points not rejected.
    pub fn confidence_set(&self, dataset: &Dataset, grid: &ThetaGrid) -> Result<GridResult> {
        let linear = grid.linear_points();
        let lambdas = grid.lambda_points();
        let mut points = Vec::with_capacity(grid.len());
        for (i, lambda) in lambdas.iter().enumerate() {
            let slice = self.slice(dataset, lambda)?;
            let chunk = linear
                .par_iter()
                .map(|(alpha, beta)| {
                    let t = self.evaluate(&slice, *alpha, beta)?;
                    Ok(GridPoint {
                        theta: ParamTheta::new(*alpha, beta.clone(), lambda.clone()),
                        member: !t.reject,
                        min_moment: t.critical_value - t.statistic,
                        statistic: Some(t.statistic),
                        critical_value: Some(t.critical_value),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            info!(
                "lambda slice {}/{} {:?}: {} not rejected",
                i + 1,
                lambdas.len(),
                lambda,
                chunk.iter().filter(|p| p.member).count()
            );
            points.extend(chunk);
        }
        Ok(GridResult::new(grid.coordinate_names(), points))
    }
}

fn weights(alpha: f64, beta: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(beta.len() + 2);
    w.push(1.0);
    w.extend(beta.iter().map(|b| -b));
    w.push(alpha);
    w
}

impl InferenceSlice {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stats(&self, alpha: f64, beta: &[f64]) -> MomentStats {
        let w = weights(alpha, beta);
        let dim = self.dim;
        let p = self.dropped.len();
        let mut mu = Vec::with_capacity(p);
        let mut sigma = Vec::with_capacity(p);
        let mut retained = Vec::with_capacity(p);
        let mut low = 0usize;
        for j in 0..p {
            let m: f64 = w.iter().zip(&self.mean[j * dim..(j + 1) * dim]).map(|(a, b)| a * b).sum();
            let block = &self.cov[j * dim * dim..(j + 1) * dim * dim];
            let mut var = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    var += w[a] * block[a * dim + b] * w[b];
                }
            }
            let s = var.max(0.0).sqrt();
            if !self.dropped[j] && s < MIN_SIGMA {
                low += 1;
            }
            mu.push(m);
            sigma.push(s);
            retained.push(!self.dropped[j] && s >= MIN_SIGMA);
        }
        if low > 0 {
            log::debug!("{low} moments dropped for near-zero variance");
        }
        MomentStats {
            n: self.n,
            mu,
            sigma,
            retained,
        }
    }
}

/// Intervals of equilibrium objects at `market` over the members of a
/// confidence set.
pub fn project_confidence_set(
    market: &MarketObservation,
    confidence_set: &GridResult,
    s0set: &OutsideShareSet,
    mixing: &MixingSpec,
    n_s0: usize,
    objects: &[EquilibriumObject],
    opts: &InversionOptions,
) -> Result<Vec<ObjectInterval>> {
    equilibrium_bounds(market, &confidence_set.members(), s0set, mixing, n_s0, objects, opts)
}
