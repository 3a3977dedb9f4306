//! Simulated markets with two inside goods, a discrete price instrument and
//! a random price coefficient, plus the two-market-type design used to show
//! that a constant outside share can fail to rationalize the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::PiecewiseChebyshev;
use crate::inversion::{assemble_shares, invert_kernel, InversionOptions};
use crate::model::{
    Dataset, MarketObservation, MixingSpec, ParamTheta, QuadratureKind, QuadratureRule, RandomCoefficient,
};
use crate::quadrature::build_quadrature;
use crate::shares::{choice_probabilities, MarketKernel};

/// Data-generating process: `z ~ U{1..5}`, `p = (z, ln z) + w`,
/// `xi_j = w_j + e` with `w ~ N(0, I)`, `e ~ N(0, 1)`, `x_j = 1`, and price
/// coefficient `alpha + nu` with `nu ~ N(0, lambda^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n_markets: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    /// Gauss-Hermite nodes used to compute the true shares.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn one() -> f64 {
    1.0
}

fn default_nodes() -> usize {
    15
}

impl DgpSpec {
    pub fn new(n_markets: usize, seed: u64) -> Self {
        DgpSpec {
            n_markets,
            seed,
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            nodes: default_nodes(),
        }
    }

    pub fn theta(&self) -> ParamTheta {
        ParamTheta::new(self.alpha, vec![self.beta], vec![self.lambda])
    }

    /// Mixing used to generate shares (and the natural one for estimation).
    pub fn mixing(&self) -> MixingSpec {
        MixingSpec::price_only(self.nodes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_markets < 1 {
            return Err(Error::invalid("market count", "at least one market is required"));
        }
        if !(self.lambda >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() || !self.lambda.is_finite() {
            return Err(Error::invalid("true parameter", format!("{:?}", self.theta())));
        }
        if self.nodes < 1 {
            return Err(Error::invalid("quadrature", "node count must be at least 1"));
        }
        Ok(())
    }
}

/// Price shifters `(z, ln z)`.
pub fn price_shifters(z: f64) -> [f64; 2] {
    [z, z.ln()]
}

/// Quantities the econometrician does not observe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketTruth {
    pub market_id: String,
    pub outside_share: f64,
    pub xi: Vec<f64>,
    /// `(s_0, s_1, .., s_J)`.
    pub shares: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub truths: Vec<MarketTruth>,
}

/// The random stream of market `index`.
pub fn market_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw the markets. Each market's true outside share is recorded as its
/// `outside_share`, the natural center of a band.
pub fn simulate_dataset(spec: &DgpSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let theta = spec.theta();
    let mixing = spec.mixing();
    let mut markets = Vec::with_capacity(spec.n_markets);
    let mut truths = Vec::with_capacity(spec.n_markets);
    for i in 0..spec.n_markets {
        let mut rng = market_rng(spec.seed, i as u64);
        let z = rng.random_range(1..=5) as f64;
        let w: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let common: f64 = rng.sample(StandardNormal);
        let g = price_shifters(z);
        let prices = vec![g[0] + w[0], g[1] + w[1]];
        let xi = vec![w[0] + common, w[1] + common];
        let x = vec![1.0, 1.0];
        let shares = choice_probabilities(&theta, &mixing, &x, &prices, &xi)?;
        let inside: f64 = shares[1..].iter().sum();
        let s_tilde = shares[1..].iter().map(|s| s / inside).collect();
        let id = format!("{}", i + 1);
        let market = MarketObservation::new(id.clone(), s_tilde, x, prices, vec![z])?.with_outside_share(shares[0])?;
        markets.push(market);
        truths.push(MarketTruth {
            market_id: id,
            outside_share: shares[0],
            xi,
            shares,
        });
    }
    Ok(SimulatedData {
        dataset: Dataset::new(markets)?,
        truths,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Componentwise medians of conditional inside shares and prices; an even
/// count averages the two middle values.
pub fn median_market(dataset: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let j = dataset.n_products();
    let col = |f: &dyn Fn(&MarketObservation) -> f64| median(dataset.markets().iter().map(f).collect());
    let s = (0..j).map(|k| col(&|m| m.inside_shares[k])).collect();
    let p = (0..j).map(|k| col(&|m| m.prices[k])).collect();
    (s, p)
}

/// A market built from componentwise medians of conditional shares, prices,
/// characteristics, instruments and, when every market has one, the outside
/// share. Shares are rescaled to sum to one.
pub fn median_observation(dataset: &Dataset) -> Result<MarketObservation> {
    let col = |f: &dyn Fn(&MarketObservation) -> f64| median(dataset.markets().iter().map(f).collect());
    let (j, dx, dz) = (dataset.n_products(), dataset.n_chars(), dataset.n_instruments());
    let mut shares: Vec<f64> = (0..j).map(|k| col(&|m| m.inside_shares[k])).collect();
    let total: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= total);
    let market = MarketObservation::new(
        "median",
        shares,
        (0..j * dx).map(|k| col(&|m| m.x[k])).collect(),
        (0..j).map(|k| col(&|m| m.prices[k])).collect(),
        (0..dz).map(|k| col(&|m| m.instruments[k])).collect(),
    )?;
    if dataset.markets().iter().all(|m| m.outside_share.is_some()) {
        market.with_outside_share(col(&|m| m.outside_share.unwrap_or(f64::NAN)))
    } else {
        Ok(market)
    }
}

/// Median of a slice.
pub fn median_of(values: &[f64]) -> f64 {
    median(values.to_vec())
}

/// Two market types with equal probability, `x = (0, 0)` and `x = (0, 10)`,
/// `theta = (0, 0, 1)` with a standard normal coefficient on `x`, and
/// `xi ~ N(0, I)`. `F(s_0)` is the squared norm of the sum over types of the
/// mean inverted mean utility at a constant outside share `s_0`. Draws of
/// `xi` are held fixed across `s_0`.
///
/// For the `x = (0, 10)` type the inverse depends on a draw only through
/// `logit(s_tilde_1)`, so the default method interpolates that curve from a
/// few dozen exact inversions instead of inverting every draw.
#[derive(Clone, Debug)]
pub struct Counterexample {
    kernel: MarketKernel,
    /// `logit(s_tilde_1)` per draw for the `x = (0, 10)` type.
    logit_tilde: Vec<f64>,
    /// Mean of `ln s_tilde` for the `x = (0, 0)` type.
    log_mean: [f64; 2],
    method: CounterexampleMethod,
    opts: InversionOptions,
}

/// How the `x = (0, 10)` expectation is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleMethod {
    /// Invert every draw.
    Exact,
    /// Piecewise Chebyshev in `logit(s_tilde_1)`.
    Interpolated { nodes: usize, width: f64 },
}

impl Default for CounterexampleMethod {
    fn default() -> Self {
        CounterexampleMethod::Interpolated { nodes: 16, width: 2.0 }
    }
}

/// Trapezoid nodes for the coefficient on `x`; the integrand has poles at
/// imaginary distance `pi / 10` in `zeta`, which Gauss-Hermite handles poorly.
pub const COUNTEREXAMPLE_NODES: usize = 161;

/// `F(s_0)` with its two components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleValue {
    pub s0: f64,
    pub f: f64,
    pub components: [f64; 2],
}

impl Counterexample {
    pub fn new(mc_draws: usize, seed: u64) -> Result<Self> {
        Self::with_nodes(mc_draws, seed, COUNTEREXAMPLE_NODES)
    }

    /// `nodes` trapezoid nodes for the random coefficient.
    pub fn with_nodes(mc_draws: usize, seed: u64, nodes: usize) -> Result<Self> {
        if mc_draws < 1 {
            return Err(Error::invalid("draws", "at least one draw is required"));
        }
        let mixing = MixingSpec::gaussian(
            vec![RandomCoefficient::Characteristic(0)],
            QuadratureRule {
                kind: QuadratureKind::Trapezoid,
                nodes,
                seed: 0,
            },
        );
        let node_set = build_quadrature(&mixing, &[1.0])?;
        let kernel = MarketKernel::new(&node_set, &[0.0, 10.0], &[0.0, 0.0])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xis: Vec<[f64; 2]> = (0..mc_draws)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let mut log_sum = [0.0; 2];
        for xi in &xis {
            let top = xi[0].max(xi[1]);
            let lse = top + ((xi[0] - top).exp() + (xi[1] - top).exp()).ln();
            log_sum[0] += xi[0] - lse;
            log_sum[1] += xi[1] - lse;
        }
        let logit_tilde = xis
            .par_iter()
            .map(|xi| {
                let s = kernel.sigma_tilde(xi);
                s[0].ln() - s[1].ln()
            })
            .collect();
        let n = mc_draws as f64;
        Ok(Counterexample {
            kernel,
            logit_tilde,
            log_mean: [log_sum[0] / n, log_sum[1] / n],
            method: CounterexampleMethod::default(),
            opts: InversionOptions::default().with_max_iter(100_000),
        })
    }

    pub fn with_method(mut self, method: CounterexampleMethod) -> Self {
        self.method = method;
        self
    }

    pub fn draws(&self) -> usize {
        self.logit_tilde.len()
    }

    fn invert(&self, s0: f64, t: f64, start: Option<&[f64]>) -> Result<[f64; 2]> {
        let s1 = expit(t);
        let inv = invert_kernel(&self.kernel, &assemble_shares(s0, &[s1, 1.0 - s1]), start, &self.opts)?;
        Ok([inv.delta[0], inv.delta[1]])
    }

    /// Mean inverse over draws for the `x = (0, 10)` type.
    fn shifted_mean(&self, s0: f64) -> Result<[f64; 2]> {
        let n = self.draws() as f64;
        let sum = match self.method {
            CounterexampleMethod::Exact => self
                .logit_tilde
                .par_iter()
                .map(|&t| self.invert(s0, t, None))
                .try_reduce(|| [0.0; 2], |a, b| Ok([a[0] + b[0], a[1] + b[1]]))?,
            CounterexampleMethod::Interpolated { nodes, width } => {
                let (lo, hi) = self
                    .logit_tilde
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
                let interp = PiecewiseChebyshev::fit(lo, hi, width, nodes, 2, |at| {
                    let mut out = Vec::with_capacity(2 * at.len());
                    let mut warm: Option<[f64; 2]> = None;
                    for &t in at {
                        let d = self.invert(s0, t, warm.as_ref().map(|d| &d[..]))?;
                        out.extend_from_slice(&d);
                        warm = Some(d);
                    }
                    Ok(out)
                })?;
                self.logit_tilde
                    .par_iter()
                    .map(|&t| interp.eval(t))
                    .map(|d| [d[0], d[1]])
                    .reduce(|| [0.0; 2], |a, b| [a[0] + b[0], a[1] + b[1]])
            }
        };
        Ok([sum[0] / n, sum[1] / n])
    }

    pub fn evaluate(&self, s0: f64) -> Result<CounterexampleValue> {
        if !(s0 > 0.0 && s0 < 1.0) {
            return Err(Error::invalid("outside share", format!("{s0} not in (0, 1)")));
        }
        let shift = ((1.0 - s0) / s0).ln();
        let b = self.shifted_mean(s0)?;
        let components = [self.log_mean[0] + shift + b[0], self.log_mean[1] + shift + b[1]];
        Ok(CounterexampleValue {
            s0,
            f: components[0].powi(2) + components[1].powi(2),
            components,
        })
    }

    /// `F` on an evenly spaced grid of `n` points in `[lo, hi]`.
    pub fn curve(&self, lo: f64, hi: f64, n: usize) -> Result<Vec<CounterexampleValue>> {
        (0..n)
            .map(|k| {
                let s0 = if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
                self.evaluate(s0)
            })
            .collect()
    }

    /// Golden-section minimization of `F` on `[lo, hi]`.
    pub fn minimize(&self, lo: f64, hi: f64, tol: f64) -> Result<CounterexampleValue> {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.evaluate(c)?;
        let mut fd = self.evaluate(d)?;
        while b - a > tol {
            if fc.f <= fd.f {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.evaluate(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.evaluate(d)?;
            }
        }
        Ok(if fc.f <= fd.f { fc } else { fd })
    }
}

fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `F(s_0)` with `mc_draws` draws of `xi`.
pub fn counterexample_f(s0: f64, mc_draws: usize, seed: u64) -> Result<f64> {
    Ok(Counterexample::new(mc_draws, seed)?.evaluate(s0)?.f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::demand_shocks;

    #[test]
    fn shifters() {
        let g = price_shifters(3.0);
        assert_eq!(g[0], 3.0);
        assert!((g[1] - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_dataset(&DgpSpec::new(20, 9)).unwrap();
        let b = simulate_dataset(&DgpSpec::new(20, 9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dataset, simulate_dataset(&DgpSpec::new(20, 10)).unwrap().dataset);
    }

    #[test]
    fn hidden_truth_is_recovered() {
        let spec = DgpSpec::new(30, 1);
        let sim = simulate_dataset(&spec).unwrap();
        for (m, t) in sim.dataset.markets().iter().zip(&sim.truths) {
            let xi = demand_shocks(&t.shares, &m.x, &m.prices, &spec.theta(), &spec.mixing(), &Default::default())
                .unwrap();
            for (a, b) in xi.iter().zip(&t.xi) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn plain_logit_design() {
        let spec = DgpSpec {
            lambda: 0.0,
            ..DgpSpec::new(5, 2)
        };
        let sim = simulate_dataset(&spec).unwrap();
        for (m, t) in sim.dataset.markets().iter().zip(&sim.truths) {
            let e: Vec<f64> = (0..2).map(|j| (1.0 - m.prices[j] + t.xi[j]).exp()).collect();
            let total: f64 = e.iter().sum();
            assert!((m.inside_shares[0] - e[0] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median_of(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_of(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        let sim = simulate_dataset(&DgpSpec::new(1, 3)).unwrap();
        let (s, p) = median_market(&sim.dataset);
        assert_eq!(s, sim.dataset.markets()[0].inside_shares);
        assert_eq!(p, sim.dataset.markets()[0].prices);
    }

    #[test]
    fn counterexample_is_nonnegative_and_deterministic() {
        let a = Counterexample::new(200, 5).unwrap();
        let b = Counterexample::new(200, 5).unwrap();
        for s0 in [0.1, 0.3, 0.6] {
            let (va, vb) = (a.evaluate(s0).unwrap(), b.evaluate(s0).unwrap());
            assert!(va.f >= 0.0);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn interpolation_matches_exact_inversion() {
        let interp = Counterexample::new(300, 11).unwrap();
        let exact = interp.clone().with_method(CounterexampleMethod::Exact);
        for s0 in [0.05, 0.23, 0.5] {
            let (a, b) = (interp.evaluate(s0).unwrap(), exact.evaluate(s0).unwrap());
            for j in 0..2 {
                assert!((a.components[j] - b.components[j]).abs() < 1e-8, "{s0}: {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn plain_type_component_is_closed_form() {
        // With a degenerate coefficient both types are plain logit, so each
        // component is 2 (mean ln s_tilde_j + ln((1 - s0) / s0)).
        let cx = Counterexample::with_nodes(50, 4, 1).unwrap();
        let v = cx.evaluate(0.3).unwrap();
        for j in 0..2 {
            let want = 2.0 * (cx.log_mean[j] + (0.7f64 / 0.3).ln());
            assert!((v.components[j] - want).abs() < 1e-8);
        }
    }
}
