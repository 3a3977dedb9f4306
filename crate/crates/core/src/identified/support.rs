//! Residuals `sigma^{-1}((s_0, s_tilde (1 - s_0))) - (beta'x - alpha p)` and
//! the support moment `m(W, v, theta) = sup_{s_0 in S_0} v'residual(s_0)`.
//!
//! The supremum depends on `(alpha, beta)` only through the additive term
//! `-beta'(x'v) + alpha (v'p)`, so the expensive part is the curve
//! `s_0 -> delta(s_0; lambda)`. A [`SupportProfile`] stores that curve for one
//! market and one `lambda`, parametrized by `t = logit(s_0)`, and answers
//! supremum queries for any direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::PiecewiseChebyshev;
use crate::inversion::{assemble_shares, invert_kernel, shocks_from_delta, InversionOptions};
use crate::model::{MarketObservation, MixingSpec, OutsideShareSet, ParamTheta};
use crate::quadrature::build_quadrature;
use crate::shares::MarketKernel;

/// How `delta(s_0)` is evaluated between exact inversions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Invert at every grid and refinement point.
    Exact,
    /// Piecewise Chebyshev interpolant in `logit(s_0)`: pieces of at most
    /// `width` logit units, each through `nodes` exact inversions.
    Chebyshev { nodes: usize, width: f64 },
    /// Pieces of at most 2.5 logit units with 16 nodes, fewer on narrower
    /// sets (see [`auto_nodes`]).
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupportOptions {
    /// Points of the initial grid, uniform in `logit(s_0)`.
    pub grid_points: usize,
    /// Golden-section stopping width, in units of `s_0`.
    pub refine_tol: f64,
    /// Outward slope (per unit of `logit(s_0)`) above which a maximum at a
    /// clipped end is reported as `+inf`.
    pub divergence_slope: f64,
    pub interpolation: Interpolation,
    #[serde(skip)]
    pub inversion: InversionOptions,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions {
            grid_points: 51,
            refine_tol: 1e-6,
            divergence_slope: 0.25,
            interpolation: Interpolation::Auto,
            inversion: InversionOptions::default(),
        }
    }
}

impl SupportOptions {
    pub fn exact() -> Self {
        SupportOptions {
            interpolation: Interpolation::Exact,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::invalid("support grid", "at least 3 points are needed"));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::invalid("refinement tolerance", format!("{}", self.refine_tol)));
        }
        if let Interpolation::Chebyshev { nodes, width } = self.interpolation {
            if nodes < 2 || !(width > 0.0) {
                return Err(Error::invalid("chebyshev interpolation", "need at least 2 nodes and a positive width"));
            }
        }
        Ok(())
    }
}

/// Supremum of `v'residual` over `S_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportMomentResult {
    /// `f64::INFINITY` when the supremum diverges at a clipped end.
    pub value: f64,
    /// Maximizing outside share.
    pub argmax: f64,
    /// Contraction iterations spent, including those of the profile.
    pub iterations: usize,
}

impl SupportMomentResult {
    pub fn is_infinite(&self) -> bool {
        self.value == f64::INFINITY
    }
}

fn logit(s: f64) -> f64 {
    s.ln() - (1.0 - s).ln()
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[derive(Clone, Debug)]
enum Source {
    Singleton,
    Exact {
        kernel: MarketKernel,
        s_tilde: Vec<f64>,
        inversion: InversionOptions,
    },
    Chebyshev(PiecewiseChebyshev),
}

/// The curve `logit(s_0) -> delta(s_0)` for one market and `lambda`.
#[derive(Clone, Debug)]
pub struct SupportProfile {
    n_products: usize,
    /// Grid in `logit(s_0)`, ascending.
    t: Vec<f64>,
    /// Row-major `grid x J`.
    delta: Vec<f64>,
    clipped: (bool, bool),
    iterations: usize,
    source: Source,
    refine_tol: f64,
    divergence_slope: f64,
}

const AUTO_WIDTH: f64 = 2.5;

/// Chebyshev nodes per piece of `width` logit units. Sixteen nodes reach
/// about `1e-8` on 2.5-unit pieces; the convergence factor grows roughly in
/// proportion to `2.5 / width`, and the count targets `1e-10`.
pub fn auto_nodes(width: f64) -> usize {
    let rho = 3.2 * AUTO_WIDTH / width.max(1e-6);
    ((10.0 / rho.log10()).ceil() as usize).clamp(4, 16)
}

impl SupportProfile {
    /// Build the profile by inverting the share map along `S_0`.
    pub fn build(
        market: &MarketObservation,
        lambda: &[f64],
        mixing: &MixingSpec,
        s0set: &OutsideShareSet,
        opts: &SupportOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let nodes = build_quadrature(mixing, lambda)?;
        let kernel = MarketKernel::for_market(&nodes, market)?;
        let (lo, hi) = s0set.interval(market)?;
        let j = market.n_products();
        let s_tilde = market.inside_shares.clone();
        let base = |t: &[f64], delta: Vec<f64>, iterations, clipped, source| SupportProfile {
            n_products: j,
            t: t.to_vec(),
            delta,
            clipped,
            iterations,
            source,
            refine_tol: opts.refine_tol,
            divergence_slope: opts.divergence_slope,
        };
        if lo == hi {
            let inv = invert_kernel(&kernel, &assemble_shares(lo, &s_tilde), None, &opts.inversion)?;
            return Ok(base(&[logit(lo)], inv.delta, inv.iterations, (false, false), Source::Singleton));
        }
        let clipped = s0set.clipped_ends(lo, hi);
        let (tl, th) = (logit(lo), logit(hi));
        let n = opts.grid_points;
        let grid: Vec<f64> = (0..n)
            .map(|k| if k + 1 == n { th } else { tl + (th - tl) * k as f64 / (n - 1) as f64 })
            .collect();
        let interpolation = match opts.interpolation {
            Interpolation::Auto => {
                let width = (th - tl) / ((th - tl) / AUTO_WIDTH).ceil().max(1.0);
                Interpolation::Chebyshev {
                    nodes: auto_nodes(width),
                    width: AUTO_WIDTH,
                }
            }
            other => other,
        };
        match interpolation {
            Interpolation::Chebyshev { nodes: m, width } => {
                let mut iterations = 0;
                let interp = PiecewiseChebyshev::fit(tl, th, width, m, j, |at| {
                    let (solved, it) = sweep(&kernel, &s_tilde, at, &opts.inversion)?;
                    iterations += it;
                    Ok(solved)
                })?;
                let delta = grid.iter().flat_map(|&t| interp.eval(t)).collect();
                Ok(base(&grid, delta, iterations, clipped, Source::Chebyshev(interp)))
            }
            _ => {
                let (solved, iterations) = sweep(&kernel, &s_tilde, &grid, &opts.inversion)?;
                Ok(base(
                    &grid,
                    solved,
                    iterations,
                    clipped,
                    Source::Exact {
                        kernel,
                        s_tilde,
                        inversion: opts.inversion,
                    },
                ))
            }
        }
    }

    pub fn n_products(&self) -> usize {
        self.n_products
    }

    /// Grid of outside shares.
    pub fn s0_grid(&self) -> Vec<f64> {
        self.t.iter().map(|&t| expit(t)).collect()
    }

    /// `delta` at the `k`-th grid point.
    pub fn grid_delta(&self, k: usize) -> &[f64] {
        &self.delta[k * self.n_products..(k + 1) * self.n_products]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn interpolate(&self, t: f64) -> Vec<f64> {
        match &self.source {
            Source::Chebyshev(interp) => interp.eval(t),
            _ => unreachable!("interpolation on a non-interpolated profile"),
        }
    }

    /// `delta(s_0)` at `t = logit(s_0)`, plus iterations spent.
    fn delta_at(&self, t: f64) -> Result<(Vec<f64>, usize)> {
        match &self.source {
            Source::Singleton => Ok((self.grid_delta(0).to_vec(), 0)),
            Source::Chebyshev(_) => Ok((self.interpolate(t), 0)),
            Source::Exact {
                kernel,
                s_tilde,
                inversion,
            } => {
                let k = nearest(&self.t, t);
                let start: Vec<f64> = self.grid_delta(k).iter().map(|d| d - (t - self.t[k])).collect();
                let inv = invert_kernel(kernel, &assemble_shares(expit(t), s_tilde), Some(&start), inversion)?;
                Ok((inv.delta, inv.iterations))
            }
        }
    }

    /// `sup_{s_0} v'delta(s_0)`.
    pub fn sup(&self, v: &[f64]) -> Result<SupportMomentResult> {
        if v.len() != self.n_products {
            return Err(Error::DimensionMismatch {
                what: "direction",
                expected: self.n_products,
                actual: v.len(),
            });
        }
        let dot = |d: &[f64]| -> f64 { v.iter().zip(d).map(|(a, b)| a * b).sum() };
        let n = self.t.len();
        let values: Vec<f64> = (0..n).map(|k| dot(self.grid_delta(k))).collect();
        let mut best = 0;
        for k in 1..n {
            if values[k] > values[best] {
                best = k;
            }
        }
        if n == 1 {
            return Ok(SupportMomentResult {
                value: values[0],
                argmax: expit(self.t[0]),
                iterations: self.iterations,
            });
        }
        let dt = self.t[1] - self.t[0];
        let outward = |a: usize, b: usize, c: usize| {
            (values[a] - values[b]) / dt > self.divergence_slope && (values[b] - values[c]) / dt > self.divergence_slope
        };
        let diverges = (best == 0 && self.clipped.0 && outward(0, 1, 2))
            || (best == n - 1 && self.clipped.1 && outward(n - 1, n - 2, n - 3));
        if diverges {
            return Ok(SupportMomentResult {
                value: f64::INFINITY,
                argmax: expit(self.t[best]),
                iterations: self.iterations,
            });
        }
        let (mut a, mut b) = (self.t[best.saturating_sub(1)], self.t[(best + 1).min(n - 1)]);
        let mut value = values[best];
        let mut argmax = self.t[best];
        let mut iterations = self.iterations;
        let mut eval = |t: f64| -> Result<f64> {
            let (d, it) = self.delta_at(t)?;
            iterations += it;
            let f = dot(&d);
            if f > value {
                value = f;
                argmax = t;
            }
            Ok(f)
        };
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (eval(c)?, eval(d)?);
        while expit(b) - expit(a) > self.refine_tol {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d)?;
            }
        }
        Ok(SupportMomentResult {
            value,
            argmax: expit(argmax),
            iterations,
        })
    }
}

fn nearest(grid: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, g) in grid.iter().enumerate() {
        if (g - t).abs() < (grid[best] - t).abs() {
            best = k;
        }
    }
    best
}

/// Invert at each `t` in order, warm-starting from the previous solution
/// moved by the plain-logit shift. Returns row-major `points x J`.
fn sweep(kernel: &MarketKernel, s_tilde: &[f64], t: &[f64], opts: &InversionOptions) -> Result<(Vec<f64>, usize)> {
    let mut out = Vec::with_capacity(t.len() * s_tilde.len());
    let mut previous: Option<(f64, Vec<f64>)> = None;
    let mut iterations = 0;
    for &tk in t {
        let start = previous
            .as_ref()
            .map(|(tp, d)| d.iter().map(|v| v - (tk - tp)).collect::<Vec<_>>());
        let inv = invert_kernel(kernel, &assemble_shares(expit(tk), s_tilde), start.as_deref(), opts)?;
        iterations += inv.iterations;
        out.extend_from_slice(&inv.delta);
        previous = Some((tk, inv.delta));
    }
    Ok((out, iterations))
}

/// `x'v` (length `d_x`) and `v'p` for one market.
pub fn direction_terms(market: &MarketObservation, v: &[f64]) -> (Vec<f64>, f64) {
    let dx = market.n_chars();
    let mut xv = vec![0.0; dx];
    for (j, vj) in v.iter().enumerate() {
        for (acc, x) in xv.iter_mut().zip(market.x_row(j)) {
            *acc += vj * x;
        }
    }
    let vp = v.iter().zip(&market.prices).map(|(a, b)| a * b).sum();
    (xv, vp)
}

/// Demand shocks implied by outside share `s0`:
/// `sigma^{-1}((s_0, s_tilde (1 - s_0))) - (beta'x_j - alpha p_j)`.
pub fn residual(
    market: &MarketObservation,
    s0: f64,
    theta: &ParamTheta,
    mixing: &MixingSpec,
    opts: &InversionOptions,
) -> Result<Vec<f64>> {
    if !(s0 > 0.0 && s0 < 1.0) {
        return Err(Error::invalid("outside share", format!("{s0} not in (0, 1)")));
    }
    let nodes = build_quadrature(mixing, &theta.lambda)?;
    let kernel = MarketKernel::for_market(&nodes, market)?;
    let delta = invert_kernel(&kernel, &assemble_shares(s0, &market.inside_shares), None, opts)?.delta;
    shocks_from_delta(theta, &market.x, &market.prices, delta)
}

/// `m(W, v, theta)` for one market.
pub fn support_moment(
    market: &MarketObservation,
    v: &[f64],
    theta: &ParamTheta,
    s0set: &OutsideShareSet,
    mixing: &MixingSpec,
    opts: &SupportOptions,
) -> Result<SupportMomentResult> {
    let profile = SupportProfile::build(market, &theta.lambda, mixing, s0set, opts)?;
    let mut r = profile.sup(v)?;
    if r.value.is_finite() {
        let (xv, vp) = direction_terms(market, v);
        r.value += theta.alpha * vp - theta.beta.iter().zip(&xv).map(|(b, x)| b * x).sum::<f64>();
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::demand_shocks;

    fn market() -> MarketObservation {
        MarketObservation::new("m", vec![0.3211, 0.6789], vec![1.0, 1.0], vec![2.9925, 0.972], vec![3.0])
            .unwrap()
            .with_outside_share(0.4376)
            .unwrap()
    }

    #[test]
    fn logit_residual_closed_form() {
        let m = market();
        let theta = ParamTheta::new(0.7, vec![0.4], vec![]);
        let s0 = 0.37;
        let r = residual(&m, s0, &theta, &MixingSpec::degenerate(), &Default::default()).unwrap();
        for j in 0..2 {
            let expected = m.inside_shares[j].ln() + ((1.0 - s0) / s0).ln() - 0.4 + 0.7 * m.prices[j];
            assert!((r[j] - expected).abs() < 1e-13);
        }
        let zero = ParamTheta::new(0.0, vec![0.0], vec![]);
        let r = residual(&m, 0.5, &zero, &MixingSpec::degenerate(), &Default::default()).unwrap();
        assert!((r[0] - 0.3211f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn residual_matches_demand_shocks() {
        let m = market();
        let theta = ParamTheta::new(1.0, vec![1.0], vec![1.0]);
        let mix = MixingSpec::price_only(15);
        let r = residual(&m, 0.3, &theta, &mix, &Default::default()).unwrap();
        let full = assemble_shares(0.3, &m.inside_shares);
        let xi = demand_shocks(&full, &m.x, &m.prices, &theta, &mix, &Default::default()).unwrap();
        for (a, b) in r.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_difference_direction_ignores_s0_set() {
        let m = market();
        let theta = ParamTheta::new(1.0, vec![5.0], vec![]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v = [r, -r];
        let expected = r * ((0.3211f64 / 0.6789).ln() + 2.9925 - 0.972);
        for set in [OutsideShareSet::agnostic(), OutsideShareSet::band(0.05), OutsideShareSet::singleton()] {
            let s = support_moment(&m, &v, &theta, &set, &MixingSpec::degenerate(), &Default::default()).unwrap();
            assert!((s.value - expected).abs() < 1e-12, "{set:?}: {}", s.value);
        }
    }

    #[test]
    fn logit_basis_direction_diverges_when_agnostic() {
        let m = market();
        let theta = ParamTheta::new(1.0, vec![1.0], vec![]);
        for v in [[1.0, 0.0], [0.0, -1.0]] {
            let s = support_moment(&m, &v, &theta, &OutsideShareSet::agnostic(), &MixingSpec::degenerate(), &Default::default())
                .unwrap();
            assert!(s.is_infinite());
        }
        let s = support_moment(&m, &[1.0, 0.0], &theta, &OutsideShareSet::band(0.05), &MixingSpec::degenerate(), &Default::default())
            .unwrap();
        assert!(s.value.is_finite());
        assert!((s.argmax - (0.4376 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn singleton_is_point_evaluation() {
        let m = market();
        let theta = ParamTheta::new(1.0, vec![1.0], vec![1.0]);
        let mix = MixingSpec::price_only(15);
        let v = [0.6, -0.8];
        let s = support_moment(&m, &v, &theta, &OutsideShareSet::singleton(), &mix, &Default::default()).unwrap();
        let r = residual(&m, 0.4376, &theta, &mix, &Default::default()).unwrap();
        assert!((s.value - (0.6 * r[0] - 0.8 * r[1])).abs() < 1e-13);
    }

    #[test]
    fn interpolated_profile_matches_exact() {
        let m = market();
        let mix = MixingSpec::price_only(15);
        for set in [
            OutsideShareSet::band(0.01),
            OutsideShareSet::band(0.05),
            OutsideShareSet::band(0.2),
            OutsideShareSet::agnostic(),
        ] {
            let exact = SupportProfile::build(&m, &[1.0], &mix, &set, &SupportOptions::exact()).unwrap();
            let cheb = SupportProfile::build(&m, &[1.0], &mix, &set, &SupportOptions::default()).unwrap();
            let worst = exact
                .delta
                .iter()
                .zip(&cheb.delta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "{set:?}: {worst}");
            for k in 0..16 {
                let a = std::f64::consts::TAU * k as f64 / 16.0;
                let v = [a.cos(), a.sin()];
                let (e, c) = (exact.sup(&v).unwrap(), cheb.sup(&v).unwrap());
                assert_eq!(e.is_infinite(), c.is_infinite());
                if e.value.is_finite() {
                    assert!((e.value - c.value).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn sup_dominates_grid() {
        let m = market();
        let theta = ParamTheta::new(1.0, vec![1.0], vec![1.0]);
        let mix = MixingSpec::price_only(15);
        let set = OutsideShareSet::band(0.1);
        let opts = SupportOptions::exact();
        let profile = SupportProfile::build(&m, &[1.0], &mix, &set, &opts).unwrap();
        for v in [[0.6, 0.8], [-0.6, 0.8], [0.0, -1.0]] {
            let s = support_moment(&m, &v, &theta, &set, &mix, &opts).unwrap();
            for s0 in profile.s0_grid() {
                let r = residual(&m, s0, &theta, &mix, &Default::default()).unwrap();
                assert!(s.value >= v[0] * r[0] + v[1] * r[1] - 1e-12);
            }
        }
    }
}
