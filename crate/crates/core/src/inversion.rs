//! Inversion of the share map by the Berry contraction
//! `delta <- delta + ln s - ln sigma(delta)`, and recovery of demand shocks.
//!
//! When the outside share is small the contraction modulus is close to
//! `1 - s_0` along the direction that shifts every mean utility by the same
//! amount. [`InversionOptions::level_shift`] removes that slow mode: after
//! each contraction step a scalar Newton correction moves all utilities
//! together until the implied outside share matches `s_0`. The fixed point is
//! unchanged, since at the solution the correction is zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{MixingSpec, ParamTheta};
use crate::quadrature::build_quadrature;
use crate::shares::{mean_utility, MarketKernel};

/// Tolerance on the sum of a full share vector.
pub const FULL_SHARE_TOL: f64 = 1e-10;

/// Iterations without a new best residual after which a stall is declared.
pub const STALL_WINDOW: usize = 50;

/// Contraction steps before switching to Newton steps on `ln sigma`. The
/// contraction modulus approaches one as the random coefficients grow.
pub const NEWTON_AFTER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionOptions {
    /// Sup-norm bound on `ln s - ln sigma(delta)` at termination.
    pub tol: f64,
    /// Looser bound accepted once the residual has stopped improving for
    /// [`STALL_WINDOW`] iterations, which happens at the rounding floor of
    /// `sigma` for extreme shares or large random coefficients.
    pub stall_tol: f64,
    pub max_iter: usize,
    /// Apply the common-level Newton correction after each step.
    pub level_shift: bool,
    /// Switch to damped Newton steps after [`NEWTON_AFTER`] iterations.
    pub newton: bool,
    /// Keep the residual of every iteration in [`Inversion::history`].
    pub record_history: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            tol: 1e-12,
            stall_tol: 1e-9,
            max_iter: 5000,
            level_shift: true,
            newton: true,
            record_history: false,
        }
    }
}

impl InversionOptions {
    /// The unmodified contraction.
    pub fn plain() -> Self {
        InversionOptions {
            level_shift: false,
            newton: false,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }
}

/// Solution of one inversion with its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub delta: Vec<f64>,
    pub iterations: usize,
    /// Final sup-norm log-share residual.
    pub residual: f64,
    /// Whether the residual never increased between iterations.
    pub monotone: bool,
    /// Residual per iteration, filled only when requested.
    pub history: Vec<f64>,
}

/// `(s_0, s_tilde (1 - s_0))`.
pub fn assemble_shares(s0: f64, s_tilde: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(s_tilde.len() + 1);
    out.push(s0);
    out.extend(s_tilde.iter().map(|s| s * (1.0 - s0)));
    out
}

fn validate_full(s_full: &[f64], n_products: usize) -> Result<()> {
    if s_full.len() != n_products + 1 {
        return Err(Error::DimensionMismatch {
            what: "full share vector",
            expected: n_products + 1,
            actual: s_full.len(),
        });
    }
    if let Some(bad) = s_full.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidShares(format!("share {bad} is not strictly positive")));
    }
    let total: f64 = s_full.iter().sum();
    if (total - 1.0).abs() > FULL_SHARE_TOL {
        return Err(Error::InvalidShares(format!("shares sum to {total}")));
    }
    Ok(())
}

fn log_residual(log_s: &[f64], sig: &[f64], out: &mut [f64]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (j, ((o, ls), s)) in out.iter_mut().zip(log_s).zip(sig).enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegenerateShare { product: j, value: *s });
        }
        *o = ls - s.ln();
        worst = worst.max(o.abs());
    }
    Ok(worst)
}

/// Solve `sigma(delta) = s_inside` on a prepared kernel.
///
/// `start` seeds the iteration (for instance the solution at a neighbouring
/// outside share); without it the plain-logit solution is used.
pub fn invert_kernel(
    kernel: &MarketKernel,
    s_full: &[f64],
    start: Option<&[f64]>,
    opts: &InversionOptions,
) -> Result<Inversion> {
    let j = kernel.n_products();
    validate_full(s_full, j)?;
    let s0 = s_full[0];
    let log_s: Vec<f64> = s_full[1..].iter().map(|s| s.ln()).collect();
    if kernel.is_degenerate() {
        return Ok(Inversion {
            delta: log_s.iter().map(|l| l - s0.ln()).collect(),
            iterations: 0,
            residual: 0.0,
            monotone: true,
            history: Vec::new(),
        });
    }
    let mut delta = match start {
        Some(d) if d.len() == j && d.iter().all(|v| v.is_finite()) => d.to_vec(),
        Some(d) => {
            return Err(Error::DimensionMismatch {
                what: "starting mean utilities",
                expected: j,
                actual: d.len(),
            })
        }
        None => log_s.iter().map(|l| l - s0.ln()).collect(),
    };
    let target_logit = (1.0 - s0).ln() - s0.ln();
    let mut sig = vec![0.0; j];
    let mut step = vec![0.0; j];
    let mut history = Vec::new();
    let mut monotone = true;
    let mut last = f64::INFINITY;
    let (mut best_res, mut best_it, mut best_delta) = (f64::INFINITY, 0usize, vec![0.0; j]);
    for it in 0..=opts.max_iter {
        kernel.sigma_into(&delta, &mut sig);
        let res = log_residual(&log_s, &sig, &mut step)?;
        if opts.record_history {
            history.push(res);
        }
        if res > last {
            monotone = false;
        }
        last = res;
        if res <= opts.tol {
            return Ok(Inversion {
                delta,
                iterations: it,
                residual: res,
                monotone,
                history,
            });
        }
        if res < best_res {
            (best_res, best_it) = (res, it);
            best_delta.copy_from_slice(&delta);
        } else if it - best_it >= STALL_WINDOW && best_res <= opts.stall_tol {
            return Ok(Inversion {
                delta: best_delta,
                iterations: it,
                residual: best_res,
                monotone,
                history,
            });
        }
        if it == opts.max_iter {
            break;
        }
        if opts.newton && it >= NEWTON_AFTER && newton_step(kernel, &mut delta, &log_s, res) {
            continue;
        }
        for (d, s) in delta.iter_mut().zip(&step) {
            *d += s;
        }
        if opts.level_shift {
            level_correct(kernel, &mut delta, target_logit);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last,
    })
}

/// Damped Newton step on `ln sigma(delta) = ln s`. Returns `false`, leaving
/// `delta` untouched, when no step length reduces the residual.
fn newton_step(kernel: &MarketKernel, delta: &mut [f64], log_s: &[f64], res: f64) -> bool {
    let j = delta.len();
    let mut sig = vec![0.0; j];
    let mut jac = vec![0.0; j * j];
    kernel.jacobian_into(delta, &mut sig, &mut jac);
    // Rows of d ln sigma / d delta are rows of the Jacobian over sigma_j.
    let rhs = DVector::from_iterator(j, (0..j).map(|a| sig[a] * (log_s[a] - sig[a].ln())));
    let Some(dir) = DMatrix::from_row_slice(j, j, &jac).lu().solve(&rhs) else {
        return false;
    };
    let mut trial = vec![0.0; j];
    let mut scratch = vec![0.0; j];
    let mut t = 1.0;
    for _ in 0..8 {
        for a in 0..j {
            trial[a] = delta[a] + t * dir[a];
        }
        kernel.sigma_into(&trial, &mut sig);
        if let Ok(r) = log_residual(log_s, &sig, &mut scratch) {
            if r < res {
                delta.copy_from_slice(&trial);
                return true;
            }
        }
        t *= 0.5;
    }
    false
}

/// One Newton step on the common shift `c` toward
/// `logit(S(delta + c)) = logit(1 - s_0)`; exact for plain logit.
///
/// `d logit(S) / dc` lies in `(0, 1]` and can be tiny under strong
/// heterogeneity, so a step longer than twice the plain-logit step `-gap` is
/// halved until it shrinks `|gap|`.
fn level_correct(kernel: &MarketKernel, delta: &mut [f64], target_logit: f64) {
    let gap_at = |delta: &[f64], c: f64| -> Option<f64> {
        let shifted: Vec<f64> = delta.iter().map(|d| d + c).collect();
        let (inside, outside, _) = kernel.level_stats(&shifted);
        (inside > 0.0 && outside > 0.0).then(|| inside.ln() - outside.ln() - target_logit)
    };
    let (inside, outside, slope) = kernel.level_stats(delta);
    if !(inside > 0.0 && outside > 0.0 && slope > 0.0) {
        return;
    }
    let gap = inside.ln() - outside.ln() - target_logit;
    let mut c = -gap * inside * outside / slope;
    if c.abs() > 2.0 * gap.abs() {
        while c.abs() > gap.abs() && !gap_at(delta, c).is_some_and(|g| g.abs() < gap.abs()) {
            c *= 0.5;
        }
        if c.abs() <= gap.abs() {
            c = -gap;
        }
    }
    delta.iter_mut().for_each(|d| *d += c);
}

/// Mean utilities `delta` with `sigma(delta) = (s_1, .., s_J)` where
/// `s_full = (s_0, s_1, .., s_J)`.
pub fn invert_sigma(
    s_full: &[f64],
    x: &[f64],
    prices: &[f64],
    lambda: &[f64],
    mixing: &MixingSpec,
    opts: &InversionOptions,
) -> Result<Vec<f64>> {
    let nodes = build_quadrature(mixing, lambda)?;
    let kernel = MarketKernel::new(&nodes, x, prices)?;
    Ok(invert_kernel(&kernel, s_full, None, opts)?.delta)
}

/// Demand shocks `xi_j = delta_j - beta'x_j + alpha p_j`.
pub fn demand_shocks(
    s_full: &[f64],
    x: &[f64],
    prices: &[f64],
    theta: &ParamTheta,
    mixing: &MixingSpec,
    opts: &InversionOptions,
) -> Result<Vec<f64>> {
    let delta = invert_sigma(s_full, x, prices, &theta.lambda, mixing, opts)?;
    shocks_from_delta(theta, x, prices, delta)
}

/// Subtract the linear utility from a solved `delta`.
pub fn shocks_from_delta(theta: &ParamTheta, x: &[f64], prices: &[f64], mut delta: Vec<f64>) -> Result<Vec<f64>> {
    let linear = mean_utility(theta, x, prices, &vec![0.0; prices.len()])?;
    for (d, l) in delta.iter_mut().zip(linear) {
        *d -= l;
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shares::{choice_probabilities, sigma};

    fn mix() -> MixingSpec {
        MixingSpec::price_only(15)
    }

    #[test]
    fn symmetric_logit_gives_zero() {
        let d = invert_sigma(&[1.0 / 3.0; 3], &[0.0, 0.0], &[1.0, 1.0], &[], &MixingSpec::degenerate(), &Default::default())
            .unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn logit_closed_form() {
        let s = [0.2, 0.5, 0.3];
        let d = invert_sigma(&s, &[0.0, 0.0], &[1.0, 1.0], &[], &MixingSpec::degenerate(), &Default::default()).unwrap();
        assert!((d[0] - (0.5f64 / 0.2).ln()).abs() < 1e-15);
        assert!((d[1] - (0.3f64 / 0.2).ln()).abs() < 1e-15);
    }

    #[test]
    fn fast_path_matches_contraction() {
        // lambda = 0 with a non-degenerate family runs the generic contraction.
        let s = [0.35, 0.15, 0.5];
        let fast = invert_sigma(&s, &[0.0, 0.0], &[3.0, 1.0], &[], &MixingSpec::degenerate(), &Default::default()).unwrap();
        for opts in [InversionOptions::default(), InversionOptions::plain()] {
            let slow = invert_sigma(&s, &[0.0, 0.0], &[3.0, 1.0], &[0.0], &mix(), &opts).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_with_mixing() {
        let s = [0.05, 0.3, 0.65];
        let (x, p) = ([1.0, 1.0], [3.0, 1.0]);
        let d = invert_sigma(&s, &x, &p, &[1.5], &mix(), &Default::default()).unwrap();
        let back = sigma(&d, &x, &p, &[1.5], &mix()).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] - 0.65).abs() < 1e-12);
    }

    #[test]
    fn plain_iteration_is_monotone() {
        let kernel = MarketKernel::new(&build_quadrature(&mix(), &[1.0]).unwrap(), &[1.0, 1.0], &[3.0, 1.0]).unwrap();
        let r = invert_kernel(&kernel, &[0.3, 0.2, 0.5], Some(&[4.0, -3.0]), &InversionOptions::plain().with_history())
            .unwrap();
        assert!(r.monotone);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn level_shift_handles_tiny_outside_share() {
        let kernel = MarketKernel::new(&build_quadrature(&mix(), &[1.0]).unwrap(), &[1.0, 1.0], &[3.0, 1.0]).unwrap();
        let s = assemble_shares(1e-4, &[0.3, 0.7]);
        let r = invert_kernel(&kernel, &s, None, &Default::default()).unwrap();
        assert!(r.iterations < 500, "{} iterations", r.iterations);
        let plain = invert_kernel(&kernel, &s, None, &InversionOptions::plain());
        assert!(matches!(plain, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn warm_start_agrees() {
        let kernel = MarketKernel::new(&build_quadrature(&mix(), &[0.7]).unwrap(), &[1.0, 1.0], &[2.0, 1.5]).unwrap();
        let s = [0.4, 0.25, 0.35];
        let a = invert_kernel(&kernel, &s, None, &Default::default()).unwrap();
        let b = invert_kernel(&kernel, &s, Some(&[10.0, -10.0]), &Default::default()).unwrap();
        for (u, v) in a.delta.iter().zip(&b.delta) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn shocks_round_trip() {
        let theta = ParamTheta::new(1.0, vec![1.0], vec![1.0]);
        let (x, p, xi) = ([1.0, 1.0], [3.0, 1.0], [0.8, -0.4]);
        let full = choice_probabilities(&theta, &mix(), &x, &p, &xi).unwrap();
        let back = demand_shocks(&full, &x, &p, &theta, &mix(), &Default::default()).unwrap();
        for (a, b) in back.iter().zip(xi) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_theta_symmetric_shocks() {
        let theta = ParamTheta::new(0.0, vec![0.0], vec![]);
        let xi = demand_shocks(&[1.0 / 3.0; 3], &[1.0, 1.0], &[2.0, 1.0], &theta, &MixingSpec::degenerate(), &Default::default())
            .unwrap();
        assert!(xi.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn rejects_invalid_shares() {
        let m = MixingSpec::degenerate();
        let o = InversionOptions::default();
        assert!(invert_sigma(&[0.5, 0.5, 0.1], &[0.0, 0.0], &[1.0, 1.0], &[], &m, &o).is_err());
        assert!(invert_sigma(&[0.0, 0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &[], &m, &o).is_err());
        assert!(invert_sigma(&[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &[], &m, &o).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let kernel = MarketKernel::new(&build_quadrature(&mix(), &[2.0]).unwrap(), &[1.0, 1.0], &[3.0, 1.0]).unwrap();
        let r = invert_kernel(&kernel, &[0.3, 0.2, 0.5], None, &InversionOptions::plain().with_max_iter(3));
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 3, .. })));
    }
}
