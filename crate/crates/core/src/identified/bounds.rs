//! The set of demand shocks consistent with one market, and identified
//! intervals for equilibrium objects.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{assemble_shares, invert_kernel, shocks_from_delta, InversionOptions};
use crate::model::{MarketObservation, MixingSpec, OutsideShareSet, ParamTheta};
use crate::quadrature::build_quadrature;
use crate::shares::{EquilibriumObject, MarketKernel};

/// `(s_0, xi(s_0))` pairs for one market and parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockSetSample {
    pub theta: ParamTheta,
    pub points: Vec<(f64, Vec<f64>)>,
}

/// `n_s0` evenly spaced outside shares on the clipped interval.
pub fn s0_points(market: &MarketObservation, s0set: &OutsideShareSet, n_s0: usize) -> Result<Vec<f64>> {
    let (lo, hi) = s0set.interval(market)?;
    if lo == hi {
        return Ok(vec![lo]);
    }
    if n_s0 < 2 {
        return Err(Error::invalid("outside-share points", "at least 2 are needed for an interval"));
    }
    Ok((0..n_s0)
        .map(|k| if k + 1 == n_s0 { hi } else { lo + (hi - lo) * k as f64 / (n_s0 - 1) as f64 })
        .collect())
}

/// Mean utilities along the `s_0` points, warm-started; failed points are
/// skipped with a warning.
fn delta_path(
    kernel: &MarketKernel,
    s_tilde: &[f64],
    points: &[f64],
    opts: &InversionOptions,
) -> Vec<(f64, Vec<f64>)> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::with_capacity(points.len());
    for &s0 in points {
        let start = out.last().map(|(sp, d): &(f64, Vec<f64>)| {
            let shift = ((1.0 - s0) / s0).ln() - ((1.0 - sp) / sp).ln();
            d.iter().map(|v| v + shift).collect::<Vec<_>>()
        });
        match invert_kernel(kernel, &assemble_shares(s0, s_tilde), start.as_deref(), opts) {
            Ok(inv) => out.push((s0, inv.delta)),
            Err(e) => warn!("inversion failed at s0 = {s0}: {e}; point skipped"),
        }
    }
    out
}

pub fn shock_set(
    market: &MarketObservation,
    theta: &ParamTheta,
    s0set: &OutsideShareSet,
    mixing: &MixingSpec,
    n_s0: usize,
    opts: &InversionOptions,
) -> Result<ShockSetSample> {
    let nodes = build_quadrature(mixing, &theta.lambda)?;
    let kernel = MarketKernel::for_market(&nodes, market)?;
    let points = s0_points(market, s0set, n_s0)?;
    let path = delta_path(&kernel, &market.inside_shares, &points, opts);
    let points = path
        .into_iter()
        .map(|(s0, d)| Ok((s0, shocks_from_delta(theta, &market.x, &market.prices, d)?)))
        .collect::<Result<_>>()?;
    Ok(ShockSetSample {
        theta: theta.clone(),
        points,
    })
}

/// `[lo, hi]` of one equilibrium object over the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInterval {
    pub object: EquilibriumObject,
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    /// Evaluations that entered the interval.
    pub evaluated: usize,
    /// Evaluations rejected as singular or non-finite.
    pub skipped: usize,
}

fn lambda_key(lambda: &[f64]) -> Vec<u64> {
    lambda.iter().map(|v| v.to_bits()).collect()
}

/// Intervals for `objects` over every `theta` in `members` and every
/// outside share in `n_s0` points of `S_0`.
pub fn equilibrium_bounds(
    market: &MarketObservation,
    members: &[ParamTheta],
    s0set: &OutsideShareSet,
    mixing: &MixingSpec,
    n_s0: usize,
    objects: &[EquilibriumObject],
    opts: &InversionOptions,
) -> Result<Vec<ObjectInterval>> {
    if members.is_empty() {
        return Err(Error::invalid("parameter set", "no members to sweep"));
    }
    let mut out: Vec<ObjectInterval> = objects
        .iter()
        .map(|o| ObjectInterval {
            object: *o,
            label: o.label(),
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            evaluated: 0,
            skipped: 0,
        })
        .collect();
    // Objects depend on beta only through delta, which is pinned by s_0.
    let mut by_lambda: BTreeMap<Vec<u64>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for t in members {
        let entry = by_lambda
            .entry(lambda_key(&t.lambda))
            .or_insert_with(|| (t.lambda.clone(), Vec::new()));
        if !entry.1.iter().any(|a| a.to_bits() == t.alpha.to_bits()) {
            entry.1.push(t.alpha);
        }
    }
    let points = s0_points(market, s0set, n_s0)?;
    for (lambda, alphas) in by_lambda.values() {
        let nodes = build_quadrature(mixing, lambda)?;
        let kernel = MarketKernel::for_market(&nodes, market)?;
        for (_, delta) in delta_path(&kernel, &market.inside_shares, &points, opts) {
            for &alpha in alphas {
                let eq = kernel.equilibrium(alpha, &delta);
                for iv in out.iter_mut() {
                    match iv.object.evaluate(&eq, &market.prices) {
                        Ok(v) if v.is_finite() => {
                            iv.lo = iv.lo.min(v);
                            iv.hi = iv.hi.max(v);
                            iv.evaluated += 1;
                        }
                        _ => iv.skipped += 1,
                    }
                }
            }
        }
    }
    for iv in &out {
        if iv.skipped > 0 {
            warn!("{}: {} singular evaluations skipped", iv.label, iv.skipped);
        }
    }
    Ok(out)
}
