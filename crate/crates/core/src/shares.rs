//! Choice probabilities, the inside-share map `sigma`, the conditional
//! inside-share map `sigma_tilde`, and the equilibrium objects (elasticities,
//! markups, diversion ratios) built from them.
//!
//! Everything is evaluated on a [`MarketKernel`]: the quadrature nodes for one
//! `(mixing, lambda)` combined with one market's characteristics and prices.
//! All integrals for a market share the same kernel, so ratio formulas are
//! computed from a single node set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, MarketObservation, MixingSpec, ParamTheta};
use crate::quadrature::{build_quadrature, NodeSet};

/// Per-node utility offsets `zeta'x_j - nu p_j` for one market.
#[derive(Clone, Debug)]
pub struct MarketKernel {
    n_products: usize,
    weights: Vec<f64>,
    nu: Vec<f64>,
    /// Row-major `n_nodes x J`.
    offsets: Vec<f64>,
    degenerate: bool,
}

impl MarketKernel {
    pub fn new(nodes: &NodeSet, x: &[f64], prices: &[f64]) -> Result<Self> {
        let j = prices.len();
        if j == 0 || x.len() % j != 0 {
            return Err(Error::DimensionMismatch {
                what: "characteristics",
                expected: j,
                actual: x.len(),
            });
        }
        let dx = x.len() / j;
        if let Some(&bad) = nodes.zeta_dims.iter().find(|&&k| k >= dx) {
            return Err(Error::invalid(
                "mixing pattern",
                format!("random coefficient on characteristic {bad} but d_x = {dx}"),
            ));
        }
        if nodes.is_degenerate() {
            return Ok(MarketKernel {
                n_products: j,
                weights: vec![1.0],
                nu: vec![0.0],
                offsets: vec![0.0; j],
                degenerate: true,
            });
        }
        let mut offsets = Vec::with_capacity(nodes.len() * j);
        for k in 0..nodes.len() {
            let zeta = nodes.zeta_row(k);
            for p in 0..j {
                let xr = &x[p * dx..(p + 1) * dx];
                let taste: f64 = nodes.zeta_dims.iter().zip(zeta).map(|(&c, z)| z * xr[c]).sum();
                offsets.push(taste - nodes.nu[k] * prices[p]);
            }
        }
        Ok(MarketKernel {
            n_products: j,
            weights: nodes.weights.clone(),
            nu: nodes.nu.clone(),
            offsets,
            degenerate: false,
        })
    }

    pub fn for_market(nodes: &NodeSet, market: &MarketObservation) -> Result<Self> {
        MarketKernel::new(nodes, &market.x, &market.prices)
    }

    pub fn n_products(&self) -> usize {
        self.n_products
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    /// Plain-logit kernel (all random coefficients degenerate).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Inside and outside probabilities at node `k`, stabilized by
    /// subtracting the largest utility (the outside good has utility 0).
    #[inline]
    fn node_probs(&self, k: usize, delta: &[f64], inside: &mut [f64]) -> f64 {
        let off = &self.offsets[k * self.n_products..(k + 1) * self.n_products];
        let mut top = 0.0_f64;
        for (u, (d, o)) in inside.iter_mut().zip(delta.iter().zip(off)) {
            *u = d + o;
            top = top.max(*u);
        }
        let outside = (-top).exp();
        let mut den = outside;
        for u in inside.iter_mut() {
            *u = (*u - top).exp();
            den += *u;
        }
        let inv = 1.0 / den;
        for u in inside.iter_mut() {
            *u *= inv;
        }
        outside * inv
    }

    /// `sigma(delta)` into `out`; returns the outside share integral.
    pub fn sigma_into(&self, delta: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(delta.len(), self.n_products);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = [0.0_f64; 16];
        let mut heap;
        let probs: &mut [f64] = if self.n_products <= 16 {
            &mut scratch[..self.n_products]
        } else {
            heap = vec![0.0; self.n_products];
            &mut heap
        };
        let mut outside = 0.0;
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            outside += w * self.node_probs(k, delta, probs);
            for (o, p) in out.iter_mut().zip(probs.iter()) {
                *o += w * p;
            }
        }
        outside
    }

    /// `(S, s_0, dS/dc)` where `S` is the total inside share and `c` a
    /// common shift of every mean utility.
    pub fn level_stats(&self, delta: &[f64]) -> (f64, f64, f64) {
        let mut scratch = [0.0_f64; 16];
        let mut heap;
        let probs: &mut [f64] = if self.n_products <= 16 {
            &mut scratch[..self.n_products]
        } else {
            heap = vec![0.0; self.n_products];
            &mut heap
        };
        let (mut inside, mut outside, mut slope) = (0.0, 0.0, 0.0);
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            let p0 = self.node_probs(k, delta, probs);
            let pin: f64 = probs.iter().sum();
            inside += w * pin;
            outside += w * p0;
            slope += w * pin * p0;
        }
        (inside, outside, slope)
    }

    /// `sigma(delta)` into `out` and its row-major `J x J` Jacobian
    /// `d sigma_j / d delta_k` into `jac`.
    pub fn jacobian_into(&self, delta: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let j = self.n_products;
        out.iter_mut().for_each(|v| *v = 0.0);
        jac.iter_mut().for_each(|v| *v = 0.0);
        let mut probs = vec![0.0; j];
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            self.node_probs(k, delta, &mut probs);
            for a in 0..j {
                out[a] += w * probs[a];
                jac[a * j + a] += w * probs[a];
                for b in 0..j {
                    jac[a * j + b] -= w * probs[a] * probs[b];
                }
            }
        }
    }

    /// Inside shares `sigma(delta)`, length `J`.
    pub fn sigma(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_products];
        self.sigma_into(delta, &mut out);
        out
    }

    /// `(s_0, s_1, .., s_J)`.
    pub fn full_shares(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_products + 1];
        let s0 = self.sigma_into(delta, &mut out[1..]);
        out[0] = s0;
        out
    }

    /// Conditional inside shares: ratio of the inside-share integrals to the
    /// total inside integral.
    pub fn sigma_tilde(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = self.sigma(delta);
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    /// Share, own-derivative and cross-derivative integrals at `delta`,
    /// weighting each node by its price coefficient `alpha + nu`.
    pub fn equilibrium(&self, alpha: f64, delta: &[f64]) -> Equilibrium {
        let j = self.n_products;
        let mut shares = vec![0.0; j];
        let mut own = vec![0.0; j];
        let mut cross = vec![0.0; j * j];
        let mut probs = vec![0.0; j];
        for k in 0..self.weights.len() {
            let w = self.weights[k];
            let wa = w * (alpha + self.nu[k]);
            self.node_probs(k, delta, &mut probs);
            for a in 0..j {
                shares[a] += w * probs[a];
                own[a] += wa * probs[a] * (1.0 - probs[a]);
                for b in 0..j {
                    if a != b {
                        cross[a * j + b] += wa * probs[a] * probs[b];
                    }
                }
            }
        }
        Equilibrium {
            shares,
            own,
            cross,
        }
    }
}

/// Integrals behind the equilibrium-object formulas at one `(theta, xi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    /// `s_j`.
    pub shares: Vec<f64>,
    /// `∫ (alpha + nu) P_j (1 - P_j)`, i.e. `-∂s_j/∂p_j`.
    pub own: Vec<f64>,
    /// `∫ (alpha + nu) P_j P_k`, i.e. `∂s_j/∂p_k` (row-major, zero diagonal).
    pub cross: Vec<f64>,
}

const TINY: f64 = 1e-300;

impl Equilibrium {
    fn n(&self) -> usize {
        self.shares.len()
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.n() {
            return Err(Error::invalid("product index", format!("{j} >= J = {}", self.n())));
        }
        if self.shares[j].abs() < TINY {
            return Err(Error::DegenerateShare {
                product: j,
                value: self.shares[j],
            });
        }
        Ok(())
    }

    fn check_pair(&self, j: usize, k: usize) -> Result<()> {
        self.check(j)?;
        self.check(k)?;
        if j == k {
            return Err(Error::invalid("product pair", "cross objects need j != k"));
        }
        Ok(())
    }

    pub fn own_elasticity(&self, prices: &[f64], j: usize) -> Result<f64> {
        self.check(j)?;
        Ok(-prices[j] * self.own[j] / self.shares[j])
    }

    pub fn cross_elasticity(&self, prices: &[f64], j: usize, k: usize) -> Result<f64> {
        self.check_pair(j, k)?;
        Ok(prices[k] * self.cross[j * self.n() + k] / self.shares[j])
    }

    /// `-p_j / e_jj`, i.e. `s_j / ∫ (alpha + nu) P_j (1 - P_j)`.
    pub fn markup(&self, prices: &[f64], j: usize) -> Result<f64> {
        let e = self.own_elasticity(prices, j)?;
        if e == 0.0 || !e.is_finite() {
            return Err(Error::SingularMarkup { product: j });
        }
        Ok(-prices[j] / e)
    }

    pub fn diversion(&self, j: usize, k: usize) -> Result<f64> {
        self.check_pair(j, k)?;
        let den = self.own[k];
        if den.abs() < TINY {
            return Err(Error::SingularDiversion { j, k });
        }
        Ok(self.cross[j * self.n() + k] / den)
    }
}

/// Equilibrium quantity whose bounds can be requested (0-based indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumObject {
    OwnElasticity(usize),
    CrossElasticity(usize, usize),
    Markup(usize),
    Diversion(usize, usize),
    Share(usize),
}

impl EquilibriumObject {
    /// Every object for a `J`-product market.
    pub fn all(n_products: usize) -> Vec<EquilibriumObject> {
        let mut out = Vec::new();
        for j in 0..n_products {
            out.push(EquilibriumObject::OwnElasticity(j));
        }
        for j in 0..n_products {
            for k in 0..n_products {
                if j != k {
                    out.push(EquilibriumObject::CrossElasticity(j, k));
                }
            }
        }
        for j in 0..n_products {
            out.push(EquilibriumObject::Markup(j));
        }
        for j in 0..n_products {
            for k in 0..n_products {
                if j != k {
                    out.push(EquilibriumObject::Diversion(j, k));
                }
            }
        }
        for j in 0..n_products {
            out.push(EquilibriumObject::Share(j));
        }
        out
    }

    pub fn evaluate(&self, eq: &Equilibrium, prices: &[f64]) -> Result<f64> {
        match *self {
            EquilibriumObject::OwnElasticity(j) => eq.own_elasticity(prices, j),
            EquilibriumObject::CrossElasticity(j, k) => eq.cross_elasticity(prices, j, k),
            EquilibriumObject::Markup(j) => eq.markup(prices, j),
            EquilibriumObject::Diversion(j, k) => eq.diversion(j, k),
            EquilibriumObject::Share(j) => {
                eq.check(j)?;
                Ok(eq.shares[j])
            }
        }
    }

    /// 1-based label such as `E11`, `E12`, `M1`, `D12`, `S1`.
    pub fn label(&self) -> String {
        match *self {
            EquilibriumObject::OwnElasticity(j) => format!("E{}{}", j + 1, j + 1),
            EquilibriumObject::CrossElasticity(j, k) => format!("E{}{}", j + 1, k + 1),
            EquilibriumObject::Markup(j) => format!("M{}", j + 1),
            EquilibriumObject::Diversion(j, k) => format!("D{}{}", j + 1, k + 1),
            EquilibriumObject::Share(j) => format!("S{}", j + 1),
        }
    }
}

/// Mean utilities `beta'x_j - alpha p_j + xi_j`.
pub fn mean_utility(theta: &ParamTheta, x: &[f64], prices: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let j = prices.len();
    if xi.len() != j {
        return Err(Error::DimensionMismatch {
            what: "demand shocks",
            expected: j,
            actual: xi.len(),
        });
    }
    if x.len() != j * theta.beta.len() {
        return Err(Error::DimensionMismatch {
            what: "characteristics",
            expected: j * theta.beta.len(),
            actual: x.len(),
        });
    }
    let dx = theta.beta.len();
    Ok((0..j)
        .map(|p| dot(&theta.beta, &x[p * dx..(p + 1) * dx]) - theta.alpha * prices[p] + xi[p])
        .collect())
}

fn kernel(mixing: &MixingSpec, lambda: &[f64], x: &[f64], prices: &[f64]) -> Result<MarketKernel> {
    let nodes = build_quadrature(mixing, lambda)?;
    MarketKernel::new(&nodes, x, prices)
}

/// Choice probabilities `(P(y = 0), P(y = 1), .., P(y = J))`, outside first.
pub fn choice_probabilities(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
) -> Result<Vec<f64>> {
    let delta = mean_utility(theta, x, prices, xi)?;
    Ok(kernel(mixing, &theta.lambda, x, prices)?.full_shares(&delta))
}

/// Inside shares `sigma(delta, x, p; lambda)`.
pub fn sigma(delta: &[f64], x: &[f64], prices: &[f64], lambda: &[f64], mixing: &MixingSpec) -> Result<Vec<f64>> {
    check_len(delta, prices)?;
    Ok(kernel(mixing, lambda, x, prices)?.sigma(delta))
}

/// Conditional inside shares `sigma_tilde(delta, x, p; theta)`.
pub fn sigma_tilde(
    delta: &[f64],
    x: &[f64],
    prices: &[f64],
    theta: &ParamTheta,
    mixing: &MixingSpec,
) -> Result<Vec<f64>> {
    check_len(delta, prices)?;
    Ok(kernel(mixing, &theta.lambda, x, prices)?.sigma_tilde(delta))
}

fn check_len(delta: &[f64], prices: &[f64]) -> Result<()> {
    if delta.len() != prices.len() {
        return Err(Error::DimensionMismatch {
            what: "mean utilities",
            expected: prices.len(),
            actual: delta.len(),
        });
    }
    Ok(())
}

fn equilibrium_at(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
) -> Result<Equilibrium> {
    let delta = mean_utility(theta, x, prices, xi)?;
    Ok(kernel(mixing, &theta.lambda, x, prices)?.equilibrium(theta.alpha, &delta))
}

/// Own-price elasticity of product `j` (0-based), in the ratio form that
/// does not need the unobserved `s_j`.
pub fn elasticity_own(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
    j: usize,
) -> Result<f64> {
    equilibrium_at(theta, mixing, x, prices, xi)?.own_elasticity(prices, j)
}

/// Elasticity of the demand for `j` with respect to the price of `k`.
pub fn elasticity_cross(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
    j: usize,
    k: usize,
) -> Result<f64> {
    equilibrium_at(theta, mixing, x, prices, xi)?.cross_elasticity(prices, j, k)
}

pub fn markup(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
    j: usize,
) -> Result<f64> {
    equilibrium_at(theta, mixing, x, prices, xi)?.markup(prices, j)
}

/// Share of `k`'s lost demand captured by `j` after a price increase in `k`.
pub fn diversion_ratio(
    theta: &ParamTheta,
    mixing: &MixingSpec,
    x: &[f64],
    prices: &[f64],
    xi: &[f64],
    j: usize,
    k: usize,
) -> Result<f64> {
    equilibrium_at(theta, mixing, x, prices, xi)?.diversion(j, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit() -> MixingSpec {
        MixingSpec::degenerate()
    }

    fn theta(alpha: f64, beta: f64) -> ParamTheta {
        ParamTheta::new(alpha, vec![beta], vec![])
    }

    #[test]
    fn symmetric_logit_is_uniform() {
        let p = choice_probabilities(&theta(0.0, 0.0), &logit(), &[1.0, 1.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_logit_probabilities() {
        let l2 = 2.0_f64.ln();
        let p = choice_probabilities(&theta(0.0, 0.0), &logit(), &[1.0, 1.0], &[1.0, 2.0], &[l2, l2]).unwrap();
        let expected = [0.2, 0.4, 0.4];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_closed_forms() {
        let s = sigma(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[], &logit()).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        let den = 1.0 + e + 1.0 / e;
        let s = sigma(&[1.0, -1.0], &[0.0, 0.0], &[1.0, 1.0], &[], &logit()).unwrap();
        assert!((s[0] - e / den).abs() < 1e-15);
        assert!((s[1] - 1.0 / e / den).abs() < 1e-15);
    }

    #[test]
    fn sigma_tilde_is_shift_invariant_for_logit() {
        let t = theta(0.0, 0.0);
        let base = sigma_tilde(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &t, &logit()).unwrap();
        assert_eq!(base, vec![0.5, 0.5]);
        for c in [-30.0, -2.5, 7.0, 35.0] {
            let d = [0.4 + c, -1.1 + c];
            let a = sigma_tilde(&d, &[0.0, 0.0], &[1.0, 1.0], &t, &logit()).unwrap();
            let b = sigma_tilde(&[0.4, -1.1], &[0.0, 0.0], &[1.0, 1.0], &t, &logit()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn extreme_utilities_stay_finite() {
        let s = sigma(&[45.0, -45.0], &[1.0, 1.0], &[3.0, 1.0], &[2.0], &MixingSpec::price_only(15)).unwrap();
        assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(s.iter().sum::<f64>() <= 1.0);
    }

    #[test]
    fn logit_equilibrium_objects() {
        let t = theta(1.3, 0.5);
        let x = [1.0, 1.0, 1.0];
        let p = [2.0, 1.0, 0.5];
        let xi = [0.3, -0.2, 0.1];
        let s = choice_probabilities(&t, &logit(), &x, &p, &xi).unwrap();
        for j in 0..3 {
            let e = elasticity_own(&t, &logit(), &x, &p, &xi, j).unwrap();
            assert!((e + t.alpha * p[j] * (1.0 - s[j + 1])).abs() < 1e-12);
            let m = markup(&t, &logit(), &x, &p, &xi, j).unwrap();
            assert!((m - 1.0 / (t.alpha * (1.0 - s[j + 1]))).abs() < 1e-12);
            for k in (0..3).filter(|&k| k != j) {
                let c = elasticity_cross(&t, &logit(), &x, &p, &xi, j, k).unwrap();
                assert!((c - t.alpha * p[k] * s[k + 1]).abs() < 1e-12);
                let d = diversion_ratio(&t, &logit(), &x, &p, &xi, j, k).unwrap();
                assert!((d - s[j + 1] / (1.0 - s[k + 1])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_alpha_objects() {
        let t = theta(0.0, 0.5);
        let args = (&[1.0, 1.0][..], &[2.0, 1.0][..], &[0.0, 0.0][..]);
        assert_eq!(elasticity_own(&t, &logit(), args.0, args.1, args.2, 0).unwrap(), 0.0);
        assert_eq!(elasticity_cross(&t, &logit(), args.0, args.1, args.2, 0, 1).unwrap(), 0.0);
        assert!(matches!(
            markup(&t, &logit(), args.0, args.1, args.2, 0),
            Err(Error::SingularMarkup { .. })
        ));
        assert!(matches!(
            diversion_ratio(&t, &logit(), args.0, args.1, args.2, 0, 1),
            Err(Error::SingularDiversion { .. })
        ));
    }

    #[test]
    fn symmetric_market_diversion_is_one_half() {
        let t = theta(1.0, 0.0);
        let d = diversion_ratio(&t, &logit(), &[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 0, 1).unwrap();
        assert!((d - 0.5).abs() < 1e-14, "{d}");
    }

    #[test]
    fn markup_times_elasticity_is_minus_price() {
        let t = ParamTheta::new(1.0, vec![1.0], vec![1.0]);
        let mix = MixingSpec::price_only(15);
        let (x, p, xi) = ([1.0, 1.0], [2.9925, 0.972], [0.4, -0.3]);
        for j in 0..2 {
            let e = elasticity_own(&t, &mix, &x, &p, &xi, j).unwrap();
            let m = markup(&t, &mix, &x, &p, &xi, j).unwrap();
            assert!((m * e + p[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_indices_and_dimensions() {
        let t = theta(1.0, 0.0);
        assert!(elasticity_own(&t, &logit(), &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 2).is_err());
        assert!(elasticity_cross(&t, &logit(), &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 1, 1).is_err());
        assert!(choice_probabilities(&t, &logit(), &[0.0, 0.0], &[1.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(EquilibriumObject::CrossElasticity(0, 1).label(), "E12");
        assert_eq!(EquilibriumObject::all(2).len(), 2 + 2 + 2 + 2 + 2);
    }
}
