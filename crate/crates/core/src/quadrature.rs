//! Integration nodes for the random-coefficient distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{MixingFamily, MixingSpec, QuadratureKind, RandomCoefficient};

/// Weighted nodes realizing `∫ · f(zeta, nu; lambda) d(zeta, nu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    /// Characteristic index of each `zeta` column.
    pub zeta_dims: Vec<usize>,
    /// Row-major `n_nodes x zeta_dims.len()`.
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NodeSet {
    pub fn degenerate() -> Self {
        NodeSet {
            zeta_dims: Vec::new(),
            zeta: Vec::new(),
            nu: vec![0.0],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn zeta_row(&self, k: usize) -> &[f64] {
        let d = self.zeta_dims.len();
        &self.zeta[k * d..(k + 1) * d]
    }

    /// True when every node is at the origin.
    pub fn is_degenerate(&self) -> bool {
        self.nu.iter().chain(&self.zeta).all(|&v| v == 0.0)
    }
}

/// Gauss-Hermite rule for the standard normal: nodes and weights with
/// `sum(w) == 1` and `sum(w * g(x)) ≈ E[g(Z)]`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 1 {
        return Err(Error::invalid("quadrature", "node count must be at least 1"));
    }
    // Roots of the physicists' Hermite polynomial by Newton iteration on the
    // orthonormal recurrence, then rescaled to the N(0, 1) weight.
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::invalid("quadrature", format!("Hermite root {i} of {n} did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let total: f64 = w.iter().sum();
    let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().rev().map(|v| v / total).collect();
    Ok((nodes, weights))
}

/// Standard-normal trapezoid rule on `[-TRAPEZOID_SPAN, TRAPEZOID_SPAN]`.
pub fn trapezoid_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let h = 2.0 * TRAPEZOID_SPAN / (n - 1) as f64;
    let x: Vec<f64> = (0..n).map(|k| -TRAPEZOID_SPAN + h * k as f64).collect();
    let w: Vec<f64> = x.iter().map(|v| (-0.5 * v * v).exp()).collect();
    let total: f64 = w.iter().sum();
    (x, w.into_iter().map(|v| v / total).collect())
}

/// Half-width, in standard deviations, of the trapezoid rule.
pub const TRAPEZOID_SPAN: f64 = 6.0;

/// Tensor product of a one-dimensional rule.
fn tensor(rule: &(Vec<f64>, Vec<f64>), d: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (x, w) = rule;
    let n = x.len();
    let total = n
        .checked_pow(d as u32)
        .ok_or_else(|| Error::invalid("quadrature", "tensor-product rule is too large"))?;
    let mut rows = Vec::with_capacity(total);
    let mut ws = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut row = vec![0.0; d];
        let mut weight = 1.0;
        for c in (0..d).rev() {
            let idx = rem % n;
            rem /= n;
            row[c] = x[idx];
            weight *= w[idx];
        }
        rows.push(row);
        ws.push(weight);
    }
    Ok((rows, ws))
}

/// Nodes for `mixing` at `lambda`. Gaussian coordinates are scaled by their
/// standard deviation; the degenerate family always yields one node at zero.
pub fn build_quadrature(mixing: &MixingSpec, lambda: &[f64]) -> Result<NodeSet> {
    if mixing.family == MixingFamily::Degenerate {
        return Ok(NodeSet::degenerate());
    }
    let d = mixing.pattern.len();
    if lambda.len() != d {
        return Err(Error::DimensionMismatch {
            what: "lambda",
            expected: d,
            actual: lambda.len(),
        });
    }
    if let Some(bad) = lambda.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("lambda", format!("standard deviation {bad} is negative or not finite")));
    }
    let n = mixing.quadrature.nodes;
    if n < 1 {
        return Err(Error::invalid("quadrature", "node count must be at least 1"));
    }
    if d == 0 {
        return Ok(NodeSet::degenerate());
    }

    // Standardized draws: rows of length d, one weight per row.
    let (std_rows, weights): (Vec<Vec<f64>>, Vec<f64>) = match mixing.quadrature.kind {
        QuadratureKind::GaussHermite => tensor(&gauss_hermite(n)?, d)?,
        QuadratureKind::Trapezoid => tensor(&trapezoid_normal(n), d)?,
        QuadratureKind::MonteCarlo => {
            let mut rng = ChaCha8Rng::seed_from_u64(mixing.quadrature.seed);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            (rows, vec![1.0; n])
        }
    };
    let total: f64 = weights.iter().sum();

    let zeta_dims: Vec<usize> = mixing
        .pattern
        .iter()
        .filter_map(|c| match c {
            RandomCoefficient::Characteristic(k) => Some(*k),
            RandomCoefficient::Price => None,
        })
        .collect();
    let mut zeta = Vec::with_capacity(std_rows.len() * zeta_dims.len());
    let mut nu = Vec::with_capacity(std_rows.len());
    for row in &std_rows {
        let mut price = 0.0;
        for (c, coef) in mixing.pattern.iter().enumerate() {
            let value = lambda[c] * row[c];
            match coef {
                RandomCoefficient::Characteristic(_) => zeta.push(value),
                RandomCoefficient::Price => price += value,
            }
        }
        nu.push(price);
    }
    Ok(NodeSet {
        zeta_dims,
        zeta,
        nu,
        weights: weights.iter().map(|w| w / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadratureRule;

    #[test]
    fn gauss_hermite_matches_normal_moments() {
        // E[Z^2k] = (2k - 1)!!
        for n in [5, 9, 15, 40, 101] {
            let (x, w) = gauss_hermite(n).unwrap();
            let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
            assert!((m(0) - 1.0).abs() < 1e-13);
            assert!(m(1).abs() < 1e-12);
            assert!((m(2) - 1.0).abs() < 1e-10, "n={n}: {}", m(2));
            if n >= 3 {
                assert!((m(4) - 3.0).abs() < 1e-9);
            }
            if n >= 5 {
                assert!((m(8) - 105.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_node_rule_is_the_origin() {
        let (x, w) = gauss_hermite(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn degenerate_family_ignores_lambda_and_node_count() {
        let mut mix = MixingSpec::degenerate();
        mix.quadrature.nodes = 31;
        let nodes = build_quadrature(&mix, &[3.0]).unwrap();
        assert_eq!(nodes.weights, vec![1.0]);
        assert_eq!(nodes.nu, vec![0.0]);
    }

    #[test]
    fn zero_sd_collapses_price_nodes() {
        let nodes = build_quadrature(&MixingSpec::price_only(9), &[0.0]).unwrap();
        assert_eq!(nodes.len(), 9);
        assert!(nodes.nu.iter().all(|&v| v == 0.0));
        assert!(nodes.is_degenerate());
    }

    #[test]
    fn scaled_variance_and_errors() {
        let nodes = build_quadrature(&MixingSpec::price_only(9), &[1.5]).unwrap();
        let var: f64 = nodes.nu.iter().zip(&nodes.weights).map(|(v, w)| w * v * v).sum();
        assert!((var - 2.25).abs() < 1e-10);
        assert!(build_quadrature(&MixingSpec::price_only(9), &[-1.0]).is_err());
        assert!(build_quadrature(&MixingSpec::price_only(0), &[1.0]).is_err());
        assert!(build_quadrature(&MixingSpec::price_only(9), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn tensor_rule_over_two_coefficients() {
        let mix = MixingSpec::gaussian(
            vec![RandomCoefficient::Characteristic(0), RandomCoefficient::Price],
            QuadratureRule { nodes: 7, ..Default::default() },
        );
        let nodes = build_quadrature(&mix, &[2.0, 0.5]).unwrap();
        assert_eq!(nodes.len(), 49);
        let s: f64 = nodes.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let vz: f64 = (0..nodes.len()).map(|k| nodes.weights[k] * nodes.zeta_row(k)[0].powi(2)).sum();
        let cross: f64 = (0..nodes.len()).map(|k| nodes.weights[k] * nodes.zeta_row(k)[0] * nodes.nu[k]).sum();
        assert!((vz - 4.0).abs() < 1e-10);
        assert!(cross.abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let mut mix = MixingSpec::price_only(1000);
        mix.quadrature.kind = QuadratureKind::MonteCarlo;
        mix.quadrature.seed = 7;
        let a = build_quadrature(&mix, &[1.0]).unwrap();
        let b = build_quadrature(&mix, &[1.0]).unwrap();
        assert_eq!(a, b);
        let s: f64 = a.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[cfg(test)]
mod trapezoid_tests {
    use super::*;

    #[test]
    fn trapezoid_normal_moments() {
        let (x, w) = trapezoid_normal(121);
        let m = |k: i32| x.iter().zip(&w).map(|(a, b)| a.powi(k) * b).sum::<f64>();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m(1).abs() < 1e-14);
        assert!((m(2) - 1.0).abs() < 1e-7);
        // Truncation at six standard deviations drops about 5e-6 of the fourth moment.
        assert!((m(4) - 3.0).abs() < 2e-5);
    }
}
