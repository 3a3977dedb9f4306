//! Helpers shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

use outshare::model::{Dataset, MarketObservation};

/// Three two-product markets with one characteristic and one instrument,
/// each carrying an outside share.
pub fn toy3() -> Dataset {
    let rows = [
        ([0.40, 0.60], [1.2, 0.8], 1.0, 0.30),
        ([0.55, 0.45], [2.1, 1.1], 2.0, 0.45),
        ([0.25, 0.75], [3.0, 0.9], 3.0, 0.20),
    ];
    let markets = rows
        .iter()
        .enumerate()
        .map(|(i, (s, p, z, s0))| {
            MarketObservation::new(format!("m{i}"), s.to_vec(), vec![1.0, 1.0], p.to_vec(), vec![*z])
                .unwrap()
                .with_outside_share(*s0)
                .unwrap()
        })
        .collect();
    Dataset::new(markets).unwrap()
}

/// `erfc(x)` for `x >= 0`: the positive-term series of `erf` below 3, a
/// continued fraction above.
pub fn erfc(x: f64) -> f64 {
    assert!(x >= 0.0);
    let pref = (-x * x).exp() / std::f64::consts::PI.sqrt();
    if x < 3.0 {
        let (mut term, mut sum, mut n) = (x, x, 0.0);
        while term > 1e-18 * sum {
            n += 1.0;
            term *= 2.0 * x * x / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 * pref * sum
    } else {
        let mut k = x;
        for n in (1..=300).rev() {
            k = x + (n as f64 / 2.0) / k;
        }
        pref / k
    }
}

/// Upper-tail quantile of the standard normal by Newton iteration on
/// `erfc`, valid for tail probabilities below one half.
pub fn upper_normal_quantile(tail: f64) -> f64 {
    assert!(tail > 0.0 && tail < 0.5);
    let mut q = 1.0;
    for _ in 0..100 {
        let upper = 0.5 * erfc(q / std::f64::consts::SQRT_2);
        let density = (-0.5 * q * q).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let step = (upper - tail) / density;
        q += step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    q
}

/// `q / sqrt(1 - q^2 / n)` from the Newton quantile.
pub fn sn_oracle(pi: f64, p: usize, n: usize) -> f64 {
    let q = upper_normal_quantile(pi / p as f64);
    q / (1.0 - q * q / n as f64).sqrt()
}

pub fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}
