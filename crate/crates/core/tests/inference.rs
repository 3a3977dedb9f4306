mod common;

use outshare::identified::DirectionSet;
use outshare::inference::{
    bootstrap_critical_value, build_instruments, critical_value_sn, BootstrapOptions, CriticalValueMethod, Inference,
    InstrumentSpec, MomentSystem, Multiplier, SignConvention,
};
use outshare::model::{MixingSpec, OutsideShareSet, ParamTheta};
use outshare::simulation::{simulate_dataset, DgpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn plain_inference(data: &outshare::model::Dataset, directions: Vec<Vec<f64>>) -> Inference {
    let constant = InstrumentSpec::Combos {
        groups: vec![],
        r: 1,
        pair_cells: Default::default(),
        constant: true,
        standardize: true,
        min_count: 1,
    };
    let instruments = build_instruments(data, &constant).unwrap();
    let system = MomentSystem::new(DirectionSet::from_vectors(directions).unwrap(), instruments).unwrap();
    Inference::new(MixingSpec::degenerate(), OutsideShareSet::singleton(), system)
}

/// `v'(ln s_tilde + ln((1 - s0)/s0) - beta x + alpha p)` per market.
fn logit_moment(m: &outshare::model::MarketObservation, v: &[f64], alpha: f64, beta: f64) -> f64 {
    let s0 = m.outside_share.unwrap();
    (0..2)
        .map(|j| v[j] * ((m.inside_shares[j]).ln() + ((1.0 - s0) / s0).ln() - beta * m.x[j] + alpha * m.prices[j]))
        .sum()
}

#[test]
fn plain_logit_moments_match_closed_form() {
    let data = common::toy3();
    let dirs = vec![vec![1.0, 0.0], vec![0.0, -1.0], vec![0.6, 0.8]];
    let inf = plain_inference(&data, dirs.clone());
    let theta = ParamTheta::new(0.8, vec![0.3], vec![]);
    let stats = inf.moment_stats(&data, &theta).unwrap();
    let n = data.len() as f64;
    for (k, v) in dirs.iter().enumerate() {
        let vals: Vec<f64> = data.markets().iter().map(|m| logit_moment(m, v, 0.8, 0.3)).collect();
        let mu = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / n).sqrt();
        assert!((stats.mu[k] - mu).abs() < 1e-9, "{} vs {mu}", stats.mu[k]);
        assert!((stats.sigma[k] - sd).abs() < 1e-9);
    }
    assert!(inf.test(&data, &theta).is_err(), "n = 3 is too small at pi = 0.05");
    let outcome = inf.with_pi(0.9).test(&data, &theta).unwrap();
    let brute = stats
        .mu
        .iter()
        .zip(&stats.sigma)
        .map(|(m, s)| -n.sqrt() * m / s)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((outcome.statistic - brute).abs() < 1e-9);
    assert!((outcome.critical_value - critical_value_sn(0.9, 3, 3).unwrap()).abs() < 1e-12);
    assert_eq!(outcome.reject, brute > outcome.critical_value);
}

#[test]
fn matrix_and_slice_bootstraps_agree() {
    let sim = simulate_dataset(&DgpSpec::new(120, 4)).unwrap();
    let instruments = build_instruments(&sim.dataset, &InstrumentSpec::hypercube(1, 2)).unwrap();
    let system = MomentSystem::new(DirectionSet::default_for(2, 0), instruments).unwrap();
    let opts = BootstrapOptions {
        draws: 200,
        seed: 11,
        multiplier: Multiplier::Gaussian,
    };
    let inf = Inference::new(DgpSpec::new(1, 0).mixing(), OutsideShareSet::band(0.05), system)
        .with_pi(0.1)
        .with_method(CriticalValueMethod::MultiplierBootstrap(opts));
    let theta = ParamTheta::new(1.1, vec![0.9], vec![1.0]);
    let outcome = inf.test(&sim.dataset, &theta).unwrap();
    let values = inf.moment_values(&sim.dataset, &theta).unwrap();
    let kept: Vec<Vec<f64>> = values
        .iter()
        .map(|row| row.iter().zip(&outcome.retained).filter(|(_, k)| **k).map(|(v, _)| *v).collect())
        .collect();
    let c = bootstrap_critical_value(&kept, 0.1, &opts, SignConvention::Violation).unwrap();
    assert!((c - outcome.critical_value).abs() < 1e-8, "{c} vs {}", outcome.critical_value);
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let f: f64 = rng.sample(StandardNormal);
            (0..p)
                .map(|_| rho.sqrt() * f + (1.0 - rho).sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

#[test]
fn single_moment_bootstrap_is_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values = normal_matrix(&mut rng, 2000, 1, 0.0);
    let opts = BootstrapOptions {
        draws: 2000,
        seed: 1,
        multiplier: Multiplier::Gaussian,
    };
    let c = bootstrap_critical_value(&values, 0.1, &opts, SignConvention::Violation).unwrap();
    assert!((c - 1.2816).abs() < 0.1, "{c}");
}

#[test]
fn bootstrap_is_below_self_normalized_under_dependence() {
    let (n, p, reps) = (94, 39, 40);
    let sn = critical_value_sn(0.1, p, n).unwrap();
    let below = (0..reps)
        .filter(|&r| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + r);
            let values = normal_matrix(&mut rng, n, p, 0.5);
            let opts = BootstrapOptions {
                draws: 500,
                seed: r,
                multiplier: Multiplier::Gaussian,
            };
            bootstrap_critical_value(&values, 0.1, &opts, SignConvention::Violation).unwrap() < sn
        })
        .count();
    assert!(below as f64 >= 0.9 * reps as f64, "{below}/{reps}");
}

#[test]
fn self_normalized_matches_quantile_oracle() {
    for &(pi, p, n) in &[(0.05, 10, 200), (0.2, 3, 50), (0.01, 1000, 5000)] {
        let c = critical_value_sn(pi, p, n).unwrap();
        assert!((c - common::sn_oracle(pi, p, n)).abs() < 1e-9);
    }
}

#[test]
fn self_normalized_value_is_theta_free() {
    let sim = simulate_dataset(&DgpSpec::new(150, 9)).unwrap();
    let instruments = build_instruments(&sim.dataset, &InstrumentSpec::hypercube(1, 2)).unwrap();
    let system = MomentSystem::new(DirectionSet::default_for(2, 0), instruments).unwrap();
    let inf = Inference::new(DgpSpec::new(1, 0).mixing(), OutsideShareSet::band(0.05), system).with_pi(0.1);
    let a = inf.test(&sim.dataset, &ParamTheta::new(1.0, vec![1.0], vec![1.0])).unwrap();
    let b = inf.test(&sim.dataset, &ParamTheta::new(0.3, vec![2.0], vec![0.5])).unwrap();
    assert_eq!(a.critical_value, b.critical_value);
}
