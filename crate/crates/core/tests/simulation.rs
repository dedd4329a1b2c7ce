use jumpldp::process::{dirac_approximation, hot_cell, tv_distance, uniform_cell_model, validate_spec, ProbMeasure};
use jumpldp::sim::{batch_simulate, derive_seed, empirical_measure, running_cost_rate, simulate, Dynamics, SimConfig};
use jumpldp::tilt::synthesize_tilt;

/// Kolmogorov-Smirnov distance of `samples` from Exp(rate).
fn ks_exponential(mut samples: Vec<f64>, rate: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let cdf = 1.0 - (-rate * s).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 1e-3.
fn ks_critical(n: usize) -> f64 {
    1.949 / (n as f64).sqrt()
}

/// Full holding times of every visit to `state`, censored visits included.
fn holding_samples(dynamics: Dynamics<'_>, state: usize, want: usize) -> Vec<f64> {
    let spec = uniform_cell_model(4).unwrap();
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < want {
        let (traj, _) = simulate(&spec, dynamics, &SimConfig::new(200.0, state), derive_seed(17, seed)).unwrap();
        seed += 1;
        let q = spec.q();
        for (x, tau) in traj.states.iter().zip(&traj.taus) {
            if *x == state && out.len() < want {
                out.push(tau / q[*x]);
            }
        }
    }
    out
}

#[test]
fn original_sojourns_are_exponential() {
    let s = holding_samples(Dynamics::Original, 1, 10_000);
    let d = ks_exponential(s, 1.0);
    assert!(d < ks_critical(10_000), "KS distance {d}");
}

#[test]
fn tilted_hot_cell_sojourn_mean_two() {
    let (spec, eta) = dirac_approximation(4).unwrap();
    let tilt = synthesize_tilt(&spec, &eta).unwrap();
    let hot = hot_cell(4);
    let s = holding_samples(Dynamics::Tilted(&tilt), hot, 10_000);
    let rate = tilt.speed[hot] * spec.q()[hot];
    assert!(ks_exponential(s.clone(), rate) < ks_critical(10_000));
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let se = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} +- {se}");
    // the cold cells hold for 2/3 on average
    let cold = holding_samples(Dynamics::Tilted(&tilt), 0, 10_000);
    let cold_rate = tilt.speed[0] * spec.q()[0];
    assert!((cold_rate - 1.5).abs() < 1e-12);
    assert!(ks_exponential(cold, cold_rate) < ks_critical(10_000));
}

#[test]
fn first_sojourn_exceeds_horizon_with_probability_e_minus_t() {
    let spec = uniform_cell_model(4).unwrap();
    let n = 100_000;
    let batch = batch_simulate(&spec, Dynamics::Original, &SimConfig::new(3.0, 0), n, 4, 4).unwrap();
    let freq = batch.iter().filter(|s| s.jump_count == 1).count() as f64 / n as f64;
    let p = (-3.0f64).exp();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() < 3.0 * se, "{freq} vs {p}");
    for s in batch.iter().filter(|s| s.jump_count == 1) {
        assert_eq!(s.empirical.weights(), &[1.0, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn single_state_counts_self_jumps() {
    let spec = validate_spec(None, &[1.5], &[vec![1.0]], 1e-9).unwrap();
    let (traj, _) = simulate(&spec, Dynamics::Original, &SimConfig::new(40.0, 0), 8).unwrap();
    assert_eq!(traj.jump_count(), 1 + traj.sojourns.len());
    assert!(traj.jump_count() > 1);
    assert_eq!(empirical_measure(&traj).weights(), &[1.0]);
}

#[test]
fn original_lln_towards_pi() {
    let spec = uniform_cell_model(4).unwrap();
    let batch = batch_simulate(&spec, Dynamics::Original, &SimConfig::new(100.0, 0), 10_000, 21, 4).unwrap();
    let mut mean = vec![0.0; 4];
    for s in &batch {
        for (m, w) in mean.iter_mut().zip(s.empirical.weights()) {
            *m += w / batch.len() as f64;
        }
    }
    assert!(tv_distance(&mean, spec.pi()) < 0.01);

    let (traj, _) = simulate(&spec, Dynamics::Original, &SimConfig::new(2000.0, 0), 5).unwrap();
    assert!(tv_distance(empirical_measure(&traj).weights(), spec.pi()) < 0.05);
}

#[test]
fn tilted_lln_over_twenty_seeds() {
    let (spec, eta) = dirac_approximation(4).unwrap();
    let tilt = synthesize_tilt(&spec, &eta).unwrap();
    let mut mean = vec![0.0; 4];
    for seed in 0..20 {
        let (traj, _) = simulate(&spec, Dynamics::Tilted(&tilt), &SimConfig::new(2000.0, 0), seed).unwrap();
        for (m, w) in mean.iter_mut().zip(empirical_measure(&traj).weights()) {
            *m += w / 20.0;
        }
    }
    assert!(tv_distance(&mean, eta.weights()) <= 0.05);
}

#[test]
fn two_state_tilt_jump_rate() {
    let spec = validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9).unwrap();
    let eta = ProbMeasure::new(vec![0.5, 0.5]).unwrap();
    let tilt = synthesize_tilt(&spec, &eta).unwrap();
    let horizon = 500.0;
    let batch = batch_simulate(&spec, Dynamics::Tilted(&tilt), &SimConfig::new(horizon, 0), 200, 9, 4).unwrap();
    let r: Vec<f64> = batch.iter().map(|s| s.jump_count as f64 / horizon).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let se = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - 2f64.sqrt()).abs() < 3.0 * se + 1.0 / horizon, "{mean} +- {se}");
    // chain cost vanishes here: the tilted kernel is the swap itself
    for s in &batch {
        let (chain, time) = running_cost_rate(&s.cost, horizon);
        assert!(chain.abs() < 1e-12);
        assert!(time > 0.0);
    }
}

fn poisson_cdf(k: usize, mean: f64) -> f64 {
    let mut term = (-mean).exp();
    let mut total = term;
    for j in 1..=k {
        term *= mean / j as f64;
        total += term;
    }
    total
}

#[test]
fn importance_weights_recover_jump_count_law() {
    // q = 1 everywhere: R_T - 1 is Poisson(T) under the original dynamics
    let spec = uniform_cell_model(3).unwrap();
    let eta = ProbMeasure::new(vec![0.6, 0.3, 0.1]).unwrap();
    let tilt = synthesize_tilt(&spec, &eta).unwrap();
    let horizon = 4.0;
    let n = 100_000;
    let batch = batch_simulate(&spec, Dynamics::Tilted(&tilt), &SimConfig::new(horizon, 0), n, 33, 4).unwrap();
    for k in [2usize, 4, 6] {
        let h: Vec<f64> = batch
            .iter()
            .map(|s| if s.jump_count <= k { s.cost.log_likelihood_ratio.exp() } else { 0.0 })
            .collect();
        let mean = h.iter().sum::<f64>() / n as f64;
        let se = (h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        let exact = poisson_cdf(k - 1, horizon);
        assert!((mean - exact).abs() < 3.0 * se, "k={k}: {mean} +- {se} vs {exact}");
    }
}

#[test]
fn path_costs_are_finite_and_nonnegative_for_interior_tilts() {
    let spec = uniform_cell_model(5).unwrap();
    let eta = ProbMeasure::new(vec![0.1, 0.2, 0.4, 0.2, 0.1]).unwrap();
    let tilt = synthesize_tilt(&spec, &eta).unwrap();
    let batch = batch_simulate(&spec, Dynamics::Tilted(&tilt), &SimConfig::new(50.0, 2), 500, 2, 2).unwrap();
    for s in &batch {
        assert!(s.cost.chain_entropy >= 0.0 && s.cost.chain_entropy.is_finite());
        assert!(s.cost.time_entropy >= 0.0 && s.cost.time_entropy.is_finite());
        assert!(s.cost.log_likelihood_ratio.is_finite());
        let total: f64 = s.empirical.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }
}
