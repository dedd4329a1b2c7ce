//! The acceptance suite: exact identities, oracle agreement, statistical
//! checks at finite horizons and output determinism.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ldp::{
    eigen_limit, eigenvalue_oracle, estimate_event_decay, estimate_laplace, solve_laplace_inf,
    Event, Functional, LaplaceProblem, Method, SamplingPlan,
};
use crate::process::{
    dirac_approximation, hot_cell, tv_distance, uniform_cell_model, validate_spec, ProbMeasure,
    ProcessSpec,
};
use crate::rate::{ell, g, min_entropy_given_mean, rate_explicit, rate_variational_oracle, EntropyGrid};
use crate::report::{decay_csv, laplace_csv, simulate_csv};
use crate::sim::{batch_simulate, Dynamics, SimConfig};
use crate::testkit::{
    random_feasible_control, random_interior_target, random_linear_f, random_reversible_spec,
    random_target,
};
use crate::tilt::{entropy_decomposition, synthesize_tilt};

/// Sizes of the random batteries and Monte Carlo runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub random_specs: usize,
    pub targets_per_spec: usize,
    pub bound_pairs: usize,
    pub convexity_triples: usize,
    pub lln_paths: usize,
    pub lln_horizon: f64,
    pub laplace_samples: usize,
    pub holding_samples: usize,
    pub event_samples: usize,
    pub workers: usize,
}

impl Budget {
    pub fn full() -> Self {
        Self {
            random_specs: 100,
            targets_per_spec: 5,
            bound_pairs: 10_000,
            convexity_triples: 1_000,
            lln_paths: 200,
            lln_horizon: 2000.0,
            laplace_samples: 100_000,
            holding_samples: 100_000,
            event_samples: 20_000,
            workers: default_workers(),
        }
    }

    /// Smaller batteries and sample counts for a quick self-test.
    pub fn reduced() -> Self {
        Self {
            random_specs: 25,
            targets_per_spec: 5,
            bound_pairs: 2_000,
            convexity_triples: 300,
            lln_paths: 200,
            lln_horizon: 2000.0,
            laplace_samples: 50_000,
            holding_samples: 50_000,
            event_samples: 10_000,
            workers: default_workers(),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub limit: Duration,
}

impl CriterionResult {
    /// `PASS`/`FAIL`, id, name, timing and detail on one line.
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} ({:.2}s, limit {}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs(),
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str, u64); 10] = [
    (1, "dirac example exactness", 1),
    (2, "chain-cost closed form", 1),
    (3, "decomposition identity", 30),
    (4, "oracle triangle", 120),
    (5, "bound and shape", 60),
    (6, "ell/g identities", 10),
    (7, "tilted LLN and cost convergence", 120),
    (8, "finite-T Laplace exactness", 180),
    (9, "holding-time mechanism", 180),
    (10, "determinism", 60),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Runs criterion `id` (1 to 10).
pub fn run_criterion(id: u8, budget: &Budget) -> CriterionResult {
    let (_, name, limit) = CRITERIA
        .iter()
        .copied()
        .find(|c| c.0 == id)
        .unwrap_or_else(|| panic!("no criterion {id}"));
    let start = Instant::now();
    let res = match id {
        1 => dirac_exactness(),
        2 => chain_cost_closed_form(),
        3 => decomposition_identity(budget),
        4 => oracle_triangle(budget),
        5 => bound_and_shape(budget),
        6 => ell_g_identities(),
        7 => tilted_lln(budget),
        8 => finite_t_laplace(budget),
        9 => holding_time_mechanism(budget),
        _ => determinism(budget),
    };
    let elapsed = start.elapsed();
    let out = res.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    CriterionResult {
        id,
        name,
        passed: out.passed,
        detail: out.detail,
        elapsed,
        limit: Duration::from_secs(limit),
    }
}

pub fn run_all(budget: &Budget) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0, budget)).collect()
}

fn dirac_exactness() -> Result<Outcome> {
    let mut worst_rate = 0.0f64;
    let mut worst_a = 0.0f64;
    for k in 2..=50 {
        let (spec, eta) = dirac_approximation(k)?;
        let kf = k as f64;
        let a_exact = 4.0 * (kf - 1.0) / (kf * kf);
        let rate = rate_explicit(&spec, &eta)?.value;
        let tilt = synthesize_tilt(&spec, &eta)?;
        worst_rate = worst_rate.max((rate - (1.0 - a_exact)).abs());
        worst_a = worst_a.max((tilt.a - a_exact).abs());
    }
    Ok(outcome(
        worst_rate <= 1e-12 && worst_a <= 1e-12,
        format!("max |I - I_k| = {worst_rate:.2e}, max |A - A_k| = {worst_a:.2e}"),
    ))
}

fn chain_cost_exact(k: usize) -> f64 {
    let kf = k as f64;
    4.0 * (kf - 1.0) / (kf * kf) * (kf.ln() - 2f64.ln() - 0.5 * (kf - 1.0).ln())
}

fn chain_cost_of(k: usize) -> Result<f64> {
    let (spec, eta) = dirac_approximation(k)?;
    let tilt = synthesize_tilt(&spec, &eta)?;
    Ok(entropy_decomposition(&spec, &eta, &tilt)?.chain_cost.to_f64())
}

fn chain_cost_closed_form() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut costs = Vec::new();
    for k in 2..=50 {
        let c = chain_cost_of(k)?;
        worst = worst.max((c - chain_cost_exact(k)).abs());
        costs.push(c);
    }
    // decreasing once past the peak, and small for many cells
    let tail_decreasing = costs[18..].windows(2).all(|w| w[1] < w[0]);
    let far = chain_cost_of(200)?;
    let far_ok = (far - chain_cost_exact(200)).abs() <= 1e-12 && far < 0.05;
    Ok(outcome(
        worst <= 1e-12 && tail_decreasing && far_ok,
        format!(
            "max gap {worst:.2e}; k=50 cost {:.6}, k=200 cost {far:.6}; tail decreasing: {tail_decreasing}",
            costs[48]
        ),
    ))
}

/// The random battery shared by criteria 3 and 4.
fn battery(budget: &Budget) -> Vec<(ProcessSpec, Vec<ProbMeasure>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    (0..budget.random_specs)
        .map(|_| {
            let n = rng.random_range(3..=6);
            let spec = random_reversible_spec(&mut rng, n);
            let targets = (0..budget.targets_per_spec)
                .map(|_| random_interior_target(&mut rng, n))
                .collect();
            let f = random_linear_f(&mut rng, n);
            (spec, targets, f)
        })
        .collect()
}

fn decomposition_identity(budget: &Budget) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut lower_bound_gap = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1003);
    for (spec, targets, _) in battery(budget) {
        for eta in &targets {
            let rate = rate_explicit(&spec, eta)?.value;
            let tilt = synthesize_tilt(&spec, eta)?;
            let costs = entropy_decomposition(&spec, eta, &tilt)?;
            worst = worst.max((costs.total().to_f64() - rate).abs());
            let control = random_feasible_control(&mut rng, &spec, eta);
            lower_bound_gap = lower_bound_gap.min(control.objective(&spec).to_f64() - rate);
        }
    }
    let (spec, eta) = dirac_approximation(4)?;
    let tilt = synthesize_tilt(&spec, &eta)?;
    let time_cost = entropy_decomposition(&spec, &eta, &tilt)?.time_cost;
    Ok(outcome(
        worst <= 1e-10 && lower_bound_gap >= -1e-10,
        format!(
            "max |chain + time - I| = {worst:.2e}; min(random control - I) = {lower_bound_gap:.3e}; \
             4-cell holding cost = {time_cost:.7}"
        ),
    ))
}

fn oracle_triangle(budget: &Budget) -> Result<Outcome> {
    let mut worst_rate = 0.0f64;
    let mut worst_dual = 0.0f64;
    for (spec, targets, f) in battery(budget) {
        for eta in &targets {
            let explicit = rate_explicit(&spec, eta)?.value;
            let oracle = rate_variational_oracle(&spec, eta, 1e-10)?;
            worst_rate = worst_rate.max((explicit - oracle).abs());
        }
        let primal = solve_laplace_inf(&spec, &Functional::Linear(f.clone()))?.value;
        worst_dual = worst_dual.max((primal - eigen_limit(&spec, &f)?).abs());
    }
    Ok(outcome(
        worst_rate <= 1e-6 && worst_dual <= 1e-6,
        format!("max |explicit - variational| = {worst_rate:.2e}; max |laplace inf - eigen| = {worst_dual:.2e}"),
    ))
}

fn bound_and_shape(budget: &Budget) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut upper_slack = f64::INFINITY;
    let mut lowest = f64::INFINITY;
    let mut specs = Vec::new();
    for i in 0..budget.bound_pairs {
        if i % 10 == 0 {
            let n = rng.random_range(2..=6);
            specs.push(random_reversible_spec(&mut rng, n));
        }
        let spec = specs.last().expect("spec drawn");
        let eta = random_target(&mut rng, spec.n(), 0.3);
        let rate = rate_explicit(spec, &eta)?.value;
        upper_slack = upper_slack.min(spec.max_intensity() - rate);
        lowest = lowest.min(rate);
    }
    let mut convexity_gap = f64::INFINITY;
    for _ in 0..budget.convexity_triples {
        let spec = &specs[rng.random_range(0..specs.len())];
        let a = random_target(&mut rng, spec.n(), 0.3);
        let b = random_target(&mut rng, spec.n(), 0.3);
        let lambda = rng.random_range(0.0..=1.0);
        let mix = a.mix(&b, lambda)?;
        let lhs = rate_explicit(spec, &mix)?.value;
        let rhs = lambda * rate_explicit(spec, &a)?.value + (1.0 - lambda) * rate_explicit(spec, &b)?.value;
        convexity_gap = convexity_gap.min(rhs - lhs);
    }
    Ok(outcome(
        upper_slack >= -1e-12 && lowest >= -1e-12 && convexity_gap >= -1e-10,
        format!(
            "min(K2 - I) = {upper_slack:.3e}; min I = {lowest:.3e}; min convexity slack = {convexity_gap:.3e}"
        ),
    ))
}

fn ell_g_identities() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for i in 0..200 {
        let x = 10f64.powf(-6.0 + 12.0 * i as f64 / 199.0);
        let lhs = g(x)?;
        let rhs = x * ell(1.0 / x)?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    let mut brute_gap = 0.0f64;
    for b in [0.5, 1.0, 2.0] {
        let check = min_entropy_given_mean(b, EntropyGrid::for_mean(b))?;
        brute_gap = brute_gap.max((check.brute - check.analytic).abs());
    }
    Ok(outcome(
        worst <= 1e-14 && brute_gap <= 1e-3,
        format!("max relative |g(x) - x ell(1/x)| = {worst:.2e}; max |brute - g| = {brute_gap:.2e}"),
    ))
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn tilted_lln(budget: &Budget) -> Result<Outcome> {
    let (spec, eta) = dirac_approximation(4)?;
    let tilt = synthesize_tilt(&spec, &eta)?;
    let horizon = budget.lln_horizon;
    let batch = batch_simulate(
        &spec,
        Dynamics::Tilted(&tilt),
        &SimConfig::new(horizon, 0),
        budget.lln_paths,
        0x5eed_0007,
        budget.workers,
    )?;
    let n = spec.n();
    let mut mean = vec![0.0; n];
    for s in &batch {
        for (m, w) in mean.iter_mut().zip(s.empirical.weights()) {
            *m += w / batch.len() as f64;
        }
    }
    let tv = tv_distance(&mean, eta.weights());
    let costs: Vec<f64> = batch
        .iter()
        .map(|s| (s.cost.chain_entropy + s.cost.time_entropy) / horizon)
        .collect();
    let jumps: Vec<f64> = batch.iter().map(|s| s.jump_count as f64 / horizon).collect();
    let (cost, cost_se) = mean_and_se(&costs);
    let (rate, rate_se) = mean_and_se(&jumps);
    let cost_ok = (cost - 0.25).abs() <= 3.0 * cost_se;
    let rate_ok = (rate - 0.75).abs() <= 3.0 * rate_se;
    Ok(outcome(
        tv <= 0.05 && cost_ok && rate_ok,
        format!(
            "TV = {tv:.4}; cost/T = {cost:.5} +- {cost_se:.5} (target 0.25); \
             R_T/T = {rate:.5} +- {rate_se:.5} (target 0.75)"
        ),
    ))
}

/// Linear functionals on small models checked against the exact
/// finite-horizon value.
fn laplace_cases() -> Result<Vec<(&'static str, ProcessSpec, Vec<f64>)>> {
    let two = validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9)?;
    let uniform = uniform_cell_model(4)?;
    let mut hot = vec![0.0; 4];
    hot[hot_cell(4)] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let random = random_reversible_spec(&mut rng, 3);
    let f: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    Ok(vec![
        ("2-state f=(0,1)", two, vec![0.0, 1.0]),
        ("4-cell hot indicator", uniform, hot),
        ("random 3-state", random, f),
    ])
}

fn finite_t_laplace(budget: &Budget) -> Result<Outcome> {
    let horizon = 50.0;
    let mut passed = true;
    let mut parts = Vec::new();
    for (i, (name, spec, f)) in laplace_cases()?.into_iter().enumerate() {
        let exact = eigenvalue_oracle(&spec, &f, horizon, 0)?.exact_finite_t;
        let problem = LaplaceProblem {
            spec: &spec,
            functional: Functional::Linear(f),
            plan: SamplingPlan {
                horizons: vec![horizon],
                samples: budget.laplace_samples,
                seed: 0x5eed_0080 + i as u64,
                start: 0,
                workers: budget.workers,
            },
        };
        let e = estimate_laplace(&problem, None)?[0];
        let z = (e.estimate - exact) / e.std_error;
        passed &= z.abs() <= 3.0;
        parts.push(format!(
            "{name}: {:.5} vs {exact:.5} ({z:+.2} s.e.)",
            e.estimate
        ));
    }
    Ok(outcome(passed, parts.join("; ")))
}

fn holding_time_mechanism(budget: &Budget) -> Result<Outcome> {
    let spec = uniform_cell_model(4)?;
    let batch = batch_simulate(
        &spec,
        Dynamics::Original,
        &SimConfig::new(3.0, 0),
        budget.holding_samples,
        0x5eed_0009,
        budget.workers,
    )?;
    let n = batch.len() as f64;
    let freq = batch.iter().filter(|s| s.jump_count == 1).count() as f64 / n;
    let p = (-3.0f64).exp();
    let se = (p * (1.0 - p) / n).sqrt();
    let holding_ok = (freq - p).abs() <= 3.0 * se;

    let mut f = vec![0.0; 4];
    f[hot_cell(4)] = 1.0;
    let decay = estimate_event_decay(
        &spec,
        &Event::HalfSpace { f, c: 0.99 },
        &SamplingPlan {
            horizons: vec![30.0],
            samples: budget.event_samples,
            seed: 0x5eed_0090,
            start: 0,
            workers: budget.workers,
        },
    )?;
    let is = decay
        .estimates
        .iter()
        .find(|e| e.method == Method::ImportanceSampled)
        .expect("importance row");
    let decay_ok = is.estimate <= 1.1;
    Ok(outcome(
        holding_ok && decay_ok,
        format!(
            "P(first sojourn > 3) = {freq:.5} vs e^-3 = {p:.5} ({:+.2} s.e.); \
             concentration decay at T=30: {:.4} +- {:.4} (prediction {:.4})",
            (freq - p) / se,
            is.estimate,
            is.std_error,
            decay.minimum.value
        ),
    ))
}

fn determinism(budget: &Budget) -> Result<Outcome> {
    let (spec, eta) = dirac_approximation(4)?;
    let plan = |workers| SamplingPlan {
        horizons: vec![5.0, 10.0],
        samples: 2_000,
        seed: 0x5eed_0010,
        start: 0,
        workers,
    };
    let mut hot = vec![0.0; 4];
    hot[hot_cell(4)] = 1.0;
    let event = Event::HalfSpace {
        f: hot.clone(),
        c: 0.5,
    };
    let run = |workers: usize| -> Result<Vec<String>> {
        Ok(vec![
            simulate_csv(&spec, None, &SimConfig::new(20.0, 0), 500, 11, workers)?,
            simulate_csv(&spec, Some(&eta), &SimConfig::new(20.0, 1), 500, 12, workers)?,
            laplace_csv(&spec, &Functional::Linear(hot.clone()), &plan(workers))?,
            decay_csv(&spec, &event, &plan(workers))?,
        ])
    };
    let reference = run(1)?;
    let mut counts = Vec::new();
    for workers in [2, 3, budget.workers.max(4)] {
        let other = run(workers)?;
        if other != reference {
            return Ok(outcome(false, format!("outputs differ at {workers} workers")));
        }
        counts.push(workers.to_string());
    }
    let rerun = run(1)? == reference;
    Ok(outcome(
        rerun,
        format!(
            "simulate/laplace/decay CSVs identical for workers 1, {} and on rerun: {rerun}",
            counts.join(", ")
        ),
    ))
}
