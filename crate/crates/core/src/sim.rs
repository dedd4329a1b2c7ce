//! Path simulation for original and tilted dynamics.
//!
//! A path starts in a fixed state, draws a unit-scale holding variable
//! `tau` for the current state, converts it to a sojourn `s = tau / q(x)`,
//! and jumps according to the embedded kernel until the accumulated time
//! first exceeds the horizon. The censored final sojourn is never resampled:
//! the residual time is credited to the last state.
//!
//! Each sample owns its RNG stream, derived from a master seed and the sample
//! index, so batches are reproducible for any worker count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::{ProbMeasure, ProcessSpec};
use crate::rate::g_unchecked;
use crate::tilt::{kernel_relative_entropy, TiltedDynamics};

/// Seed value reserved as a sentinel; rejected by [`simulate`].
pub const RESERVED_SEED: u64 = u64::MAX;

pub const DEFAULT_JUMP_BUDGET: usize = 10_000_000;

/// Which dynamics drive the path.
#[derive(Debug, Clone, Copy)]
pub enum Dynamics<'a> {
    Original,
    Tilted(&'a TiltedDynamics),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub start: usize,
    /// Maximum number of visited states per path.
    pub jump_budget: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, start: usize) -> Self {
        Self {
            horizon,
            start,
            jump_budget: DEFAULT_JUMP_BUDGET,
        }
    }
}

/// Alternating record of visited states and sojourns up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `X_0 .. X_{R_T - 1}`.
    pub states: Vec<usize>,
    /// Completed sojourns `s_1 .. s_{R_T - 1}`.
    pub sojourns: Vec<f64>,
    /// Unit-scale holding variables `tau_i = q(X_{i-1}) s_i` for all `R_T`
    /// visits, including the censored one.
    pub taus: Vec<f64>,
    /// Full length of the censored final sojourn.
    pub final_sojourn: f64,
    /// `T - sum_i s_i`.
    pub residual: f64,
    pub horizon: f64,
    /// Number of states on the embedded chain.
    pub n_states: usize,
}

impl Trajectory {
    /// `R_T`, the number of visited states (one plus the number of jumps).
    pub fn jump_count(&self) -> usize {
        self.states.len()
    }
}

/// Relative-entropy costs and log-likelihood ratio accumulated along a path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathCost {
    /// `sum_{i <= R_T} R(p(X_{i-1}, .) || alpha(X_{i-1}, .))`
    pub chain_entropy: f64,
    /// `sum_{i <= R_T} g(1 / (A kappa(X_{i-1})))`
    pub time_entropy: f64,
    /// `log dP / dP_tilted` of the observed path.
    pub log_likelihood_ratio: f64,
}

/// Per-state lookup tables for one set of dynamics.
struct Prepared {
    cdf: Vec<Vec<f64>>,
    q: Vec<f64>,
    speed: Vec<f64>,
    visit_chain: Vec<f64>,
    visit_time: Vec<f64>,
    /// `log alpha(x, y) - log p(x, y)`
    jump_log_ratio: Vec<Vec<f64>>,
    tilted: bool,
}

impl Prepared {
    fn new(spec: &ProcessSpec, dynamics: Dynamics<'_>) -> Result<Self> {
        let n = spec.n();
        let alpha = spec.alpha();
        match dynamics {
            Dynamics::Original => Ok(Self {
                cdf: (0..n).map(|x| cumulative(alpha.row(x))).collect(),
                q: spec.q().to_vec(),
                speed: vec![1.0; n],
                visit_chain: vec![0.0; n],
                visit_time: vec![0.0; n],
                jump_log_ratio: vec![vec![0.0; n]; n],
                tilted: false,
            }),
            Dynamics::Tilted(tilt) => {
                if tilt.n() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: tilt.n(),
                    });
                }
                let visit_chain = (0..n)
                    .map(|x| kernel_relative_entropy(tilt.p.row(x), alpha.row(x)).to_f64())
                    .collect();
                let visit_time = tilt
                    .speed
                    .iter()
                    .map(|&s| if s > 0.0 { g_unchecked(1.0 / s) } else { f64::INFINITY })
                    .collect();
                let jump_log_ratio = (0..n)
                    .map(|x| {
                        (0..n)
                            .map(|y| {
                                let p = tilt.p.get(x, y);
                                if p > 0.0 {
                                    alpha.get(x, y).ln() - p.ln()
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                Ok(Self {
                    cdf: (0..n).map(|x| cumulative(tilt.p.row(x))).collect(),
                    q: spec.q().to_vec(),
                    speed: tilt.speed.clone(),
                    visit_chain,
                    visit_time,
                    jump_log_ratio,
                    tilted: true,
                })
            }
        }
    }

    fn next_state(&self, x: usize, u: f64) -> Result<usize> {
        let cdf = &self.cdf[x];
        let total = *cdf.last().unwrap_or(&0.0);
        if !(total > 0.0) {
            return Err(Error::Unreachable(x));
        }
        let target = u * total;
        let idx = cdf.partition_point(|&c| c <= target);
        if idx < cdf.len() {
            return Ok(idx);
        }
        // rounding at the top of the row: last state with positive weight
        Ok(last_positive(cdf))
    }
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    row.iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

fn last_positive(cdf: &[f64]) -> usize {
    (0..cdf.len())
        .rev()
        .find(|&j| cdf[j] > if j == 0 { 0.0 } else { cdf[j - 1] })
        .unwrap_or(0)
}

/// Receives path events from the simulation loop.
trait PathRecorder {
    fn visit(&mut self, x: usize, tau: f64);
    fn sojourn(&mut self, x: usize, s: f64);
    fn finish(&mut self, x: usize, residual: f64, final_sojourn: f64);
}

struct FullRecorder {
    states: Vec<usize>,
    sojourns: Vec<f64>,
    taus: Vec<f64>,
    residual: f64,
    final_sojourn: f64,
}

impl PathRecorder for FullRecorder {
    fn visit(&mut self, x: usize, tau: f64) {
        self.states.push(x);
        self.taus.push(tau);
    }
    fn sojourn(&mut self, _x: usize, s: f64) {
        self.sojourns.push(s);
    }
    fn finish(&mut self, _x: usize, residual: f64, final_sojourn: f64) {
        self.residual = residual;
        self.final_sojourn = final_sojourn;
    }
}

struct OccupationRecorder {
    time: Vec<f64>,
    visits: usize,
}

impl PathRecorder for OccupationRecorder {
    fn visit(&mut self, _x: usize, _tau: f64) {
        self.visits += 1;
    }
    fn sojourn(&mut self, x: usize, s: f64) {
        self.time[x] += s;
    }
    fn finish(&mut self, x: usize, residual: f64, _final: f64) {
        self.time[x] += residual;
    }
}

fn check_config(spec: &ProcessSpec, config: &SimConfig, seed: u64) -> Result<()> {
    if seed == RESERVED_SEED {
        return Err(Error::Seed(seed));
    }
    if !(config.horizon > 0.0) || !config.horizon.is_finite() {
        return Err(Error::Parameter(format!(
            "horizon {} must be finite and > 0",
            config.horizon
        )));
    }
    if config.start >= spec.n() {
        return Err(Error::Dimension {
            expected: spec.n(),
            got: config.start + 1,
        });
    }
    if config.jump_budget == 0 {
        return Err(Error::Parameter("jump budget must be >= 1".into()));
    }
    Ok(())
}

fn run_path<R: PathRecorder>(
    prep: &Prepared,
    config: &SimConfig,
    seed: u64,
    rec: &mut R,
) -> Result<PathCost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = config.horizon;
    let mut cost = PathCost::default();
    let mut elapsed = 0.0;
    let mut x = config.start;
    let mut visits = 0usize;
    loop {
        visits += 1;
        if visits > config.jump_budget {
            return Err(Error::JumpBudget(config.jump_budget));
        }
        // unit exponential by inversion; 1 - U lies in (0, 1]
        let unit = -(1.0 - rng.random::<f64>()).ln();
        let speed = prep.speed[x];
        let tau = if speed > 0.0 { unit / speed } else { f64::INFINITY };
        let q = prep.q[x];
        let rate = speed * q;
        let s = tau / q;
        rec.visit(x, tau);
        cost.chain_entropy += prep.visit_chain[x];
        cost.time_entropy += prep.visit_time[x];
        if elapsed + s > horizon {
            let residual = horizon - elapsed;
            if prep.tilted {
                cost.log_likelihood_ratio += -q * residual + rate * residual;
            }
            rec.finish(x, residual, s);
            return Ok(cost);
        }
        elapsed += s;
        rec.sojourn(x, s);
        let y = prep.next_state(x, rng.random::<f64>())?;
        if prep.tilted {
            // log[q e^{-q s}] - log[rate e^{-rate s}] + log alpha - log p
            cost.log_likelihood_ratio +=
                -speed.ln() - q * s + rate * s + prep.jump_log_ratio[x][y];
        }
        x = y;
    }
}

/// Simulates one path on `[0, horizon]`.
pub fn simulate(
    spec: &ProcessSpec,
    dynamics: Dynamics<'_>,
    config: &SimConfig,
    seed: u64,
) -> Result<(Trajectory, PathCost)> {
    check_config(spec, config, seed)?;
    let prep = Prepared::new(spec, dynamics)?;
    let mut rec = FullRecorder {
        states: Vec::new(),
        sojourns: Vec::new(),
        taus: Vec::new(),
        residual: 0.0,
        final_sojourn: 0.0,
    };
    let cost = run_path(&prep, config, seed, &mut rec)?;
    Ok((
        Trajectory {
            states: rec.states,
            sojourns: rec.sojourns,
            taus: rec.taus,
            final_sojourn: rec.final_sojourn,
            residual: rec.residual,
            horizon: config.horizon,
            n_states: spec.n(),
        },
        cost,
    ))
}

/// Fraction of `[0, T]` spent in each state, residual included.
pub fn empirical_measure(traj: &Trajectory) -> ProbMeasure {
    let mut time = vec![0.0; traj.n_states];
    for (x, s) in traj.states.iter().zip(&traj.sojourns) {
        time[*x] += s;
    }
    if let Some(&last) = traj.states.last() {
        time[last] += traj.residual;
    }
    occupation_to_measure(time, traj.horizon)
}

fn occupation_to_measure(time: Vec<f64>, horizon: f64) -> ProbMeasure {
    let weights = time.into_iter().map(|t| t / horizon).collect();
    ProbMeasure::from_unnormalized(weights).expect("occupation times are nonnegative")
}

/// Per-sample seed: first output of the ChaCha stream `index` keyed by
/// `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    let s = rng.next_u64();
    if s == RESERVED_SEED {
        s ^ 1
    } else {
        s
    }
}

/// Result of one batch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub index: u64,
    pub seed: u64,
    /// `R_T`
    pub jump_count: usize,
    pub empirical: ProbMeasure,
    pub cost: PathCost,
}

/// Simulates `count` independent paths in parallel. Output is in sample-index
/// order and identical for every `workers` value.
pub fn batch_simulate(
    spec: &ProcessSpec,
    dynamics: Dynamics<'_>,
    config: &SimConfig,
    count: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<SampleSummary>> {
    if count == 0 {
        return Err(Error::Parameter("sample count must be >= 1".into()));
    }
    if workers == 0 {
        return Err(Error::Parameter("worker count must be >= 1".into()));
    }
    if master_seed == RESERVED_SEED {
        return Err(Error::Seed(master_seed));
    }
    check_config(spec, config, 0)?;
    let prep = Prepared::new(spec, dynamics)?;
    let n = spec.n();
    let one = |index: u64| -> Result<SampleSummary> {
        let seed = derive_seed(master_seed, index);
        let mut rec = OccupationRecorder {
            time: vec![0.0; n],
            visits: 0,
        };
        let cost = run_path(&prep, config, seed, &mut rec)?;
        Ok(SampleSummary {
            index,
            seed,
            jump_count: rec.visits,
            empirical: occupation_to_measure(rec.time, config.horizon),
            cost,
        })
    };
    if workers == 1 {
        return (0..count as u64).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| (0..count as u64).into_par_iter().map(one).collect())
}

/// Per-unit-time `(chain, time)` costs of a path.
pub fn running_cost_rate(cost: &PathCost, horizon: f64) -> (f64, f64) {
    (cost.chain_entropy / horizon, cost.time_entropy / horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{uniform_cell_model, validate_spec};
    use crate::tilt::synthesize_tilt;

    #[test]
    fn single_state_path() {
        let spec = validate_spec(None, &[2.0], &[vec![1.0]], 1e-9).unwrap();
        let (traj, cost) = simulate(&spec, Dynamics::Original, &SimConfig::new(10.0, 0), 7).unwrap();
        assert!(traj.states.iter().all(|&x| x == 0));
        assert_eq!(traj.jump_count(), traj.sojourns.len() + 1);
        assert_eq!(empirical_measure(&traj).weights(), &[1.0]);
        assert_eq!(cost, PathCost::default());
    }

    #[test]
    fn horizon_invariant() {
        let spec = uniform_cell_model(4).unwrap();
        for seed in 0..50 {
            let (traj, _) = simulate(&spec, Dynamics::Original, &SimConfig::new(5.0, 1), seed).unwrap();
            let done: f64 = traj.sojourns.iter().sum();
            assert!(done <= 5.0);
            assert!(done + traj.final_sojourn > 5.0);
            assert!(traj.residual >= 0.0 && traj.residual < traj.final_sojourn);
            assert!(traj.sojourns.iter().all(|&s| s > 0.0));
            assert_eq!(traj.taus.len(), traj.jump_count());
            let w: f64 = empirical_measure(&traj).weights().iter().sum();
            assert!((w - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hand_path_occupation() {
        let traj = Trajectory {
            states: vec![0, 1],
            sojourns: vec![1.0],
            taus: vec![1.0, 4.0],
            final_sojourn: 4.0,
            residual: 2.0,
            horizon: 3.0,
            n_states: 2,
        };
        let m = empirical_measure(&traj);
        assert!((m.weights()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn long_first_sojourn_gives_dirac() {
        let spec = uniform_cell_model(3).unwrap();
        let found = (0..200).find_map(|seed| {
            let (t, _) = simulate(&spec, Dynamics::Original, &SimConfig::new(2.0, 2), seed).unwrap();
            (t.jump_count() == 1).then_some(t)
        });
        let t = found.expect("some path holds past T");
        assert_eq!(empirical_measure(&t).weights(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn reserved_seed_rejected() {
        let spec = uniform_cell_model(2).unwrap();
        assert!(matches!(
            simulate(&spec, Dynamics::Original, &SimConfig::new(1.0, 0), RESERVED_SEED),
            Err(Error::Seed(_))
        ));
    }

    #[test]
    fn jump_budget_overflow() {
        let spec = uniform_cell_model(2).unwrap();
        let mut cfg = SimConfig::new(1000.0, 0);
        cfg.jump_budget = 10;
        assert!(matches!(
            simulate(&spec, Dynamics::Original, &cfg, 1),
            Err(Error::JumpBudget(10))
        ));
    }

    #[test]
    fn batch_matches_single_simulation() {
        let spec = uniform_cell_model(3).unwrap();
        let cfg = SimConfig::new(20.0, 0);
        let batch = batch_simulate(&spec, Dynamics::Original, &cfg, 1, 99, 1).unwrap();
        let (traj, cost) = simulate(&spec, Dynamics::Original, &cfg, derive_seed(99, 0)).unwrap();
        assert_eq!(batch[0].jump_count, traj.jump_count());
        assert_eq!(batch[0].cost, cost);
        let emp = empirical_measure(&traj);
        for (a, b) in batch[0].empirical.weights().iter().zip(emp.weights()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_is_worker_independent() {
        let spec = uniform_cell_model(4).unwrap();
        let (dspec, eta) = crate::process::dirac_approximation(4).unwrap();
        assert_eq!(dspec, spec);
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        let cfg = SimConfig::new(30.0, 0);
        let a = batch_simulate(&spec, Dynamics::Tilted(&tilt), &cfg, 64, 5, 1).unwrap();
        let b = batch_simulate(&spec, Dynamics::Tilted(&tilt), &cfg, 64, 5, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, s)| s.index == i as u64));
    }

    #[test]
    fn original_dynamics_have_zero_cost() {
        let spec = uniform_cell_model(4).unwrap();
        let (_, cost) = simulate(&spec, Dynamics::Original, &SimConfig::new(50.0, 0), 3).unwrap();
        assert_eq!(running_cost_rate(&cost, 50.0), (0.0, 0.0));
        assert_eq!(cost.log_likelihood_ratio, 0.0);
    }

    #[test]
    fn tilt_at_pi_has_zero_cost() {
        let spec = validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9).unwrap();
        let tilt = synthesize_tilt(&spec, &spec.pi_measure()).unwrap();
        let (_, cost) =
            simulate(&spec, Dynamics::Tilted(&tilt), &SimConfig::new(50.0, 0), 3).unwrap();
        assert!(cost.chain_entropy.abs() < 1e-12);
        assert!(cost.time_entropy.abs() < 1e-12);
        assert!(cost.log_likelihood_ratio.abs() < 1e-9);
    }

    #[test]
    fn zero_probability_states_never_drawn() {
        let spec = validate_spec(
            None,
            &[1.0; 3],
            &[
                vec![0.0, 1.0, 0.0],
                vec![0.5, 0.0, 0.5],
                vec![0.0, 1.0, 0.0],
            ],
            1e-9,
        )
        .unwrap();
        let prep = Prepared::new(&spec, Dynamics::Original).unwrap();
        for u in [0.0, 0.25, 0.5 - 1e-17, 0.5, 0.999_999_999_999] {
            let y = prep.next_state(1, u).unwrap();
            assert!(y == 0 || y == 2);
            assert_eq!(prep.next_state(0, u).unwrap(), 1);
        }
    }
}
