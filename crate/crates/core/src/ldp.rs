//! Laplace functionals and rare-event decay rates.
//!
//! Variational side: `inf_eta [F(eta) + I(eta)]` over the simplex, solved by
//! entropic mirror descent with Newton steps in the tangent space of the
//! simplex, and the principal eigenvalue of `L - diag f` as an independent
//! oracle for linear `F`.
//!
//! Sampling side: Monte Carlo estimates of `-(1/T) log E[exp(-T F(eta_T))]`
//! and of `-(1/T) log P(eta_T in E)`, either naive or importance-sampled under
//! a tilted dynamics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::process::{generator_matrix, ProbMeasure, ProcessSpec};
use crate::rate::rate_explicit;
use crate::sim::{batch_simulate, derive_seed, Dynamics, SimConfig};
use crate::tilt::{synthesize_tilt, TiltedDynamics};

/// First-order optimality target of [`solve_laplace_inf`].
pub const STATIONARITY_TOL: f64 = 1e-8;

pub const MAX_ITERATIONS: usize = 10_000;

/// Smallest sample budget accepted per horizon.
pub const MIN_SAMPLES: usize = 1_000;

/// Effective sample size below which importance weights are rejected.
pub const MIN_ESS: f64 = 10.0;

/// Smoothing scale of the total-variation distance in penalty functionals.
pub const TV_SMOOTHING: f64 = 1e-5;

/// Penalty weights used for event-constrained minimization.
pub const PENALTY_SCHEDULE: [f64; 3] = [1e3, 1e4, 1e5];

/// Functionals of the empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// `<f, eta>`
    Linear(Vec<f64>),
    /// `weight * max(0, c - <f, eta>)^2`
    HalfSpacePenalty { f: Vec<f64>, c: f64, weight: f64 },
    /// `weight * max(0, TV_eps(eta, target) - radius)^2`
    TvBallPenalty {
        target: Vec<f64>,
        radius: f64,
        weight: f64,
    },
}

fn smoothed_tv(eta: &[f64], target: &[f64]) -> f64 {
    let e = TV_SMOOTHING;
    0.5 * eta
        .iter()
        .zip(target)
        .map(|(a, b)| ((a - b).powi(2) + e * e).sqrt() - e)
        .sum::<f64>()
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Domain(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}

impl Functional {
    pub fn zero(n: usize) -> Self {
        Functional::Linear(vec![0.0; n])
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let check_len = |len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Dimension {
                    expected: n,
                    got: len,
                })
            }
        };
        match self {
            Functional::Linear(f) => {
                check_len(f.len())?;
                check_finite("f", f)
            }
            Functional::HalfSpacePenalty { f, c, weight } => {
                check_len(f.len())?;
                check_finite("f", f)?;
                check_finite("c", &[*c, *weight])?;
                if *weight < 0.0 {
                    return Err(Error::Parameter("penalty weight must be >= 0".into()));
                }
                Ok(())
            }
            Functional::TvBallPenalty {
                target,
                radius,
                weight,
            } => {
                check_len(target.len())?;
                ProbMeasure::new(target.clone())?;
                check_finite("radius", &[*radius, *weight])?;
                if *radius < 0.0 || *weight < 0.0 {
                    return Err(Error::Parameter(
                        "radius and penalty weight must be >= 0".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        match self {
            Functional::Linear(f) => dot(f, eta),
            Functional::HalfSpacePenalty { f, c, weight } => {
                weight * (c - dot(f, eta)).max(0.0).powi(2)
            }
            Functional::TvBallPenalty {
                target,
                radius,
                weight,
            } => weight * (smoothed_tv(eta, target) - radius).max(0.0).powi(2),
        }
    }

    fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        match self {
            Functional::Linear(f) => f.clone(),
            Functional::HalfSpacePenalty { f, c, weight } => {
                let gap = (c - dot(f, eta)).max(0.0);
                f.iter().map(|fx| -2.0 * weight * gap * fx).collect()
            }
            Functional::TvBallPenalty {
                target,
                radius,
                weight,
            } => {
                let gap = (smoothed_tv(eta, target) - radius).max(0.0);
                tv_gradient(eta, target)
                    .into_iter()
                    .map(|d| 2.0 * weight * gap * d)
                    .collect()
            }
        }
    }

    fn hessian(&self, eta: &[f64]) -> DMatrix<f64> {
        let n = eta.len();
        match self {
            Functional::Linear(_) => DMatrix::zeros(n, n),
            Functional::HalfSpacePenalty { f, c, weight } => {
                if c - dot(f, eta) > 0.0 {
                    DMatrix::from_fn(n, n, |i, j| 2.0 * weight * f[i] * f[j])
                } else {
                    DMatrix::zeros(n, n)
                }
            }
            Functional::TvBallPenalty {
                target,
                radius,
                weight,
            } => {
                let gap = smoothed_tv(eta, target) - radius;
                if gap <= 0.0 {
                    return DMatrix::zeros(n, n);
                }
                let d = tv_gradient(eta, target);
                let e2 = TV_SMOOTHING * TV_SMOOTHING;
                DMatrix::from_fn(n, n, |i, j| {
                    let mut h = 2.0 * weight * d[i] * d[j];
                    if i == j {
                        let r = (eta[i] - target[i]).powi(2) + e2;
                        h += 2.0 * weight * gap * 0.5 * e2 / (r * r.sqrt());
                    }
                    h
                })
            }
        }
    }
}

fn tv_gradient(eta: &[f64], target: &[f64]) -> Vec<f64> {
    let e2 = TV_SMOOTHING * TV_SMOOTHING;
    eta.iter()
        .zip(target)
        .map(|(a, b)| 0.5 * (a - b) / ((a - b).powi(2) + e2).sqrt())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `I(eta) = sum q eta - sum_{x,y} K(x,y) sqrt(eta(x) eta(y))` with the
/// symmetric `K(x,y) = q(x) alpha(x,y) sqrt(pi(x) / pi(y))`.
struct RateModel {
    q: Vec<f64>,
    k: DMatrix<f64>,
}

impl RateModel {
    fn new(spec: &ProcessSpec) -> Self {
        let pi = spec.pi();
        let n = spec.n();
        Self {
            q: spec.q().to_vec(),
            k: DMatrix::from_fn(n, n, |x, y| {
                spec.q()[x] * spec.alpha().get(x, y) * (pi[x] / pi[y]).sqrt()
            }),
        }
    }

    fn value(&self, eta: &[f64]) -> f64 {
        let s: Vec<f64> = eta.iter().map(|e| e.sqrt()).collect();
        let n = eta.len();
        let mut pair = 0.0;
        for x in 0..n {
            for y in 0..n {
                pair += self.k[(x, y)] * s[x] * s[y];
            }
        }
        dot(&self.q, eta) - pair
    }

    fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let n = eta.len();
        let s: Vec<f64> = eta.iter().map(|e| e.sqrt()).collect();
        (0..n)
            .map(|x| {
                let row: f64 = (0..n).map(|y| self.k[(x, y)] * s[y]).sum();
                self.q[x] - row / s[x]
            })
            .collect()
    }

    fn hessian(&self, eta: &[f64]) -> DMatrix<f64> {
        let n = eta.len();
        let s: Vec<f64> = eta.iter().map(|e| e.sqrt()).collect();
        DMatrix::from_fn(n, n, |x, y| {
            if x == y {
                let off: f64 = (0..n).filter(|&z| z != x).map(|z| self.k[(x, z)] * s[z]).sum();
                0.5 * off / (eta[x] * s[x])
            } else {
                -0.5 * self.k[(x, y)] / (s[x] * s[y])
            }
        })
    }
}

/// Minimizer of `F + I` over the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceSolution {
    pub eta: ProbMeasure,
    pub value: f64,
    pub iterations: usize,
    /// `sqrt(sum eta (grad - <grad, eta>)^2)` at the returned point.
    pub stationarity: f64,
}

fn stationarity(eta: &[f64], grad: &[f64]) -> f64 {
    let mean = dot(eta, grad);
    eta.iter()
        .zip(grad)
        .map(|(e, g)| e * (g - mean).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| x * (x / y).ln())
        .sum()
}

struct Composite<'a> {
    rate: RateModel,
    functional: &'a Functional,
}

impl Composite<'_> {
    fn value(&self, eta: &[f64]) -> f64 {
        self.rate.value(eta) + self.functional.value(eta)
    }

    fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let mut g = self.rate.gradient(eta);
        for (gi, fi) in g.iter_mut().zip(self.functional.gradient(eta)) {
            *gi += fi;
        }
        g
    }

    fn hessian(&self, eta: &[f64]) -> DMatrix<f64> {
        self.rate.hessian(eta) + self.functional.hessian(eta)
    }

    /// Newton direction restricted to `sum d = 0`, regularized in the
    /// entropic metric.
    fn newton_direction(&self, eta: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
        let n = eta.len();
        let h = self.hessian(eta);
        let scale = (0..n).map(|i| h[(i, i)].abs() * eta[i]).fold(0.0, f64::max);
        let delta = 1e-12 * scale.max(1e-300);
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = h[(i, j)];
            }
            kkt[(i, i)] += delta / eta[i];
            kkt[(i, n)] = 1.0;
            kkt[(n, i)] = 1.0;
            rhs[i] = -grad[i];
        }
        let sol = kkt.lu().solve(&rhs)?;
        let d: Vec<f64> = sol.iter().take(n).copied().collect();
        d.iter().all(|v| v.is_finite()).then_some(d)
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Minimizes `F(eta) + I(eta)` over the probability simplex.
pub fn solve_laplace_inf(spec: &ProcessSpec, functional: &Functional) -> Result<LaplaceSolution> {
    solve_from(spec, functional, spec.pi().to_vec())
}

fn solve_from(
    spec: &ProcessSpec,
    functional: &Functional,
    start: Vec<f64>,
) -> Result<LaplaceSolution> {
    functional.validate(spec.n())?;
    let obj = Composite {
        rate: RateModel::new(spec),
        functional,
    };
    let mut eta = start;
    let mut phi = obj.value(&eta);
    let mut step = 1.0 / spec.max_intensity();
    for iter in 0..MAX_ITERATIONS {
        let grad = obj.gradient(&eta);
        let stat = stationarity(&eta, &grad);
        if !phi.is_finite() || !stat.is_finite() {
            return Err(Error::Domain("objective is not finite along the iterates".into()));
        }
        if stat <= STATIONARITY_TOL {
            return finish(spec, functional, eta, iter, stat);
        }
        if let Some(next) = newton_step(&obj, &eta, &grad, phi, stat) {
            eta = next;
            phi = obj.value(&eta);
            continue;
        }
        // entropic mirror step with backtracking
        let mean = dot(&eta, &grad);
        let mut accepted = false;
        for _ in 0..80 {
            let cand = normalize(
                eta.iter()
                    .zip(&grad)
                    .map(|(e, g)| e * (-step * (g - mean)).exp())
                    .collect(),
            );
            let val = obj.value(&cand);
            let lin: f64 = grad.iter().zip(cand.iter().zip(&eta)).map(|(g, (c, e))| g * (c - e)).sum();
            if val.is_finite() && val <= phi + lin + kl(&cand, &eta) / step {
                eta = cand;
                phi = val;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(non_convergence(iter, stat, &eta, phi));
        }
    }
    let grad = obj.gradient(&eta);
    let stat = stationarity(&eta, &grad);
    if stat <= STATIONARITY_TOL {
        return finish(spec, functional, eta, MAX_ITERATIONS, stat);
    }
    Err(non_convergence(MAX_ITERATIONS, stat, &eta, phi))
}

fn newton_step(
    obj: &Composite<'_>,
    eta: &[f64],
    grad: &[f64],
    phi: f64,
    stat: f64,
) -> Option<Vec<f64>> {
    let d = obj.newton_direction(eta, grad)?;
    let slope = dot(grad, &d);
    if !(slope < 0.0) {
        return None;
    }
    let mut s: f64 = 1.0;
    for (e, di) in eta.iter().zip(&d) {
        if *di < 0.0 {
            s = s.min(-0.9 * e / di);
        }
    }
    for _ in 0..40 {
        let cand = normalize(eta.iter().zip(&d).map(|(e, di)| e + s * di).collect());
        if cand.iter().all(|v| *v > 0.0) {
            let val = obj.value(&cand);
            if val <= phi + 1e-4 * s * slope {
                return Some(cand);
            }
            // near the optimum, objective differences drown in rounding
            if s == 1.0 && stationarity(&cand, &obj.gradient(&cand)) < 0.5 * stat {
                return Some(cand);
            }
        }
        s *= 0.5;
    }
    None
}

fn non_convergence(iterations: usize, residual: f64, eta: &[f64], phi: f64) -> Error {
    Error::NonConvergence {
        iterations,
        residual,
        best: Some(Box::new((eta.to_vec(), phi))),
    }
}

fn finish(
    spec: &ProcessSpec,
    functional: &Functional,
    eta: Vec<f64>,
    iterations: usize,
    stationarity: f64,
) -> Result<LaplaceSolution> {
    let eta = ProbMeasure::from_unnormalized(eta)?;
    let value = functional.value(eta.weights()) + rate_explicit(spec, &eta)?.value;
    Ok(LaplaceSolution {
        eta,
        value,
        iterations,
        stationarity,
    })
}

/// Exact finite-horizon and limiting values of
/// `-(1/T) log E_start[exp(-T <f, eta_T>)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOracle {
    pub exact_finite_t: f64,
    pub limit: f64,
}

/// `-lambda_max(L - diag f)` via the `pi`-symmetrized matrix.
pub fn eigen_limit(spec: &ProcessSpec, f: &[f64]) -> Result<f64> {
    spec.check_len(f.len())?;
    check_finite("f", f)?;
    let n = spec.n();
    let m = generator_matrix(spec) - DMatrix::from_diagonal(&DVector::from_column_slice(f));
    let root: Vec<f64> = spec.pi().iter().map(|p| p.sqrt()).collect();
    if root.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::EigenFailure("pi has a zero or non-finite entry".into()));
    }
    let s = DMatrix::from_fn(n, n, |x, y| m[(x, y)] * root[x] / root[y]);
    let sym = (&s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    Ok(-top)
}

/// Feynman-Kac values for the linear functional `f`, started at `start`.
pub fn eigenvalue_oracle(
    spec: &ProcessSpec,
    f: &[f64],
    horizon: f64,
    start: usize,
) -> Result<EigenOracle> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Parameter(format!("horizon {horizon} must be finite and > 0")));
    }
    if start >= spec.n() {
        return Err(Error::Dimension {
            expected: spec.n(),
            got: start + 1,
        });
    }
    let limit = eigen_limit(spec, f)?;
    let n = spec.n();
    // shift by the principal eigenvalue so the exponential stays O(1)
    let shifted = (generator_matrix(spec)
        - DMatrix::from_diagonal(&DVector::from_column_slice(f))
        + DMatrix::identity(n, n) * limit)
        * horizon;
    let e = shifted.exp();
    let mass: f64 = e.row(start).iter().sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::EigenFailure(format!("matrix exponential mass {mass}")));
    }
    Ok(EigenOracle {
        exact_finite_t: limit - mass.ln() / horizon,
        limit,
    })
}

/// Sampling design shared by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub horizons: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub start: usize,
    pub workers: usize,
}

impl SamplingPlan {
    fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::Parameter("at least one horizon is required".into()));
        }
        if let Some(t) = self.horizons.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::Parameter(format!("horizon {t} must be finite and > 0")));
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::Parameter(format!(
                "sample budget {} is below {MIN_SAMPLES}",
                self.samples
            )));
        }
        Ok(())
    }

    fn master_seed(&self, horizon_index: usize, method: Method) -> u64 {
        let offset = match method {
            Method::Naive => 0,
            Method::ImportanceSampled => 1,
        };
        derive_seed(self.seed, 2 * horizon_index as u64 + offset)
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceProblem<'a> {
    pub spec: &'a ProcessSpec,
    pub functional: Functional,
    pub plan: SamplingPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    ImportanceSampled,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::ImportanceSampled => "importance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateStatus {
    Ok,
    /// No sample hit the event; `estimate` is the one-sided bound
    /// `log(N) / T` and `std_error` is zero.
    ZeroHits,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStatus::Ok => "ok",
            EstimateStatus::ZeroHits => "zero_hits",
        }
    }
}

/// One decay-rate estimate `-(1/T) log(quantity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayEstimate {
    pub horizon: f64,
    pub method: Method,
    pub estimate: f64,
    /// Delta-method standard error of `estimate`.
    pub std_error: f64,
    pub prediction: f64,
    pub ess: f64,
    /// Samples with nonzero weight.
    pub hits: usize,
    pub samples: usize,
    pub status: EstimateStatus,
}

/// `-(1/T) log mean(exp(y))` with its delta-method standard error and the
/// effective sample size. Entries equal to `-inf` carry zero weight.
struct WeightedMean {
    log_mean: f64,
    rel_sd: f64,
    ess: f64,
    hits: usize,
}

fn weighted_mean(logs: &[f64]) -> Option<WeightedMean> {
    let top = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let n = logs.len() as f64;
    let (mut s1, mut s2, mut hits) = (0.0, 0.0, 0usize);
    for &y in logs {
        if y.is_finite() {
            let w = (y - top).exp();
            s1 += w;
            s2 += w * w;
            hits += 1;
        }
    }
    let mean = s1 / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Some(WeightedMean {
        log_mean: top + mean.ln(),
        rel_sd: var.sqrt() / (n.sqrt() * mean),
        ess: s1 * s1 / s2,
        hits,
    })
}

fn to_estimate(
    logs: &[f64],
    horizon: f64,
    method: Method,
    prediction: f64,
) -> Result<DecayEstimate> {
    let samples = logs.len();
    match weighted_mean(logs) {
        Some(w) => {
            if method == Method::ImportanceSampled && w.ess < MIN_ESS {
                return Err(Error::DegenerateWeight(w.ess));
            }
            Ok(DecayEstimate {
                horizon,
                method,
                estimate: -w.log_mean / horizon + 0.0,
                std_error: w.rel_sd / horizon,
                prediction,
                ess: w.ess,
                hits: w.hits,
                samples,
                status: EstimateStatus::Ok,
            })
        }
        None => Ok(DecayEstimate {
            horizon,
            method,
            estimate: (samples as f64).ln() / horizon,
            std_error: 0.0,
            prediction,
            ess: 0.0,
            hits: 0,
            samples,
            status: EstimateStatus::ZeroHits,
        }),
    }
}

/// Estimates `-(1/T) log E[exp(-T F(eta_T))]` at every horizon, naively when
/// `tilt` is `None` and by importance sampling under `tilt` otherwise.
pub fn estimate_laplace(
    problem: &LaplaceProblem<'_>,
    tilt: Option<&TiltedDynamics>,
) -> Result<Vec<DecayEstimate>> {
    let spec = problem.spec;
    problem.plan.validate()?;
    problem.functional.validate(spec.n())?;
    let prediction = solve_laplace_inf(spec, &problem.functional)?.value;
    let (dynamics, method) = match tilt {
        Some(t) => (Dynamics::Tilted(t), Method::ImportanceSampled),
        None => (Dynamics::Original, Method::Naive),
    };
    let plan = &problem.plan;
    plan.horizons
        .iter()
        .enumerate()
        .map(|(h, &horizon)| {
            let batch = batch_simulate(
                spec,
                dynamics,
                &SimConfig::new(horizon, plan.start),
                plan.samples,
                plan.master_seed(h, method),
                plan.workers,
            )?;
            let logs: Vec<f64> = batch
                .iter()
                .map(|s| {
                    -horizon * problem.functional.value(s.empirical.weights())
                        + s.cost.log_likelihood_ratio
                })
                .collect();
            to_estimate(&logs, horizon, method, prediction)
        })
        .collect()
}

/// Sets of empirical measures whose probability decays.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Whole,
    /// `<f, eta> >= c`
    HalfSpace { f: Vec<f64>, c: f64 },
    /// `TV(eta, target) <= radius`
    TvBall { target: Vec<f64>, radius: f64 },
}

impl Event {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Event::Whole => Ok(()),
            Event::HalfSpace { f, c } => {
                Functional::HalfSpacePenalty {
                    f: f.clone(),
                    c: *c,
                    weight: 0.0,
                }
                .validate(n)?;
                let top = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if top < *c {
                    return Err(Error::Domain(format!(
                        "half-space <f, eta> >= {c} misses the simplex (max f = {top})"
                    )));
                }
                Ok(())
            }
            Event::TvBall { target, radius } => Functional::TvBallPenalty {
                target: target.clone(),
                radius: *radius,
                weight: 0.0,
            }
            .validate(n),
        }
    }

    pub fn contains(&self, eta: &[f64]) -> bool {
        match self {
            Event::Whole => true,
            Event::HalfSpace { f, c } => dot(f, eta) >= *c,
            Event::TvBall { target, radius } => crate::process::tv_distance(eta, target) <= *radius,
        }
    }

    fn penalty(&self, weight: f64) -> Option<Functional> {
        match self {
            Event::Whole => None,
            Event::HalfSpace { f, c } => Some(Functional::HalfSpacePenalty {
                f: f.clone(),
                c: *c,
                weight,
            }),
            Event::TvBall { target, radius } => Some(Functional::TvBallPenalty {
                target: target.clone(),
                radius: *radius,
                weight,
            }),
        }
    }
}

/// Approximate minimizer of `I` over an event.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedMinimum {
    pub eta: ProbMeasure,
    /// `I(eta)` at the returned point.
    pub value: f64,
    /// Constraint violation at the returned point (zero when feasible).
    pub violation: f64,
    /// Max of the Lagrangian stationarity and the violation.
    pub kkt_residual: f64,
}

fn violation(event: &Event, eta: &[f64]) -> f64 {
    match event {
        Event::Whole => 0.0,
        Event::HalfSpace { f, c } => (c - dot(f, eta)).max(0.0),
        Event::TvBall { target, radius } => (smoothed_tv(eta, target) - radius).max(0.0),
    }
}

/// Minimizes `I` over the closure of `event` by exterior quadratic penalty
/// with continuation over [`PENALTY_SCHEDULE`].
pub fn constrained_minimum(spec: &ProcessSpec, event: &Event) -> Result<ConstrainedMinimum> {
    event.validate(spec.n())?;
    let pi = spec.pi().to_vec();
    if event.contains(&pi) {
        return Ok(ConstrainedMinimum {
            eta: spec.pi_measure(),
            value: 0.0,
            violation: 0.0,
            kkt_residual: 0.0,
        });
    }
    let mut eta = pi;
    let mut last = None;
    for weight in PENALTY_SCHEDULE {
        let functional = event.penalty(weight).expect("non-trivial event");
        let sol = solve_from(spec, &functional, eta)?;
        eta = sol.eta.weights().to_vec();
        last = Some(sol);
    }
    let sol = last.expect("non-empty schedule");
    let viol = violation(event, sol.eta.weights());
    let value = rate_explicit(spec, &sol.eta)?.value;
    Ok(ConstrainedMinimum {
        eta: sol.eta,
        value,
        violation: viol,
        kkt_residual: sol.stationarity.max(viol),
    })
}

/// Decay estimates for an event together with the variational prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDecay {
    pub minimum: ConstrainedMinimum,
    /// Naive then importance-sampled estimate for each horizon.
    pub estimates: Vec<DecayEstimate>,
}

/// Estimates `-(1/T) log P(eta_T in event)` naively and under the tilt that
/// targets the constrained minimizer of `I`.
pub fn estimate_event_decay(
    spec: &ProcessSpec,
    event: &Event,
    plan: &SamplingPlan,
) -> Result<EventDecay> {
    plan.validate()?;
    let minimum = constrained_minimum(spec, event)?;
    let tilt = synthesize_tilt(spec, &minimum.eta)?;
    let mut estimates = Vec::with_capacity(2 * plan.horizons.len());
    for (h, &horizon) in plan.horizons.iter().enumerate() {
        for (method, dynamics) in [
            (Method::Naive, Dynamics::Original),
            (Method::ImportanceSampled, Dynamics::Tilted(&tilt)),
        ] {
            let batch = batch_simulate(
                spec,
                dynamics,
                &SimConfig::new(horizon, plan.start),
                plan.samples,
                plan.master_seed(h, method),
                plan.workers,
            )?;
            let logs: Vec<f64> = batch
                .iter()
                .map(|s| {
                    if event.contains(s.empirical.weights()) {
                        s.cost.log_likelihood_ratio
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            estimates.push(to_estimate(&logs, horizon, method, minimum.value)?);
        }
    }
    Ok(EventDecay { minimum, estimates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{hot_cell, uniform_cell_model, validate_spec};

    fn two_state() -> ProcessSpec {
        validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9).unwrap()
    }

    fn four_state() -> ProcessSpec {
        let w = [
            [0.0, 1.0, 0.5, 0.2],
            [1.0, 0.3, 2.0, 0.0],
            [0.5, 2.0, 0.0, 1.5],
            [0.2, 0.0, 1.5, 0.7],
        ];
        let q = [1.0, 2.5, 0.7, 1.8];
        let alpha: Vec<Vec<f64>> = w
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        validate_spec(None, &q, &alpha, 1e-9).unwrap()
    }

    #[test]
    fn zero_functional_gives_pi() {
        let spec = four_state();
        let sol = solve_laplace_inf(&spec, &Functional::zero(4)).unwrap();
        assert!(sol.value.abs() < 1e-12);
        for (a, b) in sol.eta.weights().iter().zip(spec.pi()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_functional_shifts_value() {
        let spec = four_state();
        let sol = solve_laplace_inf(&spec, &Functional::Linear(vec![0.7; 4])).unwrap();
        assert!((sol.value - 0.7).abs() < 1e-12);
        assert!(crate::process::tv_distance(sol.eta.weights(), spec.pi()) < 1e-10);
    }

    #[test]
    fn two_state_duality() {
        let spec = two_state();
        let f = vec![0.0, 1.0];
        let sol = solve_laplace_inf(&spec, &Functional::Linear(f.clone())).unwrap();
        let limit = eigen_limit(&spec, &f).unwrap();
        assert!(sol.stationarity <= STATIONARITY_TOL);
        assert!((sol.value - limit).abs() < 1e-6, "{} vs {limit}", sol.value);
    }

    #[test]
    fn two_state_eigen_closed_form() {
        // L - diag f = [[-1, 1], [2, -3]]: eigenvalues -2 +- sqrt(3)
        let limit = eigen_limit(&two_state(), &[0.0, 1.0]).unwrap();
        assert!((limit - (2.0 - 3f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let spec = four_state();
        let model = RateModel::new(&spec);
        let eta = vec![0.1, 0.4, 0.3, 0.2];
        let g = model.gradient(&eta);
        let h = model.hessian(&eta);
        let step = 1e-6;
        for i in 0..4 {
            let mut up = eta.clone();
            let mut dn = eta.clone();
            up[i] += step;
            dn[i] -= step;
            let fd = (model.value(&up) - model.value(&dn)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-7);
            let gu = model.gradient(&up);
            let gd = model.gradient(&dn);
            for j in 0..4 {
                assert!(((gu[j] - gd[j]) / (2.0 * step) - h[(j, i)]).abs() < 1e-5);
            }
        }
        let pm = ProbMeasure::new(eta.clone()).unwrap();
        assert!((model.value(&eta) - rate_explicit(&spec, &pm).unwrap().value).abs() < 1e-14);
    }

    #[test]
    fn oracle_trivial_cases() {
        let spec = four_state();
        let zero = eigenvalue_oracle(&spec, &[0.0; 4], 5.0, 0).unwrap();
        assert!(zero.limit.abs() < 1e-12);
        assert!(zero.exact_finite_t.abs() < 1e-12);
        let c = eigenvalue_oracle(&spec, &[1.3; 4], 5.0, 2).unwrap();
        assert!((c.limit - 1.3).abs() < 1e-12);
        assert!((c.exact_finite_t - 1.3).abs() < 1e-12);
    }

    #[test]
    fn oracle_single_state() {
        let spec = validate_spec(None, &[2.0], &[vec![1.0]], 1e-9).unwrap();
        let o = eigenvalue_oracle(&spec, &[0.4], 3.0, 0).unwrap();
        assert!((o.exact_finite_t - 0.4).abs() < 1e-14);
    }

    #[test]
    fn finite_t_approaches_limit() {
        let spec = four_state();
        let f = [0.3, 1.0, 0.0, 2.0];
        let near = eigenvalue_oracle(&spec, &f, 5.0, 0).unwrap();
        let far = eigenvalue_oracle(&spec, &f, 500.0, 0).unwrap();
        assert!((far.exact_finite_t - far.limit).abs() < (near.exact_finite_t - near.limit).abs());
        assert!((far.exact_finite_t - far.limit).abs() < 1e-2);
    }

    #[test]
    fn tv_penalty_solution_near_ball() {
        let spec = four_state();
        let target = vec![0.7, 0.1, 0.1, 0.1];
        let ev = Event::TvBall {
            target: target.clone(),
            radius: 0.1,
        };
        let m = constrained_minimum(&spec, &ev).unwrap();
        assert!(m.violation < 1e-3);
        let tv = crate::process::tv_distance(m.eta.weights(), &target);
        assert!((tv - 0.1).abs() < 1e-3);
        assert!(m.value > 0.0);
    }

    #[test]
    fn half_space_minimum_two_state() {
        // on two states eta = (1 - a, a): the constraint binds at a = 0.6
        let spec = two_state();
        let ev = Event::HalfSpace {
            f: vec![0.0, 1.0],
            c: 0.6,
        };
        let m = constrained_minimum(&spec, &ev).unwrap();
        let exact = rate_explicit(&spec, &ProbMeasure::new(vec![0.4, 0.6]).unwrap()).unwrap().value;
        assert!((m.eta.weights()[1] - 0.6).abs() < 1e-4);
        assert!(m.value <= exact + 1e-12 && m.value > exact - 1e-4);
    }

    #[test]
    fn concentration_minimum_matches_closed_form() {
        let spec = uniform_cell_model(4).unwrap();
        let mut f = vec![0.0; 4];
        f[hot_cell(4)] = 1.0;
        let m = constrained_minimum(&spec, &Event::HalfSpace { f, c: 0.99 }).unwrap();
        let a: f64 = 0.99;
        let exact = 1.0 - (a.sqrt() + (3.0 * (1.0 - a)).sqrt()).powi(2) / 4.0;
        assert!((m.value - exact).abs() < 1e-3, "{} vs {exact}", m.value);
    }

    #[test]
    fn feasible_pi_is_its_own_minimum() {
        let spec = four_state();
        let m = constrained_minimum(&spec, &Event::Whole).unwrap();
        assert_eq!(m.value, 0.0);
        let e = Event::HalfSpace {
            f: vec![1.0; 4],
            c: 1.0,
        };
        assert_eq!(constrained_minimum(&spec, &e).unwrap().kkt_residual, 0.0);
    }

    #[test]
    fn empty_half_space_rejected() {
        let spec = four_state();
        let e = Event::HalfSpace {
            f: vec![0.0, 1.0, 0.0, 0.0],
            c: 1.5,
        };
        assert!(matches!(constrained_minimum(&spec, &e), Err(Error::Domain(_))));
    }

    #[test]
    fn weighted_mean_basics() {
        let w = weighted_mean(&[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert!((w.log_mean - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(w.hits, 2);
        assert!((w.ess - 2.0).abs() < 1e-15);
        assert!(weighted_mean(&[f64::NEG_INFINITY; 3]).is_none());
        let big = weighted_mean(&[-1000.0, -1000.0]).unwrap();
        assert!((big.log_mean + 1000.0).abs() < 1e-12);
        assert_eq!(big.rel_sd, 0.0);
    }

    #[test]
    fn zero_hits_reports_bound() {
        let logs = vec![f64::NEG_INFINITY; 1000];
        let e = to_estimate(&logs, 10.0, Method::Naive, 0.3).unwrap();
        assert_eq!(e.status, EstimateStatus::ZeroHits);
        assert!((e.estimate - 1000f64.ln() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn collapsed_weights_rejected() {
        let mut logs = vec![-500.0; 1000];
        logs[0] = 0.0;
        assert!(matches!(
            to_estimate(&logs, 1.0, Method::ImportanceSampled, 0.0),
            Err(Error::DegenerateWeight(_))
        ));
        assert!(to_estimate(&logs, 1.0, Method::Naive, 0.0).is_ok());
    }

    #[test]
    fn zero_functional_estimates_zero() {
        let spec = four_state();
        let problem = LaplaceProblem {
            spec: &spec,
            functional: Functional::zero(4),
            plan: SamplingPlan {
                horizons: vec![1.0, 5.0],
                samples: 1000,
                seed: 3,
                start: 0,
                workers: 2,
            },
        };
        for e in estimate_laplace(&problem, None).unwrap() {
            assert_eq!(e.estimate, 0.0);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn small_budget_rejected() {
        let spec = four_state();
        let problem = LaplaceProblem {
            spec: &spec,
            functional: Functional::zero(4),
            plan: SamplingPlan {
                horizons: vec![1.0],
                samples: 999,
                seed: 3,
                start: 0,
                workers: 1,
            },
        };
        assert!(matches!(estimate_laplace(&problem, None), Err(Error::Parameter(_))));
    }
}
