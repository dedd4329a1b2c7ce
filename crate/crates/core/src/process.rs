//! Finite-state reversible jump-process models.
//!
//! A model is a jump intensity `q(x) > 0` per state together with a
//! row-stochastic embedded kernel `alpha`. The process holds in `x` for an
//! exponential time with rate `q(x)` and then jumps according to
//! `alpha(x, .)`. Its generator is
//!
//! ```text
//! (L f)(x) = q(x) * sum_y alpha(x, y) (f(y) - f(x))
//! ```
//!
//! Validation derives the embedded-chain invariant law `pi_tilde`, the
//! jump-process invariant law `pi ∝ pi_tilde / q`, and rejects models that are
//! reducible or violate detailed balance.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default validation tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Tolerance on the weights of a [`ProbMeasure`].
pub const MEASURE_SUM_TOL: f64 = 1e-12;

/// Dense row-major square matrix used for stochastic kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub(crate) fn from_flat(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|x| self.row(x).to_vec()).collect()
    }

    pub fn matmul(&self, other: &Kernel) -> Kernel {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Kernel { n, data }
    }

    /// `v * K` for a row vector `v`.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (x, &vx) in v.iter().enumerate() {
            if vx == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(x)) {
                *o += vx * k;
            }
        }
        out
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Validated finite-state reversible jump-process model.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    labels: Vec<String>,
    q: Vec<f64>,
    alpha: Kernel,
    pi_tilde: Vec<f64>,
    pi: Vec<f64>,
    mean_intensity: f64,
    k1: f64,
    k2: f64,
}

impl ProcessSpec {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn alpha(&self) -> &Kernel {
        &self.alpha
    }

    /// Invariant law of the embedded chain.
    pub fn pi_tilde(&self) -> &[f64] {
        &self.pi_tilde
    }

    /// Invariant law of the jump process.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `Q = sum_x q(x) pi(x)`.
    pub fn mean_intensity(&self) -> f64 {
        self.mean_intensity
    }

    /// `K1 = min q`.
    pub fn min_intensity(&self) -> f64 {
        self.k1
    }

    /// `K2 = max q`.
    pub fn max_intensity(&self) -> f64 {
        self.k2
    }

    /// Symmetric edge weight `q(x) alpha(x,y) pi(x)`.
    #[inline]
    pub fn flux(&self, x: usize, y: usize) -> f64 {
        self.q[x] * self.alpha.get(x, y) * self.pi[x]
    }

    pub fn pi_measure(&self) -> ProbMeasure {
        ProbMeasure {
            weights: self.pi.clone(),
            theta: Some(vec![1.0; self.n()]),
        }
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            labels: self.labels.clone(),
            q: self.q.clone(),
            alpha: self.alpha.rows(),
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Probability vector on the state set, optionally carrying its density
/// `theta = eta / pi` relative to a model's invariant law.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMeasure {
    weights: Vec<f64>,
    theta: Option<Vec<f64>>,
}

impl ProbMeasure {
    /// Wraps weights that already sum to one within [`MEASURE_SUM_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MEASURE_SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self {
            weights,
            theta: None,
        })
    }

    /// Normalizes nonnegative weights with a positive total.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Domain(format!("weights have total {sum}")));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self {
            weights,
            theta: None,
        })
    }

    pub fn dirac(n: usize, state: usize) -> Result<Self> {
        if state >= n {
            return Err(Error::Dimension {
                expected: n,
                got: state + 1,
            });
        }
        let mut w = vec![0.0; n];
        w[state] = 1.0;
        Self::new(w)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("empty state set".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Attaches `theta = eta / pi` for `spec`.
    pub fn with_density(mut self, spec: &ProcessSpec) -> Result<Self> {
        spec.check_len(self.weights.len())?;
        let theta = self
            .weights
            .iter()
            .zip(spec.pi())
            .enumerate()
            .map(|(x, (&w, &p))| {
                if p > 0.0 {
                    Ok(w / p)
                } else if w == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::DegenerateSupport(x))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.theta = Some(theta);
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Density relative to `pi`, if attached.
    pub fn theta(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    /// States where the density vanishes. Empty when no density is attached.
    pub fn zero_set(&self) -> Vec<usize> {
        self.theta
            .as_ref()
            .map(|t| {
                t.iter()
                    .enumerate()
                    .filter(|(_, &v)| v == 0.0)
                    .map(|(x, _)| x)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Convex combination `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &ProbMeasure, lambda: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: other.len(),
            });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("mixing weight {lambda}")));
        }
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Self::from_unnormalized(w)
    }

    pub fn dot(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Parameter("empty weight vector".into()));
    }
    if let Some((x, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(**w >= 0.0) || !w.is_finite())
    {
        return Err(Error::Domain(format!("weight {w} at state {x}")));
    }
    Ok(())
}

/// Total variation distance `1/2 sum |a - b|`.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub labels: Vec<String>,
    pub q: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn validate(&self, tol: f64) -> Result<ProcessSpec> {
        let labels = (!self.labels.is_empty()).then(|| self.labels.clone());
        validate_spec(labels, &self.q, &self.alpha, tol)
    }
}

/// Validates a raw model and derives its invariant structure.
///
/// Rows of `alpha` are never renormalized: a row sum off by more than `tol`
/// is an error.
pub fn validate_spec(
    labels: Option<Vec<String>>,
    q: &[f64],
    alpha: &[Vec<f64>],
    tol: f64,
) -> Result<ProcessSpec> {
    let n = q.len();
    if n == 0 {
        return Err(Error::Parameter("state count must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be > 0")));
    }
    if alpha.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: alpha.len(),
        });
    }
    let labels = match labels {
        Some(l) if l.len() != n => {
            return Err(Error::Dimension {
                expected: n,
                got: l.len(),
            })
        }
        Some(l) => l,
        None => (0..n).map(|x| format!("s{x}")).collect(),
    };
    let alpha = Kernel::from_rows(alpha)?;
    for x in 0..n {
        for (y, &a) in alpha.row(x).iter().enumerate() {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::KernelEntry {
                    row: x,
                    col: y,
                    value: a,
                });
            }
        }
        let sum: f64 = alpha.row(x).iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::RowSum { row: x, sum, tol });
        }
    }
    for (x, &qx) in q.iter().enumerate() {
        if !(qx > 0.0) || !qx.is_finite() {
            return Err(Error::Intensity {
                state: x,
                value: qx,
            });
        }
    }
    check_irreducible(&alpha)?;

    let pi_tilde = stationary_vector(&alpha)?;
    let pi = jump_invariant(&pi_tilde, q);
    if let Some(x) = pi.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Reducible(format!("pi vanishes at state {x}")));
    }
    let mean_intensity = q.iter().zip(&pi).map(|(a, b)| a * b).sum();
    let k1 = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let k2 = q.iter().cloned().fold(0.0, f64::max);

    let spec = ProcessSpec {
        labels,
        q: q.to_vec(),
        alpha,
        pi_tilde,
        pi,
        mean_intensity,
        k1,
        k2,
    };
    check_detailed_balance(&spec, tol)?;
    Ok(spec)
}

fn check_detailed_balance(spec: &ProcessSpec, tol: f64) -> Result<()> {
    let n = spec.n();
    for x in 0..n {
        for y in (x + 1)..n {
            let forward = spec.flux(x, y);
            let backward = spec.flux(y, x);
            if (forward - backward).abs() > tol {
                return Err(Error::NotReversible {
                    x,
                    y,
                    forward,
                    backward,
                });
            }
        }
    }
    Ok(())
}

/// Edges `{(x, y) : alpha(x, y) > 0}` must connect every state to every
/// other state.
fn check_irreducible(alpha: &Kernel) -> Result<()> {
    let n = alpha.size();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for y in 0..n {
                let w = if forward {
                    alpha.get(x, y)
                } else {
                    alpha.get(y, x)
                };
                if w > 0.0 && !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen.iter().position(|s| !s)
    };
    if let Some(y) = reach(true) {
        return Err(Error::Reducible(format!(
            "state {y} is not reachable from state 0"
        )));
    }
    if let Some(y) = reach(false) {
        return Err(Error::Reducible(format!(
            "state 0 is not reachable from state {y}"
        )));
    }
    Ok(())
}

/// True if every state reaches every other along positive entries of `k`.
pub(crate) fn is_irreducible(k: &Kernel) -> bool {
    check_irreducible(k).is_ok()
}

/// Solves `(alpha^T - I; 1^T) v = (0; 1)` in least squares.
fn stationary_vector(alpha: &Kernel) -> Result<Vec<f64>> {
    let n = alpha.size();
    let mut system = DMatrix::<f64>::zeros(n + 1, n);
    for x in 0..n {
        for y in 0..n {
            system[(y, x)] = alpha.get(x, y) - if x == y { 1.0 } else { 0.0 };
        }
        system[(n, x)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = system.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Reducible(e.to_string()))?;
    let v: Vec<f64> = sol.iter().copied().collect();
    if let Some(x) = v.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Reducible(format!(
            "stationary vector vanishes at state {x}"
        )));
    }
    let sum: f64 = v.iter().sum();
    let v: Vec<f64> = v.iter().map(|p| p / sum).collect();
    let residual = alpha
        .left_apply(&v)
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(Error::Reducible(format!(
            "stationary residual {residual:e}"
        )));
    }
    Ok(v)
}

fn jump_invariant(pi_tilde: &[f64], q: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = pi_tilde.iter().zip(q).map(|(p, r)| p / r).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Recomputes `(pi_tilde, pi)` for a validated model, confirming that the
/// stationary vector of `alpha` is unique.
pub fn invariant_measures(spec: &ProcessSpec) -> Result<(ProbMeasure, ProbMeasure)> {
    let n = spec.n();
    let mut m = spec.alpha.to_dmatrix().transpose();
    for i in 0..n {
        m[(i, i)] -= 1.0;
    }
    let sv = m.singular_values();
    let null_dim = sv.iter().filter(|&&s| s < 1e-10).count();
    if null_dim > 1 {
        return Err(Error::Reducible(format!(
            "stationary space has dimension {null_dim}"
        )));
    }
    let pi_tilde = stationary_vector(&spec.alpha)?;
    let pi = jump_invariant(&pi_tilde, &spec.q);
    Ok((
        ProbMeasure::from_unnormalized(pi_tilde)?,
        ProbMeasure::from_unnormalized(pi)?,
    ))
}

/// Uniform mixing bound for the embedded chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minorization {
    /// Smallest step count with a strictly positive `alpha^N`.
    pub steps: usize,
    /// `max_{x,y} alpha^N(x, y) / pi_tilde(y)`, so `alpha^N(x, .) <= c pi_tilde`.
    pub upper: f64,
    /// `min_{x,y} alpha^N(x, y) / pi_tilde(y)`.
    pub lower: f64,
}

/// Finds the smallest `N <= max_steps` whose `N`-step kernel charges every
/// state from every state, and reports the comparison constants against
/// `pi_tilde`. Periodic chains never qualify.
pub fn check_minorization(spec: &ProcessSpec, max_steps: usize) -> Result<Minorization> {
    if max_steps == 0 {
        return Err(Error::Parameter("max_steps must be >= 1".into()));
    }
    let n = spec.n();
    let alpha = &spec.alpha;
    let support: Vec<bool> = (0..n * n).map(|i| alpha.data[i] > 0.0).collect();
    let mut pattern = support.clone();
    let mut power = alpha.clone();
    for steps in 1..=max_steps {
        if steps > 1 {
            pattern = bool_matmul(&pattern, &support, n);
            power = power.matmul(alpha);
        }
        if pattern.iter().all(|&b| b) {
            let mut upper = 0.0f64;
            let mut lower = f64::INFINITY;
            for x in 0..n {
                for y in 0..n {
                    let r = power.get(x, y) / spec.pi_tilde[y];
                    upper = upper.max(r);
                    lower = lower.min(r);
                }
            }
            return Ok(Minorization {
                steps,
                upper,
                lower,
            });
        }
    }
    let zeros = (0..n * n)
        .filter(|&i| !pattern[i])
        .map(|i| (i / n, i % n))
        .collect();
    Err(Error::NoMinorization { max_steps, zeros })
}

fn bool_matmul(a: &[bool], b: &[bool], n: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for i in 0..n {
        for k in 0..n {
            if !a[i * n + k] {
                continue;
            }
            for j in 0..n {
                out[i * n + j] |= b[k * n + j];
            }
        }
    }
    out
}

/// `(L f)(x) = q(x) sum_y alpha(x, y) (f(y) - f(x))`.
pub fn generator_apply(spec: &ProcessSpec, f: &[f64]) -> Result<Vec<f64>> {
    spec.check_len(f.len())?;
    Ok((0..spec.n())
        .map(|x| {
            let fx = f[x];
            spec.q[x]
                * spec
                    .alpha
                    .row(x)
                    .iter()
                    .zip(f)
                    .map(|(a, fy)| a * (fy - fx))
                    .sum::<f64>()
        })
        .collect())
}

/// Dense generator matrix `L(x, y) = q(x) (alpha(x, y) - 1{x = y})`.
pub fn generator_matrix(spec: &ProcessSpec) -> DMatrix<f64> {
    let n = spec.n();
    DMatrix::from_fn(n, n, |x, y| {
        spec.q[x] * (spec.alpha.get(x, y) - if x == y { 1.0 } else { 0.0 })
    })
}

/// `q = 1` and `alpha(x, .)` uniform on `n` cells: the discretization of the
/// unit interval with uniform jumps.
pub fn uniform_cell_model(n: usize) -> Result<ProcessSpec> {
    if n == 0 {
        return Err(Error::Parameter("cell count must be >= 1".into()));
    }
    let row = vec![1.0 / n as f64; n];
    validate_spec(
        Some((0..n).map(|x| format!("cell{x}")).collect()),
        &vec![1.0; n],
        &vec![row; n],
        DEFAULT_TOL,
    )
}

/// Index of the concentration cell used by [`dirac_approximation`].
pub fn hot_cell(n: usize) -> usize {
    n / 2
}

/// Measure on the `k`-cell uniform model with density `k - 1` on the hot cell
/// and `1 / (k - 1)` elsewhere.
pub fn dirac_approximation(k: usize) -> Result<(ProcessSpec, ProbMeasure)> {
    if k < 2 {
        return Err(Error::Parameter(format!("cell count {k} must be >= 2")));
    }
    let spec = uniform_cell_model(k)?;
    let kf = k as f64;
    let hot = hot_cell(k);
    let weights: Vec<f64> = (0..k)
        .map(|x| {
            if x == hot {
                (kf - 1.0) / kf
            } else {
                1.0 / ((kf - 1.0) * kf)
            }
        })
        .collect();
    let eta = ProbMeasure::from_unnormalized(weights)?.with_density(&spec)?;
    Ok((spec, eta))
}
