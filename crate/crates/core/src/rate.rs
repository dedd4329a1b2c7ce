//! The explicit empirical-measure rate function and its helpers.
//!
//! For a reversible model with invariant law `pi` and a target `eta` with
//! density `theta = eta / pi`,
//!
//! ```text
//! I(eta) = sum_x q(x) eta(x) - sum_{x,y} sqrt(theta(x) theta(y)) q(x) alpha(x,y) pi(x)
//! ```
//!
//! The second sum is the Dirichlet pairing of `sqrt(theta)`. States with
//! `theta = 0` contribute literal zero factors.
//!
//! [`rate_variational_oracle`] evaluates the independent variational form
//! `sup_u sum_x eta(x) q(x) (1 - (alpha u)(x) / u(x))` over positive `u`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::process::{dirac_approximation, ProbMeasure, ProcessSpec};

/// Value of the rate function together with its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    pub value: f64,
    /// `sum_x q(x) eta(x)`
    pub first_term: f64,
    /// Dirichlet pairing `sum sqrt(theta(x) theta(y)) q(x) alpha(x,y) pi(x)`.
    pub second_term: f64,
    pub theta: Vec<f64>,
}

pub(crate) fn density(spec: &ProcessSpec, eta: &ProbMeasure) -> Result<Vec<f64>> {
    spec.check_len(eta.len())?;
    if let Some(t) = eta.theta() {
        return Ok(t.to_vec());
    }
    Ok(eta
        .weights()
        .iter()
        .zip(spec.pi())
        .map(|(w, p)| w / p)
        .collect())
}

/// `sum_{x,y} sqrt(theta(x)) sqrt(theta(y)) q(x) alpha(x,y) pi(x)`.
pub(crate) fn dirichlet_pairing(spec: &ProcessSpec, sqrt_theta: &[f64]) -> f64 {
    let n = spec.n();
    let mut total = 0.0;
    for x in 0..n {
        let sx = sqrt_theta[x];
        if sx == 0.0 {
            continue;
        }
        let row: f64 = spec
            .alpha()
            .row(x)
            .iter()
            .zip(sqrt_theta)
            .map(|(a, sy)| a * sy)
            .sum();
        total += sx * row * spec.q()[x] * spec.pi()[x];
    }
    total
}

/// Evaluates the explicit rate function.
pub fn rate_explicit(spec: &ProcessSpec, eta: &ProbMeasure) -> Result<RateResult> {
    let theta = density(spec, eta)?;
    let first_term = spec.q().iter().zip(eta.weights()).map(|(q, e)| q * e).sum();
    let sqrt_theta: Vec<f64> = theta.iter().map(|t| t.sqrt()).collect();
    let second_term = dirichlet_pairing(spec, &sqrt_theta);
    Ok(RateResult {
        value: first_term - second_term,
        first_term,
        second_term,
        theta,
    })
}

/// Smallest density the variational oracle accepts.
pub const ORACLE_MIN_THETA: f64 = 1e-6;

const ORACLE_MAX_ITER: usize = 10_000;

/// `sum_x eta(x) q(x) (1 - sum_y alpha(x,y) e^{v(y) - v(x)})` with its
/// gradient and Hessian.
fn oracle_objective(spec: &ProcessSpec, eta: &[f64], v: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
    let n = spec.n();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    for x in 0..n {
        let wx = eta[x] * spec.q()[x];
        if wx == 0.0 {
            continue;
        }
        let mut out = 0.0;
        for (y, &a) in spec.alpha().row(x).iter().enumerate() {
            if a == 0.0 || y == x {
                continue;
            }
            let term = wx * a * (v[y] - v[x]).exp();
            out += term;
            grad[x] += term;
            grad[y] -= term;
            hess[(x, x)] -= term;
            hess[(y, y)] -= term;
            hess[(x, y)] += term;
            hess[(y, x)] += term;
        }
        // alpha(x,x) e^0 contributes a constant
        value += wx * (1.0 - spec.alpha().get(x, x)) - out;
    }
    (value, grad, hess)
}

/// Maximizes the variational form over log-coordinates `v = log u` with
/// `v(0) = 0` pinned, by damped Newton ascent, until the gradient sup-norm is
/// at most `tol`.
pub fn rate_variational_oracle(spec: &ProcessSpec, eta: &ProbMeasure, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be > 0")));
    }
    let theta = density(spec, eta)?;
    if let Some(x) = theta.iter().position(|&t| t < ORACLE_MIN_THETA) {
        return Err(Error::Domain(format!(
            "density {} at state {x} is below {ORACLE_MIN_THETA}",
            theta[x]
        )));
    }
    let n = spec.n();
    let w = eta.weights();
    if n == 1 {
        return Ok(oracle_objective(spec, w, &[0.0]).0);
    }
    let m = n - 1;
    // minimize phi(z) = -objective((0, z))
    let eval = |z: &[f64]| {
        let mut v = Vec::with_capacity(n);
        v.push(0.0);
        v.extend_from_slice(z);
        let (val, g, h) = oracle_objective(spec, w, &v);
        let grad: Vec<f64> = g[1..].iter().map(|g| -g).collect();
        let hess = DMatrix::from_fn(m, m, |i, j| -h[(i + 1, j + 1)]);
        (-val, grad, hess)
    };
    let mut z = vec![0.0; m];
    let (mut phi, mut grad, mut hess) = eval(&z);
    for iter in 0..ORACLE_MAX_ITER {
        let gnorm = sup_norm(&grad);
        if gnorm <= tol {
            return Ok(-phi);
        }
        let rhs = DVector::from_iterator(m, grad.iter().map(|g| -g));
        let newton = hess.clone().cholesky().map(|c| c.solve(&rhs));
        let mut dir: Vec<f64> = match newton {
            Some(d) if d.iter().all(|v| v.is_finite()) => d.iter().copied().collect(),
            _ => rhs.iter().copied().collect(),
        };
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut t = 1.0;
        let next = loop {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let (p, g, h) = eval(&cand);
            if p.is_finite() && p <= phi + 1e-4 * t * slope {
                break (cand, p, g, h);
            }
            // near the optimum, objective differences drown in rounding
            if t == 1.0 && p.is_finite() && sup_norm(&g) < 0.5 * gnorm {
                break (cand, p, g, h);
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual: gnorm,
                    best: Some(Box::new((z.clone(), -phi))),
                });
            }
        };
        (z, phi, grad, hess) = next;
    }
    Err(Error::NonConvergence {
        iterations: ORACLE_MAX_ITER,
        residual: sup_norm(&grad),
        best: Some(Box::new((z, -phi))),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `ell(x) = x log x - x + 1` with `ell(0) = 1`.
pub fn ell(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("ell({x}) needs x >= 0")));
    }
    Ok(ell_unchecked(x))
}

#[inline]
pub(crate) fn ell_unchecked(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x * x.ln() - x + 1.0
    }
}

/// `g(b) = -log b + b - 1`, the relative entropy of the mean-`b` exponential
/// law with respect to the unit exponential.
pub fn g(b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("g({b}) needs b > 0")));
    }
    Ok(g_unchecked(b))
}

#[inline]
pub(crate) fn g_unchecked(b: f64) -> f64 {
    -b.ln() + b - 1.0
}

/// Discretization of `[0, upper]` into `cells` equal cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyGrid {
    pub upper: f64,
    pub cells: usize,
}

impl EntropyGrid {
    /// `upper = 20 max(b, 1)` with cells of width at most `2e-3 * min(b, 1)`.
    pub fn for_mean(b: f64) -> Self {
        let upper = 20.0 * b.max(1.0);
        let width = 2e-3 * b.min(1.0);
        Self {
            upper,
            cells: (upper / width).ceil() as usize,
        }
    }

    fn width(&self) -> f64 {
        self.upper / self.cells as f64
    }
}

/// Analytic and discretized minimum of `R(gamma || Exp(1))` over laws with
/// mean `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEntropyCheck {
    pub analytic: f64,
    pub brute: f64,
    /// Grid-dependent error bound: the gap between this grid and the grid
    /// with twice the cell width, plus the truncated tail mass.
    pub bound: f64,
}

/// Compares `g(b)` with the minimum relative entropy over grid laws with
/// mean `b`. On a grid the minimizer is the exponential tilt of the
/// discretized unit exponential, so the search is one-dimensional.
pub fn min_entropy_given_mean(b: f64, grid: EntropyGrid) -> Result<MeanEntropyCheck> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("mean {b} must be > 0")));
    }
    if !(grid.upper >= 20.0 * b.max(1.0)) {
        return Err(Error::Grid(format!(
            "upper end {} must be at least {}",
            grid.upper,
            20.0 * b.max(1.0)
        )));
    }
    if grid.cells < 4 || grid.width() > 0.1 * b.min(1.0) {
        return Err(Error::Grid(format!(
            "cell width {} too coarse for mean {b}",
            grid.width()
        )));
    }
    let brute = grid_min_entropy(b, grid)?;
    let coarse = grid_min_entropy(
        b,
        EntropyGrid {
            upper: grid.upper,
            cells: grid.cells / 2,
        },
    )?;
    let tail = (-grid.upper / b.max(1.0)).exp() * (1.0 + grid.upper);
    Ok(MeanEntropyCheck {
        analytic: g_unchecked(b),
        brute,
        bound: (brute - coarse).abs() + tail,
    })
}

fn grid_min_entropy(b: f64, grid: EntropyGrid) -> Result<f64> {
    let h = grid.width();
    let mid: Vec<f64> = (0..grid.cells).map(|i| (i as f64 + 0.5) * h).collect();
    let norm = 1.0 - (-grid.upper).exp();
    let log_sigma: Vec<f64> = (0..grid.cells)
        .map(|i| {
            let a = i as f64 * h;
            // e^{-a} - e^{-a-h} = e^{-a} (1 - e^{-h})
            -a + (-(-h).exp_m1()).ln() - norm.ln()
        })
        .collect();
    // log Z(lambda) and mean under gamma_lambda ∝ sigma e^{-lambda u}
    let moments = |lambda: f64| {
        let logs: Vec<f64> = log_sigma
            .iter()
            .zip(&mid)
            .map(|(ls, u)| ls - lambda * u)
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut m = 0.0;
        for (l, u) in logs.iter().zip(&mid) {
            let w = (l - mx).exp();
            z += w;
            m += w * u;
        }
        (mx + z.ln(), m / z)
    };
    let target = 1.0 / b - 1.0;
    let (mut lo, mut hi) = (target - 1.0, target + 1.0);
    while moments(lo).1 < b {
        lo -= 1.0;
        if lo < -1e3 {
            return Err(Error::Grid(format!("grid cannot reach mean {b}")));
        }
    }
    while moments(hi).1 > b {
        hi += 1.0;
        if hi > 1e6 {
            return Err(Error::Grid(format!("grid cannot reach mean {b}")));
        }
    }
    for _ in 0..200 {
        let mid_l = 0.5 * (lo + hi);
        if moments(mid_l).1 > b {
            lo = mid_l;
        } else {
            hi = mid_l;
        }
        if hi - lo < 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let (log_z, mean) = moments(lambda);
    // R = sum gamma log(gamma / sigma) = -lambda * mean - log Z
    Ok(-lambda * mean - log_z)
}

/// One member of the concentrating family on the `cells`-cell uniform model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracPoint {
    pub cells: usize,
    pub eta: ProbMeasure,
    pub rate: f64,
}

/// Rates of the concentrating family for `k = 2..=n`. The values are
/// `1 - 4(k-1)/k^2`, increasing toward 1.
pub fn rate_lsc_extension_demo(n: usize) -> Result<Vec<DiracPoint>> {
    if n < 2 {
        return Err(Error::Parameter(format!("n = {n} must be >= 2")));
    }
    (2..=n)
        .map(|k| {
            let (spec, eta) = dirac_approximation(k)?;
            let rate = rate_explicit(&spec, &eta)?.value;
            Ok(DiracPoint {
                cells: k,
                eta,
                rate,
            })
        })
        .collect()
}
