//! Optimal change of measure for a target empirical measure.
//!
//! Given `eta` with density `theta` relative to `pi`, the tilt uses
//!
//! ```text
//! mu(x, y)  ∝ sqrt(theta(x) theta(y)) pi_tilde(x) alpha(x, y)
//! p(x, .)   = mu(x, .) / mu1(x)
//! A         = sum sqrt(theta(x) theta(y)) q(x) alpha(x, y) pi(x)
//! kappa(x)  = mu1(x) / (q(x) eta(x))
//! ```
//!
//! The tilted process jumps along `p` and holds in `x` for an exponential
//! time whose unit-scale mean is `1 / (A kappa(x))`. Its relative-entropy cost
//! per unit time splits into a chain part `A R(mu || mu1 ⊗ alpha)` and a
//! holding-time part `sum_x ell(A kappa(x)) q(x) eta(x)`, and the two add up
//! to the rate function.

use std::fmt;
use std::ops::Add;

use crate::error::{Error, Result};
use crate::process::{is_irreducible, Kernel, ProbMeasure, ProcessSpec};
use crate::rate::{density, dirichlet_pairing, ell_unchecked};

/// Nonnegative extended real for relative entropies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    /// Multiplication by a nonnegative scalar with `0 * inf = 0`.
    pub fn scale(self, c: f64) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(c * v),
            ExtReal::Infinite if c == 0.0 => ExtReal::Finite(0.0),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }

    /// IEEE view for reporting; infinity maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

/// `R(p || alpha) = sum_y p(y) log(p(y) / alpha(y))` with `0 log 0 = 0`.
///
/// Infinite when `p` charges a state `alpha` does not. Rows must have equal
/// length.
pub fn kernel_relative_entropy(p_row: &[f64], alpha_row: &[f64]) -> ExtReal {
    debug_assert_eq!(p_row.len(), alpha_row.len());
    let mut total = 0.0;
    for (&p, &a) in p_row.iter().zip(alpha_row) {
        if p == 0.0 {
            continue;
        }
        if a == 0.0 {
            return ExtReal::Infinite;
        }
        total += p * (p / a).ln();
    }
    ExtReal::Finite(total.max(0.0))
}

/// Synthesized optimal control for a target measure.
///
/// Fields are public so callers can inspect (or deliberately corrupt) the
/// construction; [`check_constraints`] reports any inconsistency.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedDynamics {
    /// Target measure with its density attached.
    pub eta: ProbMeasure,
    /// Tilted embedded kernel. Rows of states with `mu1 = 0` copy `alpha`.
    pub p: Kernel,
    /// Long-run jump rate of the tilted process.
    pub a: f64,
    /// Dilation field `d mu1 / d rho`; zero on the zero set of `theta`.
    pub kappa: Vec<f64>,
    /// Joint measure on pairs.
    pub mu: Kernel,
    /// First marginal of `mu`.
    pub mu1: Vec<f64>,
    /// Atom location of `xi(x, .)`: `A kappa(x)` off the zero set, 0 on it.
    pub b: Vec<f64>,
    /// Mass of `xi(x, .)`, i.e. `q(x) eta(x)`.
    pub xi_mass: Vec<f64>,
    /// Multiplier applied to `q` when simulating: `A kappa(x)` off the zero
    /// set, 1 on it (those states carry no target mass and keep the original
    /// holding law).
    pub speed: Vec<f64>,
    /// True when the Dirichlet pairing vanishes and the control is `A = 0`.
    pub degenerate: bool,
}

impl TiltedDynamics {
    pub fn n(&self) -> usize {
        self.mu1.len()
    }

    /// Mean of the unit-scale holding variable in `x`: `1 / (A kappa(x))`.
    /// Infinite where the tilt freezes the process.
    pub fn sojourn_mean(&self, x: usize) -> f64 {
        1.0 / self.speed[x]
    }

    /// Mean holding time in physical units: `1 / (A kappa(x) q(x))`.
    pub fn holding_time_mean(&self, spec: &ProcessSpec, x: usize) -> f64 {
        1.0 / (self.speed[x] * spec.q()[x])
    }

    /// `d mu1 / d pi`.
    pub fn marginal_density(&self, spec: &ProcessSpec) -> Vec<f64> {
        self.mu1.iter().zip(spec.pi()).map(|(m, p)| m / p).collect()
    }

    /// `(L_bar f)(x) = A kappa(x) q(x) sum_y p(x, y) (f(y) - f(x))`.
    pub fn generator_apply(&self, spec: &ProcessSpec, f: &[f64]) -> Result<Vec<f64>> {
        spec.check_len(f.len())?;
        Ok((0..self.n())
            .map(|x| {
                let rate = self.speed[x] * spec.q()[x];
                rate * self
                    .p
                    .row(x)
                    .iter()
                    .zip(f)
                    .map(|(p, fy)| p * (fy - f[x]))
                    .sum::<f64>()
            })
            .collect())
    }

    /// `max_y |(eta L_bar)(y)|`: zero when `eta` is invariant for the tilt.
    pub fn stationarity_residual(&self, spec: &ProcessSpec) -> f64 {
        let n = self.n();
        let eta = self.eta.weights();
        let mut flow = vec![0.0; n];
        for x in 0..n {
            let out = eta[x] * self.speed[x] * spec.q()[x];
            if out == 0.0 {
                continue;
            }
            for (y, &p) in self.p.row(x).iter().enumerate() {
                flow[y] += out * p;
            }
            flow[x] -= out;
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when the tilted embedded chain is irreducible, which makes `eta`
    /// its unique invariant law.
    pub fn is_irreducible(&self) -> bool {
        is_irreducible(&self.p)
    }
}

/// Builds the optimal tilt for `eta`.
pub fn synthesize_tilt(spec: &ProcessSpec, eta: &ProbMeasure) -> Result<TiltedDynamics> {
    spec.check_len(eta.len())?;
    let eta = match eta.theta() {
        Some(_) => eta.clone(),
        None => eta.clone().with_density(spec)?,
    };
    let n = spec.n();
    let theta = density(spec, &eta)?;
    let w = eta.weights();
    let sqrt_theta: Vec<f64> = theta.iter().map(|t| t.sqrt()).collect();
    let pairing = dirichlet_pairing(spec, &sqrt_theta);
    let xi_mass: Vec<f64> = spec.q().iter().zip(w).map(|(q, e)| q * e).collect();
    let alpha = spec.alpha();

    if !(pairing > 0.0) {
        // A = 0, xi = q eta ⊗ delta_0; mu only needs equal marginals.
        let mu = Kernel::from_flat(
            n,
            (0..n * n)
                .map(|i| spec.pi_tilde()[i / n] * alpha.get(i / n, i % n))
                .collect(),
        );
        let speed = theta
            .iter()
            .map(|&t| if t == 0.0 { 1.0 } else { 0.0 })
            .collect();
        return Ok(TiltedDynamics {
            eta,
            p: alpha.clone(),
            a: 0.0,
            kappa: vec![0.0; n],
            mu,
            mu1: spec.pi_tilde().to_vec(),
            b: vec![0.0; n],
            xi_mass,
            speed,
            degenerate: true,
        });
    }

    let mut mu_data = vec![0.0; n * n];
    for x in 0..n {
        let sx = sqrt_theta[x] * spec.pi_tilde()[x];
        if sx == 0.0 {
            continue;
        }
        for y in 0..n {
            mu_data[x * n + y] = sx * sqrt_theta[y] * alpha.get(x, y);
        }
    }
    let z: f64 = mu_data.iter().sum();
    for m in &mut mu_data {
        *m /= z;
    }
    let mu = Kernel::from_flat(n, mu_data);
    let mu1: Vec<f64> = (0..n).map(|x| mu.row(x).iter().sum()).collect();

    let mut p_data = Vec::with_capacity(n * n);
    for x in 0..n {
        if mu1[x] > 0.0 {
            p_data.extend(mu.row(x).iter().map(|m| m / mu1[x]));
        } else {
            p_data.extend_from_slice(alpha.row(x));
        }
    }
    let p = Kernel::from_flat(n, p_data);

    let a = pairing;
    let kappa: Vec<f64> = (0..n)
        .map(|x| {
            if theta[x] == 0.0 {
                0.0
            } else {
                mu1[x] / xi_mass[x]
            }
        })
        .collect();
    let b: Vec<f64> = kappa.iter().map(|k| a * k).collect();
    let speed = (0..n)
        .map(|x| if theta[x] == 0.0 { 1.0 } else { b[x] })
        .collect();
    let tilt = TiltedDynamics {
        eta,
        p,
        a,
        kappa,
        mu,
        mu1,
        b,
        xi_mass,
        speed,
        degenerate: false,
    };
    let residual = tilt.stationarity_residual(spec);
    if residual > 1e-10 * a.max(1.0) {
        return Err(Error::Mismatch(format!(
            "target is not invariant for the tilt (residual {residual:e})"
        )));
    }
    Ok(tilt)
}

/// Chain and holding-time relative-entropy costs per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostLedger {
    /// `A R(mu || mu1 ⊗ alpha)`.
    pub chain_cost: ExtReal,
    /// `sum_x ell(b(x)) q(x) eta(x)`.
    pub time_cost: f64,
}

impl CostLedger {
    pub fn total(&self) -> ExtReal {
        self.chain_cost + ExtReal::Finite(self.time_cost)
    }
}

/// Largest violations of the constraints a control must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    /// `max_x |mu1(x) - mu2(x)|`
    pub marginal_gap: f64,
    /// `max_x |q(x) eta(x) - [xi]_1(x)|`
    pub intensity_gap: f64,
    /// `max_x |sum_u u xi(x, u) - A mu1(x)|`
    pub mean_gap: f64,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.marginal_gap.max(self.intensity_gap).max(self.mean_gap)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Checks `[mu]_1 = [mu]_2`, `q eta = [xi]_1` and `sum u xi = A [mu]_1`.
pub fn check_constraints(
    spec: &ProcessSpec,
    eta: &ProbMeasure,
    tilt: &TiltedDynamics,
) -> ConstraintReport {
    let n = tilt.n();
    let mut mu2 = vec![0.0; n];
    for x in 0..n {
        for (y, m) in tilt.mu.row(x).iter().enumerate() {
            mu2[y] += m;
        }
    }
    let max_gap = |a: &mut dyn Iterator<Item = f64>| a.fold(0.0f64, |m, v| m.max(v.abs()));
    let marginal_gap = max_gap(&mut tilt.mu1.iter().zip(&mu2).map(|(a, b)| a - b));
    let intensity_gap = max_gap(
        &mut spec
            .q()
            .iter()
            .zip(eta.weights())
            .zip(&tilt.xi_mass)
            .map(|((q, e), xi)| q * e - xi),
    );
    let mean_gap = max_gap(
        &mut (0..n).map(|x| tilt.b[x] * tilt.xi_mass[x] - tilt.a * tilt.mu1[x]),
    );
    ConstraintReport {
        marginal_gap,
        intensity_gap,
        mean_gap,
    }
}

/// Tolerance on constraint violations accepted by [`entropy_decomposition`].
pub const CONSTRAINT_TOL: f64 = 1e-10;

/// Evaluates the two cost components of `tilt`.
pub fn entropy_decomposition(
    spec: &ProcessSpec,
    eta: &ProbMeasure,
    tilt: &TiltedDynamics,
) -> Result<CostLedger> {
    spec.check_len(eta.len())?;
    if tilt.n() != spec.n() || tilt.eta.weights() != eta.weights() {
        return Err(Error::Mismatch("tilt was built for another target".into()));
    }
    let report = check_constraints(spec, eta, tilt);
    if !report.passes(CONSTRAINT_TOL) {
        return Err(Error::Mismatch(format!(
            "constraint violation {:e}",
            report.max_violation()
        )));
    }
    let chain = chain_entropy(spec, tilt.a, &tilt.mu);
    let time_cost = (0..spec.n())
        .map(|x| ell_unchecked(tilt.b[x]) * tilt.xi_mass[x])
        .sum();
    Ok(CostLedger {
        chain_cost: chain,
        time_cost,
    })
}

/// `A R(mu || [mu]_1 ⊗ alpha)`, with `0 * inf = 0`.
fn chain_entropy(spec: &ProcessSpec, a: f64, mu: &Kernel) -> ExtReal {
    let n = spec.n();
    let mut total = ExtReal::Finite(0.0);
    for x in 0..n {
        let m1: f64 = mu.row(x).iter().sum();
        if m1 <= 0.0 {
            continue;
        }
        let row: Vec<f64> = mu.row(x).iter().map(|m| m / m1).collect();
        total = total + kernel_relative_entropy(&row, spec.alpha().row(x)).scale(m1);
    }
    total.scale(a)
}

/// A candidate control: rate scalar, joint measure on pairs, and for each
/// state a discrete law `xi(x, .)` given as `(location, mass)` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub a: f64,
    pub mu: Kernel,
    pub xi: Vec<Vec<(f64, f64)>>,
}

impl Control {
    /// The control attained by a synthesized tilt.
    pub fn from_tilt(tilt: &TiltedDynamics) -> Self {
        Self {
            a: tilt.a,
            mu: tilt.mu.clone(),
            xi: tilt
                .b
                .iter()
                .zip(&tilt.xi_mass)
                .map(|(&u, &m)| vec![(u, m)])
                .collect(),
        }
    }

    /// `A R(mu || [mu]_1 ⊗ alpha) + sum ell(u) xi(dx, du)`.
    pub fn objective(&self, spec: &ProcessSpec) -> ExtReal {
        let time: f64 = self
            .xi
            .iter()
            .flatten()
            .map(|&(u, m)| ell_unchecked(u) * m)
            .sum();
        chain_entropy(spec, self.a, &self.mu) + ExtReal::Finite(time)
    }

    /// Constraint violations for target `eta`.
    pub fn violations(&self, spec: &ProcessSpec, eta: &ProbMeasure) -> ConstraintReport {
        let n = spec.n();
        let mu1: Vec<f64> = (0..n).map(|x| self.mu.row(x).iter().sum()).collect();
        let mut mu2 = vec![0.0; n];
        for x in 0..n {
            for (y, m) in self.mu.row(x).iter().enumerate() {
                mu2[y] += m;
            }
        }
        let mut report = ConstraintReport {
            marginal_gap: 0.0,
            intensity_gap: 0.0,
            mean_gap: 0.0,
        };
        for x in 0..n {
            let mass: f64 = self.xi[x].iter().map(|a| a.1).sum();
            let first: f64 = self.xi[x].iter().map(|a| a.0 * a.1).sum();
            report.marginal_gap = report.marginal_gap.max((mu1[x] - mu2[x]).abs());
            report.intensity_gap = report
                .intensity_gap
                .max((spec.q()[x] * eta.weights()[x] - mass).abs());
            report.mean_gap = report.mean_gap.max((first - self.a * mu1[x]).abs());
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{dirac_approximation, validate_spec};
    use crate::rate::rate_explicit;

    fn swap2() -> ProcessSpec {
        validate_spec(None, &[1.0, 2.0], &[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9).unwrap()
    }

    #[test]
    fn dirac_four_tilt() {
        let (spec, eta) = dirac_approximation(4).unwrap();
        let hot = crate::process::hot_cell(4);
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        assert!((tilt.a - 0.75).abs() < 1e-15);
        let dens = tilt.marginal_density(&spec);
        for x in 0..4 {
            let (mean, d) = if x == hot { (2.0, 2.0) } else { (2.0 / 3.0, 2.0 / 3.0) };
            assert!((tilt.sojourn_mean(x) - mean).abs() < 1e-14);
            assert!((dens[x] - d).abs() < 1e-14);
        }
        // p(x, .) = mu1 for the product measure
        for x in 0..4 {
            for y in 0..4 {
                assert!((tilt.p.get(x, y) - tilt.mu1[y]).abs() < 1e-15);
            }
        }
        let ledger = entropy_decomposition(&spec, &eta, &tilt).unwrap();
        let chain = 0.75 * (4f64.ln() - 2f64.ln() - 0.5 * 3f64.ln());
        assert!((ledger.chain_cost.finite().unwrap() - chain).abs() < 1e-15);
        assert!((chain - 0.107_880_8).abs() < 1e-7);
        assert!((ledger.time_cost - (0.25 - chain)).abs() < 1e-14);
        assert!((ledger.time_cost - 0.142_119_2).abs() < 1e-7);
    }

    #[test]
    fn stationary_target_needs_no_tilt() {
        let spec = swap2();
        let pi = spec.pi_measure();
        let tilt = synthesize_tilt(&spec, &pi).unwrap();
        assert!((tilt.a - spec.mean_intensity()).abs() < 1e-15);
        for x in 0..2 {
            assert!((tilt.a * tilt.kappa[x] - 1.0).abs() < 1e-14);
        }
        assert_eq!(tilt.p, *spec.alpha());
        let ledger = entropy_decomposition(&spec, &pi, &tilt).unwrap();
        assert!(ledger.chain_cost.finite().unwrap().abs() < 1e-15);
        assert!(ledger.time_cost.abs() < 1e-15);
    }

    #[test]
    fn two_state_half() {
        let spec = swap2();
        let eta = ProbMeasure::new(vec![0.5, 0.5]).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        let r2 = 2f64.sqrt();
        assert!((tilt.a - r2).abs() < 1e-15);
        assert!((tilt.kappa[0] - 1.0).abs() < 1e-15);
        assert!((tilt.kappa[1] - 0.5).abs() < 1e-15);
        assert!((tilt.sojourn_mean(0) - 1.0 / r2).abs() < 1e-15);
        assert!((tilt.sojourn_mean(1) - r2).abs() < 1e-15);
        assert_eq!(tilt.p, *spec.alpha());
        let ledger = entropy_decomposition(&spec, &eta, &tilt).unwrap();
        assert_eq!(ledger.chain_cost, ExtReal::Finite(0.0));
        let want = 0.5 * ell_unchecked(r2) + ell_unchecked(1.0 / r2);
        assert!((ledger.time_cost - want).abs() < 1e-15);
        assert!((ledger.time_cost - (1.5 - r2)).abs() < 1e-15);
    }

    #[test]
    fn closed_form_a_matches_entropy_form() {
        // A = exp(-[R(mu || pi_tilde ⊗ alpha) - int log theta d mu1 - log Q])
        // symmetric alpha: pi ∝ 1/q, so q alpha pi = alpha / Z is symmetric
        let spec = validate_spec(
            None,
            &[0.7, 1.9, 2.4],
            &[
                vec![0.2, 0.5, 0.3],
                vec![0.5, 0.1, 0.4],
                vec![0.3, 0.4, 0.3],
            ],
            1e-9,
        )
        .unwrap();
        let eta = ProbMeasure::new(vec![0.5, 0.2, 0.3]).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        let theta = density(&spec, &tilt.eta).unwrap();
        let mut re = 0.0;
        for x in 0..3 {
            for y in 0..3 {
                let m = tilt.mu.get(x, y);
                re += m * (m / (spec.pi_tilde()[x] * spec.alpha().get(x, y))).ln();
            }
        }
        let log_theta: f64 = (0..3).map(|x| theta[x].ln() * tilt.mu1[x]).sum();
        let a = (-(re - log_theta - spec.mean_intensity().ln())).exp();
        assert!((a - tilt.a).abs() < 1e-13);
        let ledger = entropy_decomposition(&spec, &eta, &tilt).unwrap();
        let i = rate_explicit(&spec, &eta).unwrap().value;
        assert!((ledger.total().finite().unwrap() - i).abs() < 1e-14);
    }

    #[test]
    fn degenerate_branch() {
        // eta = delta at a state without a self loop: pairing vanishes
        let spec = swap2();
        let eta = ProbMeasure::dirac(2, 0).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        assert!(tilt.degenerate);
        assert_eq!(tilt.a, 0.0);
        assert_eq!(tilt.speed, vec![0.0, 1.0]);
        let report = check_constraints(&spec, &eta, &tilt);
        assert_eq!(report.mean_gap, 0.0);
        let ledger = entropy_decomposition(&spec, &eta, &tilt).unwrap();
        assert_eq!(ledger.chain_cost, ExtReal::Finite(0.0));
        assert_eq!(ledger.time_cost, 1.0);
        assert_eq!(ledger.total(), ExtReal::Finite(rate_explicit(&spec, &eta).unwrap().value));
    }

    #[test]
    fn zero_set_rows_keep_original_dynamics() {
        let spec = crate::process::uniform_cell_model(3).unwrap();
        let eta = ProbMeasure::new(vec![0.6, 0.4, 0.0]).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        assert_eq!(tilt.p.row(2), spec.alpha().row(2));
        assert_eq!(tilt.speed[2], 1.0);
        assert_eq!(tilt.b[2], 0.0);
        assert_eq!(tilt.p.get(0, 2), 0.0);
        assert!(tilt.stationarity_residual(&spec) < 1e-15);
        let ledger = entropy_decomposition(&spec, &eta, &tilt).unwrap();
        let i = rate_explicit(&spec, &eta).unwrap().value;
        assert!((ledger.total().finite().unwrap() - i).abs() < 1e-14);
    }

    #[test]
    fn corrupted_rate_is_reported() {
        let (spec, eta) = dirac_approximation(4).unwrap();
        let mut tilt = synthesize_tilt(&spec, &eta).unwrap();
        assert!(check_constraints(&spec, &eta, &tilt).passes(1e-12));
        tilt.a += 1e-3;
        let report = check_constraints(&spec, &eta, &tilt);
        let max_mu1 = tilt.mu1.iter().cloned().fold(0.0, f64::max);
        assert!((report.mean_gap - 1e-3 * max_mu1).abs() < 1e-15);
        assert!(report.marginal_gap < 1e-15);
        assert!(matches!(
            entropy_decomposition(&spec, &eta, &tilt),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn mismatched_target() {
        let (spec, eta) = dirac_approximation(4).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        let other = ProbMeasure::uniform(4).unwrap();
        assert!(matches!(
            entropy_decomposition(&spec, &other, &tilt),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn relative_entropy_rows() {
        let a = [0.25; 4];
        assert_eq!(kernel_relative_entropy(&a, &a), ExtReal::Finite(0.0));
        let d = [0.0, 1.0, 0.0, 0.0];
        let r = kernel_relative_entropy(&d, &a).finite().unwrap();
        assert!((r - 4f64.ln()).abs() < 1e-15);
        assert_eq!(
            kernel_relative_entropy(&[0.5, 0.5], &[1.0, 0.0]),
            ExtReal::Infinite
        );
    }

    #[test]
    fn ext_real_arithmetic() {
        assert_eq!(ExtReal::Infinite.scale(0.0), ExtReal::Finite(0.0));
        assert_eq!(ExtReal::Infinite.scale(2.0), ExtReal::Infinite);
        assert_eq!(
            ExtReal::Finite(1.0) + ExtReal::Infinite,
            ExtReal::Infinite
        );
        assert_eq!(ExtReal::Infinite.to_f64(), f64::INFINITY);
    }

    #[test]
    fn tilted_chain_irreducible_for_interior_targets() {
        let (spec, eta) = dirac_approximation(5).unwrap();
        let tilt = synthesize_tilt(&spec, &eta).unwrap();
        assert!(tilt.is_irreducible());
        let lf = tilt.generator_apply(&spec, &[1.0; 5]).unwrap();
        assert!(lf.iter().all(|v| v.abs() < 1e-15));
    }
}
