//! Random models, targets and controls for property checks.

use rand::Rng;

use crate::process::{validate_spec, Kernel, ProbMeasure, ProcessSpec, DEFAULT_TOL};
use crate::tilt::Control;

/// Reversible model on `n` states from random symmetric conductances.
///
/// A path `0 - 1 - ... - n-1` keeps the chain irreducible; other pairs and
/// self-loops are switched on with probability one half. Intensities are
/// uniform on `[0.5, 3]`.
pub fn random_reversible_spec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProcessSpec {
    assert!(n >= 1, "need at least one state");
    let mut w = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in x..n {
            let on = y == x + 1 || rng.random_bool(0.5) || n == 1;
            if on {
                let c = rng.random_range(0.1..2.0);
                w[x][y] = c;
                w[y][x] = c;
            }
        }
    }
    let alpha: Vec<Vec<f64>> = w
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=3.0)).collect();
    validate_spec(None, &q, &alpha, DEFAULT_TOL).expect("conductance models are reversible")
}

/// Measure with all weights bounded away from zero.
pub fn random_interior_target<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProbMeasure {
    let w = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    ProbMeasure::from_unnormalized(w).expect("positive weights")
}

/// Measure whose entries are zero with probability `zero_prob`; at least one
/// entry stays positive.
pub fn random_target<R: Rng + ?Sized>(rng: &mut R, n: usize, zero_prob: f64) -> ProbMeasure {
    let keep = rng.random_range(0..n);
    let w = (0..n)
        .map(|x| {
            if x != keep && rng.random_bool(zero_prob) {
                0.0
            } else {
                rng.random_range(0.0..1.0) + f64::MIN_POSITIVE
            }
        })
        .collect();
    ProbMeasure::from_unnormalized(w).expect("one positive weight")
}

/// Linear functional with entries uniform on `[-1, 2]`.
pub fn random_linear_f<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..2.0)).collect()
}

/// A control that satisfies the balance, intensity and mean constraints for
/// `eta` but is otherwise random: symmetric `mu` on the support of `alpha`
/// restricted to the support of `eta`, a random rate, and two atoms per
/// holding-time law.
pub fn random_feasible_control<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ProcessSpec,
    eta: &ProbMeasure,
) -> Control {
    let n = spec.n();
    let e = eta.weights();
    let mut m = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in x..n {
            if e[x] > 0.0 && e[y] > 0.0 && spec.alpha().get(x, y) > 0.0 {
                let v = rng.random_range(0.05..1.0);
                m[x][y] = v;
                m[y][x] = v;
            }
        }
    }
    let total: f64 = m.iter().flatten().sum();
    let mu_rows: Vec<Vec<f64>> = if total > 0.0 {
        m.iter().map(|r| r.iter().map(|v| v / total).collect()).collect()
    } else {
        m
    };
    let mu = Kernel::from_rows(&mu_rows).expect("square nonnegative rows");
    let mu1: Vec<f64> = mu_rows.iter().map(|r| r.iter().sum()).collect();
    let a = if total > 0.0 {
        rng.random_range(0.05..3.0)
    } else {
        0.0
    };
    let xi = (0..n)
        .map(|x| {
            let mass = spec.q()[x] * e[x];
            if mass <= 0.0 {
                return vec![(0.0, 0.0)];
            }
            let b = a * mu1[x] / mass;
            let s = rng.random_range(0.0..2.0);
            vec![(b * s, 0.5 * mass), (b * (2.0 - s), 0.5 * mass)]
        })
        .collect();
    Control { a, mu, xi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tilt::CONSTRAINT_TOL;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_specs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..8 {
            let spec = random_reversible_spec(&mut rng, n);
            assert_eq!(spec.n(), n);
            assert!(spec.q().iter().all(|q| (0.5..=3.0).contains(q)));
        }
    }

    #[test]
    fn random_controls_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let spec = random_reversible_spec(&mut rng, n);
            let eta = random_interior_target(&mut rng, n);
            let c = random_feasible_control(&mut rng, &spec, &eta);
            assert!(c.violations(&spec, &eta).passes(CONSTRAINT_TOL));
        }
    }

    #[test]
    fn random_target_keeps_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_target(&mut rng, 5, 0.8);
            assert!(t.weights().iter().any(|w| *w > 0.0));
        }
    }
}
