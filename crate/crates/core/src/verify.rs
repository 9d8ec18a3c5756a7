//! Randomized cross-checks of the projector against independent dense
//! solvers: the pseudoinverse range/null-space update, the MAP normal
//! equations, the Gaussian posterior mean in covariance form, and local
//! optimality along feasible directions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::KinematicMetric;
use crate::motion::{Skeleton, VecIndex};
use crate::operators::{mask_op, ConstraintSystem, LinOp};
use crate::projector::{ddnm_oracle, map_oracle, objective_value, project_endpoint};

pub const AGREEMENT_TOL: f64 = 1e-8;
pub const OPTIMALITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    /// Worst relative disagreement (or, for optimality, the largest decrease).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &'static str, trials: usize, worst: f64, tolerance: f64) -> Self {
        SuiteResult {
            name,
            trials,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

/// `|a - b| / max(|b|, 1)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1.0)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, d, |_, _| rng.sample(StandardNormal))
}

/// Random small chain-skeleton metric with `3 N J <= max_dim`.
fn random_metric(rng: &mut ChaCha8Rng, max_dim: usize, euclidean: bool) -> Result<KinematicMetric> {
    let joints = rng.random_range(1..=(max_dim / 3).min(8));
    let frames = rng.random_range(1..=max_dim / (3 * joints));
    let skel = Skeleton::chain(joints)?;
    let (w, lambda) = if euclidean {
        (0.0, 1.0)
    } else {
        (rng.random_range(0.0..20.0), rng.random_range(0.1..2.0))
    };
    KinematicMetric::new(&skel, frames, w, lambda)
}

/// Projection with `R = I`, `Sigma = 0` against `A^+ y + (I - A^+ A) x_hat`.
pub fn ddnm_suite(seed: u64, trials: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let metric = random_metric(&mut rng, 48, true)?;
        let d = metric.dim();
        let m = rng.random_range(1..=d.min(12));
        let a = gaussian_matrix(&mut rng, m, d);
        let system = ConstraintSystem::hard("random", LinOp::Dense(a), gaussian_vec(&mut rng, m))?;
        let x = gaussian_vec(&mut rng, d);
        let got = project_endpoint(&x, &system, &metric)?.x1_star;
        worst = worst.max(relative_error(&got, &ddnm_oracle(&x, &system)?));
    }
    Ok(SuiteResult::new("ddnm", trials, worst, AGREEMENT_TOL))
}

/// All-soft projection against the dense MAP normal equations.
pub fn map_suite(seed: u64, trials: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let metric = random_metric(&mut rng, 96, false)?;
        let d = metric.dim();
        let m = rng.random_range(1..=d.min(24));
        let a = gaussian_matrix(&mut rng, m, d);
        let sigma = (0..m).map(|_| rng.random_range(0.01..2.0)).collect();
        let system = ConstraintSystem::new(LinOp::Dense(a), gaussian_vec(&mut rng, m), sigma)?;
        let x = gaussian_vec(&mut rng, d);
        let got = project_endpoint(&x, &system, &metric)?.x1_star;
        worst = worst.max(relative_error(&got, &map_oracle(&x, &system, &metric)?));
    }
    Ok(SuiteResult::new("map", trials, worst, AGREEMENT_TOL))
}

/// With prior covariance `C = R^-1`, projecting the prior mean gives the
/// posterior mean `mu + C A^T (A C A^T + Sigma)^-1 (y - A mu)`.
pub fn posterior_suite(seed: u64, trials: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let metric = random_metric(&mut rng, 60, false)?;
        let d = metric.dim();
        let m = rng.random_range(1..=d.min(16));
        let a = gaussian_matrix(&mut rng, m, d);
        let sigma: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..2.0)).collect();
        let y = gaussian_vec(&mut rng, m);
        let mu = gaussian_vec(&mut rng, d);

        let cov = metric
            .dense()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("dense metric inverse failed".into()))?;
        let s = &a * &cov * a.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(&sigma));
        let mu_v = DVector::from_column_slice(&mu);
        let innov = DVector::from_column_slice(&y) - &a * &mu_v;
        let gain = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance not PD".into()))?
            .solve(&innov);
        let want = &mu_v + &cov * a.transpose() * gain;

        let system = ConstraintSystem::new(LinOp::Dense(a), y, sigma)?;
        let got = project_endpoint(&mu, &system, &metric)?.x1_star;
        worst = worst.max(relative_error(&got, want.as_slice()));
    }
    Ok(SuiteResult::new("posterior", trials, worst, AGREEMENT_TOL))
}

/// Mixed hard/soft system on the 22-joint body; the objective at the
/// returned correction must not decrease along `directions` random
/// directions in the null space of the hard rows, at step `+-1e-3`.
pub fn optimality_suite(seed: u64, directions: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skel = Skeleton::humanml3d();
    let frames = 3;
    let metric = KinematicMetric::new(&skel, frames, 10.0, 1.0)?;
    let d = metric.dim();

    let mut picked = Vec::new();
    while picked.len() < 12 {
        let idx = VecIndex::new(
            rng.random_range(0..3),
            rng.random_range(0..frames),
            rng.random_range(0..22),
        );
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    let hard = ConstraintSystem::hard("hard", mask_op(&picked, frames, 22)?, gaussian_vec(&mut rng, 12))?;
    let m_soft = 10;
    let soft_sigma = (0..m_soft).map(|_| rng.random_range(0.05..1.0)).collect();
    let soft = ConstraintSystem::labelled(
        "soft",
        LinOp::Dense(gaussian_matrix(&mut rng, m_soft, d)),
        gaussian_vec(&mut rng, m_soft),
        soft_sigma,
    )?;
    let a_hard = hard.op().materialize()?;
    let system = ConstraintSystem::stack(vec![hard, soft])?;

    let x = gaussian_vec(&mut rng, d);
    let delta = project_endpoint(&x, &system, &metric)?.delta;
    let base = objective_value(&delta, &x, &system, &metric)?;

    // null-space projector of the hard rows
    let svd = a_hard.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut p = DVector::from_vec(gaussian_vec(&mut rng, d));
        let coeff = &vt * &p;
        p -= vt.transpose() * coeff;
        p /= p.norm();
        for eps in [1e-3, -1e-3] {
            let moved: Vec<f64> = delta.iter().zip(p.iter()).map(|(a, b)| a + eps * b).collect();
            let value = objective_value(&moved, &x, &system, &metric)?;
            worst = worst.max(base - value);
        }
    }
    Ok(SuiteResult::new("optimality", directions, worst, OPTIMALITY_TOL))
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        ddnm_suite(seed, 100)?,
        map_suite(seed.wrapping_add(1), 100)?,
        posterior_suite(seed.wrapping_add(2), 100)?,
        optimality_suite(seed.wrapping_add(3), 200)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_runs() {
        for r in [
            ddnm_suite(1, 10).unwrap(),
            map_suite(2, 10).unwrap(),
            posterior_suite(3, 10).unwrap(),
            optimality_suite(4, 20).unwrap(),
        ] {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0], &[1.0]), 0.0);
        assert_close!(relative_error(&[3.0, 4.0], &[0.0, 0.0]), 5.0, 1e-15);
        assert_close!(relative_error(&[11.0], &[10.0]), 0.1, 1e-15);
    }
}
