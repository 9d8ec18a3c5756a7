use nalgebra::DMatrix;
use projflow::flow::{tweedie_endpoint, GaussianPrior, MixturePrior, ZeroVelocity};
use projflow::synth::synth_corpus;
use projflow::{Skeleton, VelocityOracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// Self-normalized importance estimate of `E[x1 | x_t]` from prior draws,
/// with per-coordinate standard errors.
fn mc_conditional_mean(draws: &[Vec<f64>], x_t: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let s2 = (1.0 - t) * (1.0 - t);
    let logw: Vec<f64> = draws
        .iter()
        .map(|x1| -x1.iter().zip(x_t).map(|(a, b)| (b - t * a).powi(2)).sum::<f64>() / (2.0 * s2))
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let d = x_t.len();
    let mut est = vec![0.0; d];
    for (x1, wi) in draws.iter().zip(&w) {
        for (e, v) in est.iter_mut().zip(x1) {
            *e += wi * v / total;
        }
    }
    let mut se = vec![0.0; d];
    for (x1, wi) in draws.iter().zip(&w) {
        for c in 0..d {
            se[c] += (wi / total).powi(2) * (x1[c] - est[c]).powi(2);
        }
    }
    (est, se.into_iter().map(f64::sqrt).collect())
}

fn path_point(rng: &mut ChaCha8Rng, x1: &[f64], t: f64) -> Vec<f64> {
    x1.iter()
        .map(|v| t * v + (1.0 - t) * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn assert_within_3se(got: &[f64], est: &[f64], se: &[f64]) {
    for c in 0..got.len() {
        let z = (got[c] - est[c]).abs() / se[c];
        assert!(
            z <= 3.0,
            "coordinate {c}: analytic {} vs MC {} (z = {z:.2})",
            got[c],
            est[c]
        );
    }
}

#[test]
fn identity_covariance_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mu = vec![0.5, -1.0, 2.0];
    let prior = GaussianPrior::isotropic(mu.clone(), 1.0).unwrap();
    let draws: Vec<Vec<f64>> = (0..1_000_000).map(|_| prior.sample(&mut rng)).collect();
    for &t in &[0.3, 0.6] {
        let x1 = prior.sample(&mut rng);
        let x_t = path_point(&mut rng, &x1, t);
        let got = prior.conditional_mean(&x_t, t).unwrap();
        // scalar formula
        let den = t * t + (1.0 - t) * (1.0 - t);
        for c in 0..3 {
            let want = mu[c] + t * (x_t[c] - t * mu[c]) / den;
            assert!((got[c] - want).abs() < 1e-12);
        }
        let (est, se) = mc_conditional_mean(&draws, &x_t, t);
        assert_within_3se(&got, &est, &se);
    }
}

#[test]
fn mixture_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let d = 6;
    let comp = |rng: &mut ChaCha8Rng, shift: f64| {
        let mu = (0..d).map(|_| shift + rng.random_range(-0.5..0.5)).collect();
        let w = DMatrix::from_fn(d, 2, |_, _| rng.random_range(-0.6..0.6));
        GaussianPrior::low_rank(mu, w, 0.2).unwrap()
    };
    let (a, b) = (comp(&mut rng, 1.0), comp(&mut rng, -1.0));
    let mix = MixturePrior::new(vec![(0.35, a), (0.65, b)]).unwrap();
    let draws: Vec<Vec<f64>> = (0..1_000_000).map(|_| mix.sample(&mut rng)).collect();
    for &t in &[0.25, 0.5] {
        let x1 = mix.sample(&mut rng);
        let x_t = path_point(&mut rng, &x1, t);
        let got = mix.conditional_mean(&x_t, t).unwrap();
        let (est, se) = mc_conditional_mean(&draws, &x_t, t);
        assert_within_3se(&got, &est, &se);
    }
}

#[test]
fn tweedie_of_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    assert_eq!(tweedie_endpoint(&ZeroVelocity(5), &x, 0.4).unwrap(), x);
    let prior = GaussianPrior::low_rank(vec![0.1; 5], DMatrix::from_element(5, 1, 0.3), 0.5).unwrap();
    let hat = tweedie_endpoint(&prior, &x, 0.7).unwrap();
    let want = prior.conditional_mean(&x, 0.7).unwrap();
    for (h, w) in hat.iter().zip(&want) {
        assert!((h - w).abs() < 1e-12);
    }
    // velocity stays finite up to the time limit
    let v = prior.velocity(&x, 1.0 - 1e-6).unwrap();
    assert!(v.iter().all(|c| c.is_finite()));
    assert!(prior.velocity(&x, 1.0).is_err());
}

#[test]
fn corpus_moments_are_reproducible() {
    let skel = Arc::new(Skeleton::humanml3d());
    let moments = || {
        let corpus = synth_corpus(&skel, 20, 30, 4).unwrap();
        let flat: Vec<Vec<f64>> = corpus.iter().map(|m| m.vectorize()).collect();
        let d = flat[0].len();
        let mean: Vec<f64> = (0..d).map(|i| flat.iter().map(|v| v[i]).sum::<f64>() / 30.0).collect();
        let var: Vec<f64> = (0..d)
            .map(|i| flat.iter().map(|v| (v[i] - mean[i]).powi(2)).sum::<f64>() / 29.0)
            .collect();
        (mean, var)
    };
    let (m1, v1) = moments();
    let (m2, v2) = moments();
    assert_eq!(
        m1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        m2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        v1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        v2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
