//! Euler sampling of the flow ODE with a projected clean endpoint at every
//! step, followed by stochastic recomposition of the next state.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{tweedie_endpoint, VelocityOracle};
use crate::metric::KinematicMetric;
use crate::operators::ConstraintSystem;
use crate::projector::{prepare, PreparedSystem};

/// Supplies the constraint system used at time `t`, given the unprojected
/// clean endpoint of that step.
pub trait SystemProvider: Sync {
    fn system_at(&self, t: f64, x1_hat: &[f64]) -> Result<Cow<'_, ConstraintSystem>>;

    /// Static providers return the same system at every step; its
    /// factorization is then reused.
    fn is_static(&self) -> bool {
        false
    }
}

impl SystemProvider for ConstraintSystem {
    fn system_at(&self, _t: f64, _x1_hat: &[f64]) -> Result<Cow<'_, ConstraintSystem>> {
        Ok(Cow::Borrowed(self))
    }

    fn is_static(&self) -> bool {
        true
    }
}

/// Noise-mixing schedule `eta_t` of the recomposition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EtaSchedule {
    /// `eta_t = 1 - sigma_{t+dt} = t + dt`, clamped to `[0, 1]`.
    #[default]
    FlowDps,
    Zero,
    One,
}

impl EtaSchedule {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "flowdps" => Ok(EtaSchedule::FlowDps),
            "zero" => Ok(EtaSchedule::Zero),
            "one" => Ok(EtaSchedule::One),
            other => Err(Error::InvalidParam(format!(
                "unknown eta schedule `{other}` (expected flowdps, zero or one)"
            ))),
        }
    }

    pub fn eval(self, t: f64, dt: f64) -> f64 {
        match self {
            EtaSchedule::FlowDps => (t + dt).clamp(0.0, 1.0),
            EtaSchedule::Zero => 0.0,
            EtaSchedule::One => 1.0,
        }
    }
}

pub fn eta_schedule_eval(name: &str, t: f64, dt: f64) -> Result<f64> {
    Ok(EtaSchedule::from_name(name)?.eval(t, dt))
}

/// Which noise sample is mixed with fresh noise during recomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSource {
    /// The `x_0` drawn at the start of the run.
    #[default]
    Original,
    /// The noise implied by the current state, `(x_t - t x1_hat) / (1 - t)`.
    /// With `eta = 0` this makes each step a plain Euler step.
    Reconstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: EtaSchedule,
    pub noise: NoiseSource,
    pub seed: u64,
    pub record_trajectory: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 100,
            eta: EtaSchedule::FlowDps,
            noise: NoiseSource::Original,
            seed: 0,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    pub hard_residual: f64,
    pub correction_rnorm: f64,
    pub active_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_t: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    /// Projected clean endpoint of the final step.
    pub x: Vec<f64>,
    pub traces: Vec<StepTrace>,
}

fn standard_normal(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs the projected sampler for `config.steps` uniform steps on `[0, 1]`.
pub fn sample(
    oracle: &dyn VelocityOracle,
    provider: &dyn SystemProvider,
    metric: &KinematicMetric,
    config: &SamplerConfig,
) -> Result<SampleResult> {
    let d = oracle.dim();
    if metric.dim() != d {
        return Err(Error::dim("metric vs oracle", d, metric.dim()));
    }
    if config.steps == 0 {
        return Err(Error::InvalidParam("sampler needs at least one step".into()));
    }
    let steps = config.steps;
    let dt = 1.0 / steps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x0 = standard_normal(&mut rng, d);
    let mut x = x0.clone();
    let mut traces = Vec::with_capacity(steps);

    let static_system = if provider.is_static() {
        Some(provider.system_at(0.0, &x0)?)
    } else {
        None
    };
    let static_prepared: Option<PreparedSystem<'_>> = match &static_system {
        Some(sys) => Some(prepare(sys, metric)?),
        None => None,
    };

    for step in 0..steps {
        let t = step as f64 * dt;
        let t_next = (step + 1) as f64 * dt;
        let at = |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };

        let x1_hat = tweedie_endpoint(oracle, &x, t).map_err(at)?;
        let dynamic;
        let prepared = match &static_prepared {
            Some(p) => p,
            None => {
                dynamic = provider.system_at(t, &x1_hat).map_err(at)?;
                &prepare(&dynamic, metric).map_err(at)?
            }
        };
        let proj = prepared.project(&x1_hat).map_err(at)?;
        let system = prepared.system();
        traces.push(StepTrace {
            step,
            t,
            hard_residual: system.hard_residual(&proj.x1_star).map_err(at)?,
            correction_rnorm: metric.norm(&proj.delta).map_err(at)?,
            active_rows: system.rows(),
            x_t: config.record_trajectory.then(|| x.clone()),
            x1_hat: config.record_trajectory.then(|| x1_hat.clone()),
            x1_star: config.record_trajectory.then(|| proj.x1_star.clone()),
        });

        if step + 1 == steps {
            // alpha = 1, sigma = 0: the next state is the projected endpoint
            return Ok(SampleResult {
                x: proj.x1_star,
                traces,
            });
        }

        let eta = config.eta.eval(t, dt);
        let alpha = t_next;
        let sigma = 1.0 - t_next;
        let keep = (1.0 - eta).sqrt();
        let fresh = eta.sqrt();
        let eps = if eta > 0.0 {
            standard_normal(&mut rng, d)
        } else {
            Vec::new()
        };
        for i in 0..d {
            let base = match config.noise {
                NoiseSource::Original => x0[i],
                NoiseSource::Reconstructed => (x[i] - t * x1_hat[i]) / (1.0 - t),
            };
            let mut noise = keep * base;
            if eta > 0.0 {
                noise += fresh * eps[i];
            }
            x[i] = alpha * proj.x1_star[i] + sigma * noise;
        }
    }
    unreachable!("loop returns on its final step")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::GaussianPrior;
    use crate::motion::{flat_len, Skeleton, VecIndex};
    use crate::operators::mask_op;

    fn setup(frames: usize, joints: usize) -> (GaussianPrior, KinematicMetric) {
        let d = flat_len(frames, joints);
        let mean: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
        let prior = GaussianPrior::isotropic(mean, 0.5).unwrap();
        let metric = KinematicMetric::new(&Skeleton::chain(joints).unwrap(), frames, 10.0, 1.0).unwrap();
        (prior, metric)
    }

    #[test]
    fn eta_examples() {
        assert_close!(eta_schedule_eval("flowdps", 0.0, 0.01).unwrap(), 0.01, 1e-15);
        assert_eq!(eta_schedule_eval("flowdps", 0.99, 0.01).unwrap(), 1.0);
        assert_eq!(eta_schedule_eval("zero", 0.3, 0.01).unwrap(), 0.0);
        assert_eq!(eta_schedule_eval("one", 0.3, 0.01).unwrap(), 1.0);
        assert!(eta_schedule_eval("cosine", 0.3, 0.01).is_err());
    }

    #[test]
    fn unconstrained_reconstructed_zero_eta_is_euler() {
        let (prior, metric) = setup(2, 3);
        let cfg = SamplerConfig {
            steps: 25,
            eta: EtaSchedule::Zero,
            noise: NoiseSource::Reconstructed,
            seed: 4,
            record_trajectory: true,
        };
        let sys = ConstraintSystem::empty(prior.dim());
        let out = sample(&prior, &sys, &metric, &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = standard_normal(&mut rng, prior.dim());
        let dt = 1.0 / 25.0;
        for step in 0..25 {
            let t = step as f64 * dt;
            let recorded = out.traces[step].x_t.as_ref().unwrap();
            for (a, b) in recorded.iter().zip(&x) {
                assert_close!(*a, *b, 1e-10);
            }
            let v = prior.velocity(&x, t).unwrap();
            if step + 1 < 25 {
                x.iter_mut().zip(&v).for_each(|(xi, vi)| *xi += dt * vi);
            }
        }
    }

    #[test]
    fn full_observation_sticks() {
        let (prior, metric) = setup(2, 3);
        let d = prior.dim();
        let all: Vec<_> = (0..d).map(|f| VecIndex::from_flat(f, 2, 3)).collect();
        let op = mask_op(&all, 2, 3).unwrap();
        let target: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
        let sys = ConstraintSystem::hard("all", op.clone(), op.apply(&target).unwrap()).unwrap();
        let cfg = SamplerConfig {
            steps: 10,
            record_trajectory: true,
            ..Default::default()
        };
        let out = sample(&prior, &sys, &metric, &cfg).unwrap();
        for tr in &out.traces {
            for (a, b) in tr.x1_star.as_ref().unwrap().iter().zip(&target) {
                assert_close!(*a, *b, 1e-12);
            }
        }
        for (a, b) in out.x.iter().zip(&target) {
            assert_close!(*a, *b, 1e-12);
        }
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let (prior, metric) = setup(3, 4);
        let sel = [VecIndex::new(0, 1, 2), VecIndex::new(2, 0, 0)];
        let sys = ConstraintSystem::hard("k", mask_op(&sel, 3, 4).unwrap(), vec![0.5, -0.5]).unwrap();
        let cfg = SamplerConfig {
            steps: 20,
            seed: 99,
            ..Default::default()
        };
        let a = sample(&prior, &sys, &metric, &cfg).unwrap();
        let b = sample(&prior, &sys, &metric, &cfg).unwrap();
        assert_eq!(a.x, b.x);
        let c = sample(&prior, &sys, &metric, &SamplerConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn every_step_is_feasible() {
        let (prior, metric) = setup(4, 3);
        let sel = [VecIndex::new(1, 0, 1), VecIndex::new(0, 3, 2), VecIndex::new(2, 2, 0)];
        let sys = ConstraintSystem::hard("k", mask_op(&sel, 4, 3).unwrap(), vec![3.0, -2.0, 1.0]).unwrap();
        let out = sample(&prior, &sys, &metric, &SamplerConfig::default()).unwrap();
        assert!(out.traces.iter().all(|t| t.hard_residual <= 1e-8));
        assert_eq!(out.traces.len(), 100);
    }

    #[test]
    fn rejects_zero_steps_and_mismatch() {
        let (prior, metric) = setup(2, 3);
        let sys = ConstraintSystem::empty(prior.dim());
        let cfg = SamplerConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(sample(&prior, &sys, &metric, &cfg).is_err());
        let other = KinematicMetric::new(&Skeleton::chain(3).unwrap(), 5, 1.0, 1.0).unwrap();
        assert!(sample(&prior, &sys, &other, &SamplerConfig::default()).is_err());
    }

    #[test]
    fn step_errors_carry_the_step_index() {
        struct Broken;
        impl SystemProvider for Broken {
            fn system_at(&self, t: f64, _x: &[f64]) -> Result<Cow<'_, ConstraintSystem>> {
                if t > 0.5 {
                    Err(Error::Numerical("boom".into()))
                } else {
                    Ok(Cow::Owned(ConstraintSystem::empty(18)))
                }
            }
        }
        let (prior, metric) = setup(2, 3);
        let cfg = SamplerConfig {
            steps: 10,
            ..Default::default()
        };
        match sample(&prior, &Broken, &metric, &cfg) {
            Err(Error::Step { step, .. }) => assert_eq!(step, 6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
