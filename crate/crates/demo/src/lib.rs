//! Browser demo: a small fitted prior on the 22-joint body plus three
//! interactive operations. Everything here is plain Rust; the
//! `wasm_bindgen` wrappers at the bottom only marshal flat `f64` arrays.
//!
//! Positions handed to JavaScript are frame-major: `((n * J) + j) * 3 + c`.

use std::sync::Arc;

use projflow::flow::fit_gaussian_prior;
use projflow::inpaint::{build_pseudo_obs, trust_scores, KeyframeSpec, TrustParams};
use projflow::motion::VecIndex;
use projflow::operators::mask_op;
use projflow::synth::synth_corpus;
use projflow::tasks::{keyframe_frames, sample_motion, Placement, Task};
use projflow::{
    project_endpoint, ConstraintSystem, GaussianPrior, KinematicMetric, MotionSeq, Result, SamplerConfig, Skeleton,
};
use wasm_bindgen::prelude::*;

pub const FRAMES: usize = 32;
const CORPUS: usize = 60;
const RANK: usize = 6;
const PELVIS: usize = 0;

pub struct DemoCore {
    skeleton: Arc<Skeleton>,
    prior: GaussianPrior,
    metric: KinematicMetric,
    reference: MotionSeq,
}

/// Result of dragging one joint of one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct DragResult {
    /// Corrected pose under the kinematic metric, joint-major xyz.
    pub kinematic: Vec<f64>,
    /// Corrected pose under the Euclidean metric.
    pub euclidean: Vec<f64>,
}

/// Scheduler curves sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCurves {
    pub t: Vec<f64>,
    pub radius: Vec<f64>,
    pub tau: Vec<f64>,
    /// Number of active pseudo coordinates.
    pub active: Vec<f64>,
    /// Mean trust score over the active (frame, joint) pairs; 0 when none.
    pub mean_pi: Vec<f64>,
}

fn frame_major(m: &MotionSeq) -> Vec<f64> {
    m.positions().iter().flatten().copied().collect()
}

impl DemoCore {
    pub fn new(seed: u64) -> Result<Self> {
        let skeleton = Arc::new(Skeleton::humanml3d());
        let corpus = synth_corpus(&skeleton, FRAMES, CORPUS, seed)?;
        let flat: Vec<Vec<f64>> = corpus.iter().map(|m| m.vectorize()).collect();
        let prior = fit_gaussian_prior(&flat, RANK)?;
        let metric = KinematicMetric::new(&skeleton, FRAMES, 10.0, 1.0)?;
        let reference = synth_corpus(&skeleton, FRAMES, 1, seed.wrapping_add(1))?.remove(0);
        Ok(DemoCore {
            skeleton,
            prior,
            metric,
            reference,
        })
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn edges(&self) -> Vec<u32> {
        self.skeleton
            .edges()
            .iter()
            .flat_map(|&(a, b)| [a as u32, b as u32])
            .collect()
    }

    pub fn reference(&self) -> Vec<f64> {
        frame_major(&self.reference)
    }

    /// Moves `joint` of reference frame `frame` to `target` with the smallest
    /// correction under the kinematic and under the Euclidean metric.
    pub fn drag(&self, frame: usize, joint: usize, target: [f64; 3], w_kin: f64) -> Result<DragResult> {
        let j = self.joints();
        let pose = MotionSeq::new(
            self.skeleton.clone(),
            1,
            self.reference.frame(frame.min(FRAMES - 1)).to_vec(),
        )?;
        let x = pose.vectorize();
        let picked: Vec<VecIndex> = (0..3).map(|c| VecIndex::new(c, 0, joint)).collect();
        let system = ConstraintSystem::hard("drag", mask_op(&picked, 1, j)?, target.to_vec())?;
        let solve = |w: f64| -> Result<Vec<f64>> {
            let metric = KinematicMetric::new(&self.skeleton, 1, w, 1.0)?;
            let out = project_endpoint(&x, &system, &metric)?.x1_star;
            Ok(frame_major(&MotionSeq::devectorize(&out, 1, self.skeleton.clone())?))
        };
        Ok(DragResult {
            kinematic: solve(w_kin)?,
            euclidean: solve(0.0)?,
        })
    }

    /// Dynamic-masking and trust curves for full-pose keyframes at
    /// `key_frames`, evaluated on the reference motion.
    pub fn schedule(&self, key_frames: &[usize], samples: usize) -> Result<ScheduleCurves> {
        let mut obs = Vec::new();
        for &n in key_frames {
            for jt in 0..self.joints() {
                let p = self.reference.position(n.min(FRAMES - 1), jt);
                obs.extend((0..3).map(|c| (VecIndex::new(c, n.min(FRAMES - 1), jt), p[c])));
            }
        }
        obs.sort_by_key(|o| (o.0.frame, o.0.joint, o.0.axis));
        obs.dedup_by_key(|o| o.0);
        let spec = KeyframeSpec::new(obs, FRAMES, self.joints())?;
        let table = build_pseudo_obs(&spec);
        let params = TrustParams::default();
        let x = self.reference.vectorize();
        let mut curves = ScheduleCurves {
            t: Vec::new(),
            radius: Vec::new(),
            tau: Vec::new(),
            active: Vec::new(),
            mean_pi: Vec::new(),
        };
        let samples = samples.max(2);
        for k in 0..samples {
            let t = k as f64 / (samples - 1) as f64;
            let active = table.active(params.radius(t));
            let scores = trust_scores(t, &x, &active, &self.metric, &params)?;
            let mean_pi = if scores.is_empty() {
                0.0
            } else {
                scores.iter().map(|s| s.pi).sum::<f64>() / scores.len() as f64
            };
            curves.t.push(t);
            curves.radius.push(params.radius(t));
            curves.tau.push(params.tau(t));
            curves.active.push(active.len() as f64);
            curves.mean_pi.push(mean_pi);
        }
        Ok(curves)
    }

    /// Samples a motion whose pelvis passes through `waypoints` (ground-plane
    /// `x, z` pairs) at evenly spaced frames. Returns the motion and its
    /// largest hard-constraint residual.
    pub fn sample_trajectory(&self, waypoints: &[[f64; 2]], seed: u64, steps: usize) -> Result<(Vec<f64>, f64)> {
        let frames = keyframe_frames(waypoints.len(), FRAMES, Placement::Even)?;
        let obs = frames
            .iter()
            .zip(waypoints)
            .flat_map(|(&n, p)| [(VecIndex::new(0, n, PELVIS), p[0]), (VecIndex::new(2, n, PELVIS), p[1])])
            .collect();
        let task = Task::new(self.skeleton.clone(), FRAMES).with_points(obs)?;
        let cfg = SamplerConfig {
            steps,
            seed,
            ..Default::default()
        };
        let params = TrustParams::default();
        let (motion, _) = sample_motion(&self.prior, &task, &self.metric, &cfg, Some(&params))?;
        let residual = task.static_system()?.hard_residual(&motion.vectorize())?;
        Ok((frame_major(&motion), residual))
    }
}

fn js_err(e: projflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            core: DemoCore::new(seed as u64).map_err(js_err)?,
        })
    }

    pub fn frames(&self) -> usize {
        FRAMES
    }

    pub fn joints(&self) -> usize {
        self.core.joints()
    }

    pub fn edges(&self) -> Vec<u32> {
        self.core.edges()
    }

    pub fn reference(&self) -> Vec<f64> {
        self.core.reference()
    }

    /// `[kinematic pose..., euclidean pose...]`, each `J * 3` long.
    pub fn drag(
        &self,
        frame: usize,
        joint: usize,
        x: f64,
        y: f64,
        z: f64,
        w_kin: f64,
    ) -> std::result::Result<Vec<f64>, JsError> {
        let r = self.core.drag(frame, joint, [x, y, z], w_kin).map_err(js_err)?;
        Ok(r.kinematic.into_iter().chain(r.euclidean).collect())
    }

    /// Five rows of `samples` values: t, radius, tau, active count, mean pi.
    pub fn schedule(&self, key_frames: Vec<u32>, samples: usize) -> std::result::Result<Vec<f64>, JsError> {
        let kf: Vec<usize> = key_frames.into_iter().map(|k| k as usize).collect();
        let c = self.core.schedule(&kf, samples).map_err(js_err)?;
        Ok([c.t, c.radius, c.tau, c.active, c.mean_pi].concat())
    }

    /// Motion positions followed by the hard residual as the last element.
    pub fn sample_trajectory(
        &self,
        waypoints_xz: Vec<f64>,
        seed: u32,
        steps: usize,
    ) -> std::result::Result<Vec<f64>, JsError> {
        let wp: Vec<[f64; 2]> = waypoints_xz.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let (mut out, residual) = self.core.sample_trajectory(&wp, seed as u64, steps).map_err(js_err)?;
        out.push(residual);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drag_hits_the_target_and_metrics_differ() {
        let core = DemoCore::new(3).unwrap();
        let j = core.joints();
        let target = [0.4, 1.3, 0.2];
        let r = core.drag(5, 20, target, 10.0).unwrap();
        for pose in [&r.kinematic, &r.euclidean] {
            for c in 0..3 {
                assert!((pose[20 * 3 + c] - target[c]).abs() < 1e-12);
            }
        }
        // the Euclidean correction leaves every other joint in place
        let before = &core.reference()[5 * j * 3..6 * j * 3];
        for jt in (0..j).filter(|&jt| jt != 20) {
            for c in 0..3 {
                assert!((r.euclidean[jt * 3 + c] - before[jt * 3 + c]).abs() < 1e-14);
            }
        }
        // the kinematic one moves the wrist's neighbour too
        let moved = (0..3)
            .map(|c| (r.kinematic[18 * 3 + c] - before[18 * 3 + c]).abs())
            .sum::<f64>();
        assert!(moved > 1e-6);
    }

    #[test]
    fn schedule_fades() {
        let core = DemoCore::new(3).unwrap();
        let c = core.schedule(&[0, 16, 31], 11).unwrap();
        assert_eq!(c.radius[0], 10.0);
        assert_eq!(*c.radius.last().unwrap(), 3.0);
        assert!(c.active.windows(2).all(|w| w[1] <= w[0]));
        assert!(c.active[0] > 0.0);
    }
}
