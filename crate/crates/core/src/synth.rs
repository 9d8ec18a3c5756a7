//! Procedural gait-like motion corpus used to fit analytic priors.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::{MotionSeq, Skeleton};

/// Frame rate assumed when converting speeds and frequencies to per-frame units.
pub const CORPUS_FPS: f64 = 20.0;

/// Rest-pose offsets (child relative to parent, meters, y up, z forward)
/// for the 22-joint body.
const BODY_OFFSETS: [(usize, [f64; 3]); 22] = [
    (usize::MAX, [0.0, 0.93, 0.0]),
    (0, [0.06, -0.09, 0.0]),
    (0, [-0.06, -0.09, 0.0]),
    (0, [0.0, 0.11, -0.01]),
    (1, [0.04, -0.38, 0.0]),
    (2, [-0.04, -0.38, 0.0]),
    (3, [0.0, 0.14, 0.0]),
    (4, [0.0, -0.40, -0.04]),
    (5, [0.0, -0.40, -0.04]),
    (6, [0.0, 0.05, 0.02]),
    (7, [0.0, -0.05, 0.12]),
    (8, [0.0, -0.05, 0.12]),
    (9, [0.0, 0.21, -0.03]),
    (9, [0.08, 0.12, 0.0]),
    (9, [-0.08, 0.12, 0.0]),
    (12, [0.0, 0.09, 0.05]),
    (13, [0.12, 0.04, 0.0]),
    (14, [-0.12, 0.04, 0.0]),
    (16, [0.02, -0.26, 0.0]),
    (17, [-0.02, -0.26, 0.0]),
    (18, [0.0, -0.25, 0.02]),
    (19, [0.0, -0.25, 0.02]),
];

fn rotate_x(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]]
}

fn rotate_y(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn is_body22(skeleton: &Skeleton) -> bool {
    skeleton.joint_count() == 22 && skeleton.joint_names() == Skeleton::humanml3d().joint_names()
}

/// Per-sequence random gait parameters.
struct Gait {
    start: [f64; 2],
    heading: f64,
    turn_amp: f64,
    turn_freq: f64,
    turn_phase: f64,
    speed: f64,
    step_freq: f64,
    phase: f64,
    hip_amp: f64,
    knee_amp: f64,
    arm_amp: f64,
    bob: f64,
}

impl Gait {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Gait {
            start: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            heading: rng.random_range(-PI..PI),
            turn_amp: rng.random_range(0.0..0.8),
            turn_freq: rng.random_range(0.05..0.3),
            turn_phase: rng.random_range(0.0..2.0 * PI),
            speed: rng.random_range(0.6..1.4),
            step_freq: rng.random_range(0.8..1.2),
            phase: rng.random_range(0.0..2.0 * PI),
            hip_amp: rng.random_range(0.25..0.5),
            knee_amp: rng.random_range(0.3..0.8),
            arm_amp: rng.random_range(0.15..0.45),
            bob: rng.random_range(0.01..0.03),
        }
    }

    fn heading_at(&self, time: f64) -> f64 {
        self.heading + self.turn_amp * (2.0 * PI * self.turn_freq * time + self.turn_phase).sin()
    }
}

/// `count` deterministic motions of `frames` frames each. Each sequence walks
/// along a smoothly turning path with oscillating limbs; amplitudes, phases,
/// speed and turning are drawn per sequence from `seed`.
pub fn synth_corpus(skeleton: &Arc<Skeleton>, frames: usize, count: usize, seed: u64) -> Result<Vec<MotionSeq>> {
    if count == 0 {
        return Err(Error::InvalidParam("corpus count must be >= 1".into()));
    }
    if frames == 0 {
        return Err(Error::InvalidParam("corpus frames must be >= 1".into()));
    }
    let body = is_body22(skeleton);
    let generic = if body { None } else { Some(GenericRig::new(skeleton)) };
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let gait = Gait::draw(&mut rng);
            let mut data = Vec::with_capacity(frames * skeleton.joint_count());
            let mut root = gait.start;
            for n in 0..frames {
                let time = n as f64 / CORPUS_FPS;
                let heading = gait.heading_at(time);
                if n > 0 {
                    let step = gait.speed / CORPUS_FPS;
                    root[0] += step * heading.sin();
                    root[1] += step * heading.cos();
                }
                let swing = 2.0 * PI * gait.step_freq * time + gait.phase;
                let local = match &generic {
                    None => body_pose(&gait, swing),
                    Some(rig) => rig.pose(&gait, swing),
                };
                data.extend(local.into_iter().map(|p| {
                    let r = rotate_y(p, heading);
                    [r[0] + root[0], r[1], r[2] + root[1]]
                }));
            }
            MotionSeq::new(skeleton.clone(), frames, data)
        })
        .collect()
}

/// Heading-local pose of the 22-joint body at gait phase `swing`.
fn body_pose(gait: &Gait, swing: f64) -> Vec<[f64; 3]> {
    let mut angle = [0.0f64; 22];
    let left = swing.sin();
    let right = -left;
    angle[1] = gait.hip_amp * left;
    angle[2] = gait.hip_amp * right;
    // knees flex while the leg swings forward
    angle[4] = -gait.knee_amp * (0.5 + 0.5 * (swing + 0.5 * PI).sin());
    angle[5] = -gait.knee_amp * (0.5 + 0.5 * (swing + 1.5 * PI).sin());
    angle[16] = gait.arm_amp * right;
    angle[17] = gait.arm_amp * left;
    angle[18] = 0.3 * gait.arm_amp * (1.0 + right);
    angle[19] = 0.3 * gait.arm_amp * (1.0 + left);

    let mut world = [[0.0; 3]; 22];
    let mut rot = [0.0f64; 22];
    for (j, &(parent, offset)) in BODY_OFFSETS.iter().enumerate() {
        if parent == usize::MAX {
            world[j] = [offset[0], offset[1] + gait.bob * (2.0 * swing).cos(), offset[2]];
            continue;
        }
        // rotation accumulates down the chain about the lateral axis
        rot[j] = rot[parent] + angle[parent];
        world[j] = add(world[parent], rotate_x(offset, -rot[j]));
    }
    world.to_vec()
}

/// Rest pose and per-joint oscillation for skeletons without a known body layout.
struct GenericRig {
    parent: Vec<usize>,
    offset: Vec<[f64; 3]>,
    order: Vec<usize>,
}

impl GenericRig {
    fn new(skeleton: &Skeleton) -> Self {
        let j = skeleton.joint_count();
        let mut parent = vec![usize::MAX; j];
        let mut offset = vec![[0.0, 1.0, 0.0]; j];
        let mut order = Vec::with_capacity(j);
        let mut seen = vec![false; j];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(p) = queue.pop_front() {
            order.push(p);
            let children: Vec<usize> = skeleton.neighbors(p).filter(|&c| !seen[c]).collect();
            let spread = children.len() as f64;
            for (k, &c) in children.iter().enumerate() {
                seen[c] = true;
                parent[c] = p;
                offset[c] = [0.12 * (k as f64 - 0.5 * (spread - 1.0)), -0.15, 0.02];
                queue.push_back(c);
            }
        }
        GenericRig { parent, offset, order }
    }

    fn pose(&self, gait: &Gait, swing: f64) -> Vec<[f64; 3]> {
        let mut world = vec![[0.0; 3]; self.parent.len()];
        for &j in &self.order {
            let p = self.parent[j];
            if p == usize::MAX {
                world[j] = [0.0, 1.0 + gait.bob * (2.0 * swing).cos(), 0.0];
            } else {
                let wobble = gait.hip_amp * (swing + 0.7 * j as f64).sin();
                world[j] = add(world[p], rotate_x(self.offset[j], wobble));
            }
        }
        world
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let s = Arc::new(Skeleton::humanml3d());
        let a = synth_corpus(&s, 16, 4, 7).unwrap();
        let b = synth_corpus(&s, 16, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(&s, 16, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_is_finite_and_moves() {
        let s = Arc::new(Skeleton::humanml3d());
        let corpus = synth_corpus(&s, 60, 100, 1).unwrap();
        assert_eq!(corpus.len(), 100);
        for m in &corpus {
            assert!(m.positions().iter().flatten().all(|v| v.is_finite()));
            let a = m.position(0, 0);
            let b = m.position(59, 0);
            let disp = ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!(disp > 0.0);
        }
    }

    #[test]
    fn bones_stay_rigid_on_body() {
        let s = Arc::new(Skeleton::humanml3d());
        let m = &synth_corpus(&s, 30, 1, 3).unwrap()[0];
        for &(a, b) in s.edges() {
            let len = |n: usize| {
                let (p, q) = (m.position(n, a), m.position(n, b));
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            };
            let l0 = len(0);
            for n in 1..30 {
                assert_close!(len(n), l0, 1e-12);
            }
        }
    }

    #[test]
    fn generic_skeleton_works() {
        let s = Arc::new(Skeleton::chain(5).unwrap());
        let corpus = synth_corpus(&s, 10, 3, 2).unwrap();
        assert_eq!(corpus[0].joints(), 5);
    }

    #[test]
    fn zero_count_rejected() {
        let s = Arc::new(Skeleton::chain(2).unwrap());
        assert!(synth_corpus(&s, 10, 0, 0).is_err());
    }
}
