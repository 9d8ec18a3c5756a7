//! Skeletal motion data model and the flat vectorization shared by every
//! solver in the crate.
//!
//! A motion is an `N x J x 3` array of world-space joint positions. Solvers
//! work on a flat vector of length `3 * N * J` laid out axis-slowest and
//! joint-fastest: entry `(c * N + n) * J + j` holds axis `c` of joint `j` at
//! frame `n`. Under this layout the kinematic metric is literally
//! `I_3 (x) I_N (x) L`, i.e. one `J x J` operator per contiguous block.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};

const HUMANML3D_22: &str = include_str!("../data/humanml3d_22.json");

/// Joint topology of a skeleton. Always connected.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    joint_names: Option<Vec<String>>,
}

impl Skeleton {
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, joint_names: Option<Vec<String>>) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Skeleton("skeleton needs at least one joint".into()));
        }
        if let Some(names) = &joint_names {
            if names.len() != joint_count {
                return Err(Error::dim("joint names", joint_count, names.len()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= joint_count || b >= joint_count {
                return Err(Error::Skeleton(format!(
                    "edge ({a}, {b}) references a joint outside [0, {joint_count})"
                )));
            }
            if a == b {
                return Err(Error::Skeleton(format!("self-loop on joint {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::Skeleton(format!("duplicate edge ({a}, {b})")));
            }
            normalized.push(key);
        }
        let skeleton = Skeleton {
            joint_count,
            edges: normalized,
            joint_names,
        };
        let reached = skeleton.reachable_from_root();
        if reached != joint_count {
            return Err(Error::Skeleton(format!(
                "edge set is disconnected: {reached} of {joint_count} joints reachable from joint 0"
            )));
        }
        Ok(skeleton)
    }

    /// Path graph `0 - 1 - ... - (J-1)`.
    pub fn chain(joint_count: usize) -> Result<Self> {
        let edges = (1..joint_count).map(|j| (j - 1, j)).collect();
        Skeleton::new(joint_count, edges, None)
    }

    /// The 22-joint HumanML3D body (pelvis root, spine to head, two arms, two legs).
    pub fn humanml3d() -> Self {
        crate::io::parse_skeleton(HUMANML3D_22).expect("bundled skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn joint_names(&self) -> Option<&[String]> {
        self.joint_names.as_deref()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names
            .as_ref()
            .and_then(|names| names.iter().position(|n| n == name))
    }

    pub fn degree(&self, joint: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == joint || b == joint).count()
    }

    pub fn neighbors(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == joint {
                Some(b)
            } else if b == joint {
                Some(a)
            } else {
                None
            }
        })
    }

    fn reachable_from_root(&self) -> usize {
        let mut visited = vec![false; self.joint_count];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        let mut count = 1;
        while let Some(j) = queue.pop_front() {
            for k in self.neighbors(j) {
                if !visited[k] {
                    visited[k] = true;
                    count += 1;
                    queue.push_back(k);
                }
            }
        }
        count
    }
}

/// Location of one scalar coordinate inside a motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VecIndex {
    pub axis: usize,
    pub frame: usize,
    pub joint: usize,
}

impl VecIndex {
    pub fn new(axis: usize, frame: usize, joint: usize) -> Self {
        VecIndex { axis, frame, joint }
    }

    pub fn flat(&self, frames: usize, joints: usize) -> usize {
        (self.axis * frames + self.frame) * joints + self.joint
    }

    pub fn from_flat(flat: usize, frames: usize, joints: usize) -> Self {
        let joint = flat % joints;
        let block = flat / joints;
        VecIndex {
            axis: block / frames,
            frame: block % frames,
            joint,
        }
    }

    pub fn check(&self, frames: usize, joints: usize) -> Result<()> {
        if self.axis >= 3 || self.frame >= frames || self.joint >= joints {
            return Err(Error::OutOfRange(format!(
                "(axis {}, frame {}, joint {}) outside 3 x {frames} x {joints}",
                self.axis, self.frame, self.joint
            )));
        }
        Ok(())
    }
}

/// Flat length of an `N`-frame motion over `J` joints.
pub fn flat_len(frames: usize, joints: usize) -> usize {
    3 * frames * joints
}

/// A sequence of `N` poses over a shared skeleton, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeq {
    skeleton: Arc<Skeleton>,
    frames: usize,
    data: Vec<[f64; 3]>,
}

impl MotionSeq {
    pub fn new(skeleton: Arc<Skeleton>, frames: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidParam("motion needs at least one frame".into()));
        }
        let expected = frames * skeleton.joint_count();
        if data.len() != expected {
            return Err(Error::dim("motion joint positions", expected, data.len()));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("motion contains non-finite values".into()));
        }
        Ok(MotionSeq { skeleton, frames, data })
    }

    pub fn zeros(skeleton: Arc<Skeleton>, frames: usize) -> Self {
        let n = frames * skeleton.joint_count();
        MotionSeq {
            skeleton,
            frames,
            data: vec![[0.0; 3]; n],
        }
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn flat_len(&self) -> usize {
        flat_len(self.frames, self.joints())
    }

    pub fn position(&self, frame: usize, joint: usize) -> [f64; 3] {
        self.data[frame * self.joints() + joint]
    }

    pub fn set_position(&mut self, frame: usize, joint: usize, p: [f64; 3]) {
        let j = self.joints();
        self.data[frame * j + joint] = p;
    }

    /// Positions of frame `n`, one entry per joint.
    pub fn frame(&self, frame: usize) -> &[[f64; 3]] {
        let j = self.joints();
        &self.data[frame * j..(frame + 1) * j]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn vectorize(&self) -> Vec<f64> {
        let (n_frames, n_joints) = (self.frames, self.joints());
        let mut v = vec![0.0; self.flat_len()];
        for n in 0..n_frames {
            for j in 0..n_joints {
                let p = self.data[n * n_joints + j];
                for (c, value) in p.into_iter().enumerate() {
                    v[(c * n_frames + n) * n_joints + j] = value;
                }
            }
        }
        v
    }

    pub fn devectorize(v: &[f64], frames: usize, skeleton: Arc<Skeleton>) -> Result<Self> {
        let n_joints = skeleton.joint_count();
        let expected = flat_len(frames, n_joints);
        if v.len() != expected {
            return Err(Error::dim("flat motion vector", expected, v.len()));
        }
        let mut data = vec![[0.0; 3]; frames * n_joints];
        for n in 0..frames {
            for j in 0..n_joints {
                let p = &mut data[n * n_joints + j];
                for (c, slot) in p.iter_mut().enumerate() {
                    *slot = v[(c * frames + n) * n_joints + j];
                }
            }
        }
        MotionSeq::new(skeleton, frames, data)
    }
}
