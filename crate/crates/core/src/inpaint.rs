//! Time-varying constraints for motion inpainting.
//!
//! Hard keyframes are complemented by soft pseudo-observations obtained by
//! per-joint linear interpolation (and nearest-value extrapolation outside the
//! observed span). A pseudo-observation is active only while its frame is
//! within `radius(t)` of a hard observation of the same joint. Its variance
//! follows from a trust score that decays with time and with local curvature
//! of the current clean estimate, distributed over the active joints of a
//! frame by their influence in the metric.

use std::borrow::Cow;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::KinematicMetric;
use crate::motion::{flat_len, Skeleton, VecIndex};
use crate::operators::{mask_op, ConstraintSystem};
use crate::sampler::SystemProvider;

/// Relative variance given to a pseudo-observation whose trust clips to 1,
/// so that pseudo rows always stay soft.
pub const PSEUDO_VARIANCE_FLOOR: f64 = 1e-9;

pub const KEYFRAME_LABEL: &str = "keyframes";
pub const PSEUDO_LABEL: &str = "pseudo-observations";

/// A joint given by index or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JointRef {
    Index(usize),
    Name(String),
}

impl JointRef {
    pub fn resolve(&self, skeleton: &Skeleton) -> Result<usize> {
        match self {
            JointRef::Index(j) if *j < skeleton.joint_count() => Ok(*j),
            JointRef::Index(j) => Err(Error::OutOfRange(format!(
                "joint {j} outside [0, {})",
                skeleton.joint_count()
            ))),
            JointRef::Name(name) => skeleton
                .joint_index(name)
                .ok_or_else(|| Error::InvalidParam(format!("unknown joint `{name}`"))),
        }
    }
}

/// One entry of a keyframe file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    pub frame: usize,
    pub joint: JointRef,
    #[serde(default = "all_axes")]
    pub axes: String,
    pub value: Vec<f64>,
}

fn all_axes() -> String {
    "xyz".into()
}

fn parse_axes(axes: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for ch in axes.chars() {
        let c = match ch {
            'x' | 'X' => 0,
            'y' | 'Y' => 1,
            'z' | 'Z' => 2,
            other => return Err(Error::Parse(format!("unknown axis `{other}` in `{axes}`"))),
        };
        if out.contains(&c) {
            return Err(Error::Parse(format!("axis `{ch}` repeated in `{axes}`")));
        }
        out.push(c);
    }
    if out.is_empty() {
        return Err(Error::Parse("empty axis subset".into()));
    }
    Ok(out)
}

/// Hard observations of single coordinates, sorted by (frame, joint, axis).
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSpec {
    frames: usize,
    joints: usize,
    observed: Vec<(VecIndex, f64)>,
}

impl KeyframeSpec {
    pub fn from_entries(entries: &[KeyframeEntry], frames: usize, skeleton: &Skeleton) -> Result<Self> {
        let mut obs = Vec::new();
        for e in entries {
            let joint = e.joint.resolve(skeleton)?;
            let axes = parse_axes(&e.axes)?;
            if e.value.len() != axes.len() {
                return Err(Error::dim("keyframe value", axes.len(), e.value.len()));
            }
            for (&c, &v) in axes.iter().zip(&e.value) {
                obs.push((VecIndex::new(c, e.frame, joint), v));
            }
        }
        KeyframeSpec::new(obs, frames, skeleton.joint_count())
    }

    pub fn new(observed: Vec<(VecIndex, f64)>, frames: usize, joints: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (idx, v) in &observed {
            idx.check(frames, joints)?;
            if !v.is_finite() {
                return Err(Error::InvalidParam(format!("keyframe value at {idx:?} is not finite")));
            }
            if !seen.insert((idx.frame, idx.joint, idx.axis)) {
                return Err(Error::InvalidParam(format!("duplicate keyframe observation {idx:?}")));
            }
        }
        let mut observed = observed;
        observed.sort_by_key(|(i, _)| (i.frame, i.joint, i.axis));
        Ok(KeyframeSpec {
            frames,
            joints,
            observed,
        })
    }

    pub fn observed(&self) -> &[(VecIndex, f64)] {
        &self.observed
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn indices(&self) -> Vec<VecIndex> {
        self.observed.iter().map(|(i, _)| *i).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observed.iter().map(|(_, v)| *v).collect()
    }

    /// The hard mask system `y_obs = M_obs x`.
    pub fn hard_system(&self) -> Result<ConstraintSystem> {
        let op = mask_op(&self.indices(), self.frames, self.joints)?;
        ConstraintSystem::hard(KEYFRAME_LABEL, op, self.values())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoFlag {
    Hard,
    Interpolated,
    Extrapolated,
    Absent,
}

/// Static pseudo-observation values and distances for one keyframe spec.
#[derive(Debug, Clone)]
pub struct PseudoObsTable {
    frames: usize,
    joints: usize,
    /// Indexed by flat coordinate.
    values: Vec<f64>,
    flags: Vec<PseudoFlag>,
    /// Frames to the nearest hard observation of the same joint, indexed `n * J + j`.
    distance: Vec<Option<usize>>,
}

impl PseudoObsTable {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn value(&self, idx: VecIndex) -> f64 {
        self.values[idx.flat(self.frames, self.joints)]
    }

    pub fn flag(&self, idx: VecIndex) -> PseudoFlag {
        self.flags[idx.flat(self.frames, self.joints)]
    }

    pub fn distance(&self, frame: usize, joint: usize) -> Option<usize> {
        self.distance[frame * self.joints + joint]
    }

    /// Pseudo coordinates active at radius `radius`, sorted by (frame, joint, axis).
    pub fn active(&self, radius: f64) -> Vec<VecIndex> {
        let mut out = Vec::new();
        for n in 0..self.frames {
            for j in 0..self.joints {
                let Some(dist) = self.distance(n, j) else {
                    continue;
                };
                if (dist as f64) >= radius {
                    continue;
                }
                for c in 0..3 {
                    let idx = VecIndex::new(c, n, j);
                    if matches!(self.flag(idx), PseudoFlag::Interpolated | PseudoFlag::Extrapolated) {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }
}

pub fn build_pseudo_obs(keyframes: &KeyframeSpec) -> PseudoObsTable {
    let (frames, joints) = (keyframes.frames, keyframes.joints);
    let d = flat_len(frames, joints);
    let mut values = vec![0.0; d];
    let mut flags = vec![PseudoFlag::Absent; d];
    let mut per_coord: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 3 * joints];
    let mut hard_frames: Vec<Vec<usize>> = vec![Vec::new(); joints];
    for (idx, v) in &keyframes.observed {
        per_coord[idx.joint * 3 + idx.axis].push((idx.frame, *v));
        hard_frames[idx.joint].push(idx.frame);
    }

    for j in 0..joints {
        for c in 0..3 {
            let obs = &mut per_coord[j * 3 + c];
            if obs.is_empty() {
                continue;
            }
            obs.sort_by_key(|o| o.0);
            let (first, last) = (obs[0], obs[obs.len() - 1]);
            let mut k = 0;
            for n in 0..frames {
                let flat = VecIndex::new(c, n, j).flat(frames, joints);
                while k + 1 < obs.len() && obs[k + 1].0 <= n {
                    k += 1;
                }
                if obs[k].0 == n {
                    values[flat] = obs[k].1;
                    flags[flat] = PseudoFlag::Hard;
                } else if n < first.0 {
                    values[flat] = first.1;
                    flags[flat] = PseudoFlag::Extrapolated;
                } else if n > last.0 {
                    values[flat] = last.1;
                    flags[flat] = PseudoFlag::Extrapolated;
                } else {
                    let (a, b) = (obs[k], obs[k + 1]);
                    let w = (n - a.0) as f64 / (b.0 - a.0) as f64;
                    values[flat] = (1.0 - w) * a.1 + w * b.1;
                    flags[flat] = PseudoFlag::Interpolated;
                }
            }
        }
    }

    let mut distance = vec![None; frames * joints];
    for (j, hf) in hard_frames.iter().enumerate() {
        if hf.is_empty() {
            continue;
        }
        for n in 0..frames {
            distance[n * joints + j] = hf.iter().map(|&h| h.abs_diff(n)).min();
        }
    }
    PseudoObsTable {
        frames,
        joints,
        values,
        flags,
        distance,
    }
}

/// Adaptive-variance and dynamic-masking hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustParams {
    pub tau_min: f64,
    pub c0: f64,
    pub lambda_s: f64,
    pub p: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Clip the frame budget before splitting it across joints (in addition
    /// to clipping the per-joint scores).
    pub clip_frame_budget: bool,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            tau_min: 0.1,
            c0: 3.0,
            lambda_s: 1.0,
            p: 2.0,
            pi_min: 0.02,
            pi_max: 1.0,
            l_min: 3.0,
            l_max: 10.0,
            clip_frame_budget: false,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pi_min > 0.0
            && self.pi_min <= self.pi_max
            && self.pi_max <= 1.0
            && self.l_min <= self.l_max
            && self.tau_min > 0.0
            && self.tau_min <= 1.0
            && self.c0 > 0.0
            && self.lambda_s >= 0.0;
        if !ok {
            return Err(Error::InvalidParam(format!("inconsistent trust parameters {self:?}")));
        }
        Ok(())
    }

    /// Masking radius `(1 - t) l_max + t l_min`, in frames.
    pub fn radius(&self, t: f64) -> f64 {
        (1.0 - t) * self.l_max + t * self.l_min
    }

    /// Global time decay `tau_min + (1 - tau_min)(1 - t)`.
    pub fn tau(&self, t: f64) -> f64 {
        self.tau_min + (1.0 - self.tau_min) * (1.0 - t)
    }

    /// Frame-level trust budget before splitting.
    pub fn frame_budget(&self, t: f64, curvature: f64, median: f64) -> f64 {
        let ratio = if median > 0.0 { curvature / median } else { 0.0 };
        self.tau(t) * self.c0 / (1.0 + self.lambda_s * ratio.powf(self.p))
    }
}

/// Second-difference curvature of every frame under the per-frame metric.
/// Boundary frames copy their interior neighbour; fewer than 3 frames gives zeros.
pub fn curvature(x1_hat: &[f64], metric: &KinematicMetric) -> Result<Vec<f64>> {
    if x1_hat.len() != metric.dim() {
        return Err(Error::dim("curvature input", metric.dim(), x1_hat.len()));
    }
    let (frames, joints) = (metric.frames(), metric.joints());
    let mut s = vec![0.0; frames];
    if frames < 3 {
        return Ok(s);
    }
    let at = |c: usize, n: usize, j: usize| x1_hat[(c * frames + n) * joints + j];
    let mut pose = vec![[0.0; 3]; joints];
    for n in 1..frames - 1 {
        for (j, p) in pose.iter_mut().enumerate() {
            for (c, slot) in p.iter_mut().enumerate() {
                *slot = at(c, n + 1, j) - 2.0 * at(c, n, j) + at(c, n - 1, j);
            }
        }
        s[n] = metric.frame_norm_sq(&pose).max(0.0).sqrt();
    }
    s[0] = s[1];
    s[frames - 1] = s[frames - 2];
    Ok(s)
}

/// Median over the interior frames.
pub fn median_interior(curv: &[f64]) -> f64 {
    if curv.len() < 3 {
        return 0.0;
    }
    let mut v = curv[1..curv.len() - 1].to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Trust assigned to one active (frame, joint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTrust {
    pub frame: usize,
    pub joint: usize,
    /// Frame budget the share was split from.
    pub budget: f64,
    /// `budget * q_j / sum q` before clipping.
    pub share: f64,
    /// Clipped score.
    pub pi: f64,
}

/// Per-(frame, joint) trust for the active pseudo coordinates.
pub fn trust_scores(
    t: f64,
    x1_hat: &[f64],
    active: &[VecIndex],
    metric: &KinematicMetric,
    params: &TrustParams,
) -> Result<Vec<JointTrust>> {
    let curv = curvature(x1_hat, metric)?;
    let median = median_interior(&curv);
    let q = metric.joint_influence_weights();
    let mut per_frame: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); metric.frames()];
    for idx in active {
        per_frame[idx.frame].insert(idx.joint);
    }
    let mut out = Vec::new();
    for (n, joints) in per_frame.iter().enumerate() {
        if joints.is_empty() {
            continue;
        }
        let mut budget = params.frame_budget(t, curv[n], median);
        if params.clip_frame_budget {
            budget = budget.clamp(params.pi_min, params.pi_max);
        }
        let total: f64 = joints.iter().map(|&j| q[j]).sum();
        for &j in joints {
            let share = budget * q[j] / total;
            out.push(JointTrust {
                frame: n,
                joint: j,
                budget,
                share,
                pi: share.clamp(params.pi_min, params.pi_max),
            });
        }
    }
    Ok(out)
}

/// `sigma^2 = r (1 / pi - 1)`.
pub fn variance_from_trust(pi: f64, r: f64) -> Result<f64> {
    if !(pi > 0.0) || pi > 1.0 {
        return Err(Error::InvalidParam(format!("trust score must lie in (0, 1], got {pi}")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParam(format!("metric diagonal must be > 0, got {r}")));
    }
    Ok(r * (1.0 / pi - 1.0))
}

/// Hard keyframe rows plus the pseudo rows active at time `t`.
pub fn system_at(
    t: f64,
    x1_hat: &[f64],
    keyframes: &KeyframeSpec,
    table: &PseudoObsTable,
    metric: &KinematicMetric,
    params: &TrustParams,
) -> Result<ConstraintSystem> {
    let (frames, joints) = (keyframes.frames, keyframes.joints);
    let hard = keyframes.hard_system()?;
    let active = table.active(params.radius(t));
    if active.is_empty() {
        return Ok(hard);
    }
    let trust = trust_scores(t, x1_hat, &active, metric, params)?;
    let mut sigma_of = vec![0.0; frames * joints];
    for jt in &trust {
        let r = metric.inverse_diag(jt.joint);
        sigma_of[jt.frame * joints + jt.joint] = variance_from_trust(jt.pi, r)?.max(PSEUDO_VARIANCE_FLOOR * r);
    }
    let y = active.iter().map(|&i| table.value(i)).collect();
    let sigma = active.iter().map(|i| sigma_of[i.frame * joints + i.joint]).collect();
    let pseudo = ConstraintSystem::labelled(PSEUDO_LABEL, mask_op(&active, frames, joints)?, y, sigma)?;
    ConstraintSystem::stack(vec![hard, pseudo])
}

/// [`SystemProvider`] for inpainting, optionally with extra static hard rows
/// (loop closure, offsets, ...) stacked after the keyframes.
#[derive(Debug, Clone)]
pub struct InpaintScheduler<'a> {
    keyframes: KeyframeSpec,
    table: PseudoObsTable,
    metric: &'a KinematicMetric,
    params: TrustParams,
    extra: Option<ConstraintSystem>,
}

impl<'a> InpaintScheduler<'a> {
    pub fn new(keyframes: KeyframeSpec, metric: &'a KinematicMetric, params: TrustParams) -> Result<Self> {
        params.validate()?;
        if keyframes.frames != metric.frames() || keyframes.joints != metric.joints() {
            return Err(Error::dim(
                "keyframe spec vs metric",
                metric.dim(),
                flat_len(keyframes.frames, keyframes.joints),
            ));
        }
        let table = build_pseudo_obs(&keyframes);
        Ok(InpaintScheduler {
            keyframes,
            table,
            metric,
            params,
            extra: None,
        })
    }

    pub fn with_extra(mut self, extra: ConstraintSystem) -> Self {
        self.extra = Some(extra);
        self
    }

    pub fn table(&self) -> &PseudoObsTable {
        &self.table
    }

    pub fn keyframes(&self) -> &KeyframeSpec {
        &self.keyframes
    }
}

impl SystemProvider for InpaintScheduler<'_> {
    fn system_at(&self, t: f64, x1_hat: &[f64]) -> Result<Cow<'_, ConstraintSystem>> {
        let sys = system_at(t, x1_hat, &self.keyframes, &self.table, self.metric, &self.params)?;
        Ok(Cow::Owned(match &self.extra {
            Some(extra) => ConstraintSystem::stack(vec![sys, extra.clone()])?,
            None => sys,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_axis(frames: usize, obs: &[(usize, f64)]) -> KeyframeSpec {
        let o = obs.iter().map(|&(n, v)| (VecIndex::new(0, n, 0), v)).collect();
        KeyframeSpec::new(o, frames, 2).unwrap()
    }

    #[test]
    fn interpolates_between_keyframes() {
        let table = build_pseudo_obs(&one_axis(12, &[(0, 0.0), (10, 10.0)]));
        assert_close!(table.value(VecIndex::new(0, 4, 0)), 4.0, 1e-15);
        assert_eq!(table.flag(VecIndex::new(0, 4, 0)), PseudoFlag::Interpolated);
        assert_eq!(table.flag(VecIndex::new(0, 10, 0)), PseudoFlag::Hard);
        assert_eq!(table.flag(VecIndex::new(0, 11, 0)), PseudoFlag::Extrapolated);
        assert_eq!(table.value(VecIndex::new(0, 11, 0)), 10.0);
    }

    #[test]
    fn extrapolates_single_keyframe() {
        let table = build_pseudo_obs(&one_axis(9, &[(5, 2.5)]));
        for n in (0..5).chain(6..9) {
            assert_eq!(table.value(VecIndex::new(0, n, 0)), 2.5);
            assert_eq!(table.flag(VecIndex::new(0, n, 0)), PseudoFlag::Extrapolated);
        }
    }

    #[test]
    fn unobserved_joint_is_absent() {
        let table = build_pseudo_obs(&one_axis(6, &[(2, 1.0)]));
        for n in 0..6 {
            for c in 0..3 {
                assert_eq!(table.flag(VecIndex::new(c, n, 1)), PseudoFlag::Absent);
            }
            assert_eq!(table.distance(n, 1), None);
        }
        // unobserved axes of an observed joint carry no pseudo value either
        assert_eq!(table.flag(VecIndex::new(1, 0, 0)), PseudoFlag::Absent);
        assert_eq!(table.distance(0, 0), Some(2));
    }

    #[test]
    fn radius_endpoints() {
        let p = TrustParams::default();
        assert_eq!(p.radius(0.0), 10.0);
        assert_eq!(p.radius(1.0), 3.0);
        assert_close!(p.radius(0.5), 6.5, 1e-15);
    }

    #[test]
    fn tau_and_budget() {
        let p = TrustParams::default();
        assert_close!(p.tau(1.0), 0.1, 1e-15);
        assert_close!(p.tau(0.0), 1.0, 1e-15);
        let t = 0.3;
        assert_close!(p.frame_budget(t, 0.7, 0.7), 1.5 * p.tau(t), 1e-14);
        // zero median means fully trusted curvature term
        assert_close!(p.frame_budget(t, 5.0, 0.0), 3.0 * p.tau(t), 1e-14);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_from_trust(1.0, 0.37).unwrap(), 0.0);
        assert_close!(variance_from_trust(0.5, 1.0).unwrap(), 1.0, 1e-15);
        assert!(variance_from_trust(0.0, 1.0).is_err());
        assert!(variance_from_trust(-0.1, 1.0).is_err());
        assert!(variance_from_trust(1.5, 1.0).is_err());
    }

    #[test]
    fn variance_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let pi: f64 = rng.random_range(0.01..1.0);
            let r: f64 = rng.random_range(0.01..2.0);
            let s = variance_from_trust(pi, r).unwrap();
            assert_close!(r / (r + s), pi, 1e-12);
        }
    }

    fn body_metric(frames: usize) -> KinematicMetric {
        KinematicMetric::new(&Skeleton::humanml3d(), frames, 10.0, 1.0).unwrap()
    }

    #[test]
    fn curvature_of_linear_motion_vanishes() {
        let m = body_metric(8);
        let x: Vec<f64> = (0..m.dim())
            .map(|i| {
                let idx = VecIndex::from_flat(i, 8, 22);
                0.1 * idx.joint as f64 + 0.3 * idx.frame as f64 * (idx.axis as f64 + 1.0)
            })
            .collect();
        let s = curvature(&x, &m).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-12));
        assert!(median_interior(&s) < 1e-12);
    }

    #[test]
    fn curvature_spike_matches_dense_norm() {
        let frames = 6;
        let m = body_metric(frames);
        let mut x = vec![0.0; m.dim()];
        let delta = 0.25;
        x[VecIndex::new(1, 3, 20).flat(frames, 22)] = delta;
        let s = curvature(&x, &m).unwrap();
        // frame 3: second difference is -2 delta on joint 20, axis y
        let mut v = vec![0.0; m.dim()];
        v[VecIndex::new(1, 3, 20).flat(frames, 22)] = -2.0 * delta;
        let dense = m.dense();
        let dv = nalgebra::DVector::from_vec(v);
        let want = dv.dot(&(&dense * &dv)).sqrt();
        assert_close!(s[3], want, 1e-12);
        // frames 2 and 4 see +delta
        let mut v = vec![0.0; m.dim()];
        v[VecIndex::new(1, 2, 20).flat(frames, 22)] = delta;
        let dv = nalgebra::DVector::from_vec(v);
        assert_close!(s[2], dv.dot(&(&dense * &dv)).sqrt(), 1e-12);
        assert_eq!(s[0], s[1]);
        assert_eq!(s[5], s[4]);
    }

    #[test]
    fn short_sequences_have_zero_curvature() {
        let m = body_metric(2);
        assert_eq!(curvature(&vec![1.0; m.dim()], &m).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_active_joint_gets_whole_budget() {
        let frames = 10;
        let m = body_metric(frames);
        let spec = KeyframeSpec::new(
            vec![(VecIndex::new(0, 0, 5), 1.0), (VecIndex::new(0, 9, 5), 2.0)],
            frames,
            22,
        )
        .unwrap();
        let table = build_pseudo_obs(&spec);
        let p = TrustParams::default();
        let active = table.active(p.radius(0.6));
        let x = vec![0.0; m.dim()];
        let trust = trust_scores(0.6, &x, &active, &m, &p).unwrap();
        assert!(!trust.is_empty());
        for jt in trust {
            assert_eq!(jt.share, jt.budget);
            assert_eq!(jt.pi, jt.budget.clamp(0.02, 1.0));
        }
    }

    #[test]
    fn frame_adjacent_to_keyframe_is_active_at_start() {
        let frames = 30;
        let m = body_metric(frames);
        let spec = KeyframeSpec::new(vec![(VecIndex::new(0, 15, 0), 0.3)], frames, 22).unwrap();
        let table = build_pseudo_obs(&spec);
        let p = TrustParams::default();
        let sys = system_at(0.0, &vec![0.0; m.dim()], &spec, &table, &m, &p).unwrap();
        // frames 6..=24 except 15 are within distance < 10
        assert_eq!(sys.rows(), 1 + 18);
        let active = table.active(p.radius(0.0));
        assert!(active.contains(&VecIndex::new(0, 16, 0)));
        assert!(!active.contains(&VecIndex::new(0, 25, 0)));
    }

    #[test]
    fn only_hard_rows_when_radius_is_zero() {
        let frames = 12;
        let m = body_metric(frames);
        let spec = KeyframeSpec::new(
            vec![(VecIndex::new(2, 3, 7), 0.3), (VecIndex::new(2, 8, 7), 0.1)],
            frames,
            22,
        )
        .unwrap();
        let table = build_pseudo_obs(&spec);
        let p = TrustParams {
            l_min: 0.0,
            ..Default::default()
        };
        let sys = system_at(1.0, &vec![0.0; m.dim()], &spec, &table, &m, &p).unwrap();
        assert_eq!(sys.rows(), 2);
        assert!(sys.hard_rows().count() == 2);
    }

    #[test]
    fn pseudo_rows_are_soft_and_hard_rows_exact() {
        let frames = 20;
        let m = body_metric(frames);
        let obs = vec![
            (VecIndex::new(0, 2, 0), 0.0),
            (VecIndex::new(1, 2, 0), 0.9),
            (VecIndex::new(0, 12, 0), 1.0),
            (VecIndex::new(1, 12, 0), 0.9),
            (VecIndex::new(0, 7, 20), 0.4),
        ];
        let spec = KeyframeSpec::new(obs, frames, 22).unwrap();
        let table = build_pseudo_obs(&spec);
        let p = TrustParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for &t in &[0.0, 0.25, 0.5, 0.99] {
            let sys = system_at(t, &x, &spec, &table, &m, &p).unwrap();
            for r in 0..sys.rows() {
                if sys.block_of(r) == KEYFRAME_LABEL {
                    assert_eq!(sys.sigma_sq()[r], 0.0);
                } else {
                    assert!(sys.sigma_sq()[r] > 0.0);
                }
            }
        }
    }

    #[test]
    fn keyframe_entries_parse() {
        let skel = Skeleton::humanml3d();
        let entries: Vec<KeyframeEntry> = serde_json::from_str(
            r#"[{"frame": 3, "joint": 0, "axes": "xz", "value": [1.0, 2.0]},
                {"frame": 5, "joint": "left_wrist", "value": [0.1, 0.2, 0.3]}]"#,
        )
        .unwrap();
        let spec = KeyframeSpec::from_entries(&entries, 10, &skel).unwrap();
        assert_eq!(spec.observed().len(), 5);
        assert_eq!(spec.observed()[0], (VecIndex::new(0, 3, 0), 1.0));
        assert_eq!(spec.observed()[1], (VecIndex::new(2, 3, 0), 2.0));

        let bad: Vec<KeyframeEntry> =
            serde_json::from_str(r#"[{"frame": 3, "joint": 0, "axes": "xz", "value": [1.0]}]"#).unwrap();
        assert!(KeyframeSpec::from_entries(&bad, 10, &skel).is_err());
        let dup = vec![(VecIndex::new(0, 1, 1), 1.0), (VecIndex::new(0, 1, 1), 2.0)];
        assert!(KeyframeSpec::new(dup, 4, 2).is_err());
        assert!(KeyframeSpec::new(vec![(VecIndex::new(0, 9, 1), 1.0)], 4, 2).is_err());
    }
}
