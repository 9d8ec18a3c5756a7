//! Task builders (trajectory control, keyframe inpainting, 2D-to-3D lifting,
//! loop closure, relative offsets), evaluation metrics and the JSON task
//! configuration consumed by the command-line driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{load_prior, GaussianPrior, VelocityOracle};
use crate::inpaint::{InpaintScheduler, JointRef, KeyframeEntry, KeyframeSpec, TrustParams};
use crate::io::{from_json, load_motion, load_skeleton, read_text};
use crate::metric::KinematicMetric;
use crate::motion::{MotionSeq, Skeleton, VecIndex};
use crate::operators::{loop_closure_op, orthographic_op, relative_offset_op, Camera, ConstraintSystem};
use crate::sampler::{sample, SampleResult, SamplerConfig, StepTrace, SystemProvider};

/// Sequence length the density settings refer to.
pub const DENSITY_REFERENCE_FRAMES: usize = 196;
pub const DENSITY_SETTINGS: [usize; 5] = [1, 2, 5, 49, 196];

/// Number of controlled frames for a density setting on an `frames`-long
/// sequence. Settings up to 5 are absolute keyframe counts; denser settings
/// are fractions of a 196-frame sequence and scale with `frames`.
pub fn scale_density(density: usize, frames: usize) -> usize {
    if density <= 5 {
        density
    } else {
        ((density * frames) as f64 / DENSITY_REFERENCE_FRAMES as f64)
            .round()
            .max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// One keyframe sits mid-sequence; two or more are spread evenly with
    /// both endpoints included.
    Even,
    /// Distinct frames drawn uniformly from the seed.
    Random(u64),
}

/// Sorted distinct frames for `count` keyframes.
pub fn keyframe_frames(count: usize, frames: usize, placement: Placement) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidParam("keyframe count must be >= 1".into()));
    }
    if count > frames {
        return Err(Error::InvalidParam(format!(
            "{count} keyframes requested on a {frames}-frame sequence"
        )));
    }
    let mut out = match placement {
        Placement::Even if count == 1 => vec![frames / 2],
        Placement::Even => (0..count)
            .map(|i| ((i * (frames - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
        Placement::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, frames, count).into_vec()
        }
    };
    out.sort_unstable();
    out.dedup();
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

/// 2D targets of a lifting constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftTargets {
    pub camera: Camera,
    /// (frame, joint) pairs in (frame, joint) order.
    pub pairs: Vec<(usize, usize)>,
    pub y2d: Vec<[f64; 2]>,
}

/// A constraint task: point observations of single coordinates (trajectory
/// and keyframes) plus further hard systems. Point observations are the
/// anchors of the inpainting scheduler.
#[derive(Debug, Clone)]
pub struct Task {
    skeleton: Arc<Skeleton>,
    frames: usize,
    points: Option<KeyframeSpec>,
    extra: Vec<ConstraintSystem>,
    lifts: Vec<LiftTargets>,
}

impl Task {
    pub fn new(skeleton: Arc<Skeleton>, frames: usize) -> Self {
        Task {
            skeleton,
            frames,
            points: None,
            extra: Vec::new(),
            lifts: Vec::new(),
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

    pub fn dim(&self) -> usize {
        self.frames * self.joints() * 3
    }

    pub fn points(&self) -> Option<&KeyframeSpec> {
        self.points.as_ref()
    }

    pub fn lifts(&self) -> &[LiftTargets] {
        &self.lifts
    }

    fn check_shape(&self, other: &Task) -> Result<()> {
        if other.frames != self.frames || other.joints() != self.joints() {
            return Err(Error::dim("merged task size", self.dim(), other.dim()));
        }
        Ok(())
    }

    /// Adds point observations; overlapping coordinates are rejected.
    pub fn with_points(mut self, obs: Vec<(VecIndex, f64)>) -> Result<Self> {
        let mut all = self.points.take().map(|p| p.observed().to_vec()).unwrap_or_default();
        all.extend(obs);
        self.points = Some(KeyframeSpec::new(all, self.frames, self.joints())?);
        Ok(self)
    }

    pub fn with_system(mut self, system: ConstraintSystem) -> Result<Self> {
        if system.dim() != self.dim() {
            return Err(Error::dim("task system", self.dim(), system.dim()));
        }
        self.extra.push(system);
        Ok(self)
    }

    pub fn merge(mut self, other: Task) -> Result<Self> {
        self.check_shape(&other)?;
        if let Some(p) = other.points {
            self = self.with_points(p.observed().to_vec())?;
        }
        self.extra.extend(other.extra);
        self.lifts.extend(other.lifts);
        Ok(self)
    }

    fn extra_system(&self) -> Option<Result<ConstraintSystem>> {
        (!self.extra.is_empty()).then(|| ConstraintSystem::stack(self.extra.clone()))
    }

    /// All hard rows: point observations first, then the other systems in
    /// insertion order.
    pub fn static_system(&self) -> Result<ConstraintSystem> {
        let mut parts = Vec::new();
        if let Some(p) = self.points.as_ref().filter(|p| !p.observed().is_empty()) {
            parts.push(p.hard_system()?);
        }
        parts.extend(self.extra.iter().cloned());
        if parts.is_empty() {
            return Ok(ConstraintSystem::empty(self.dim()));
        }
        ConstraintSystem::stack(parts)
    }

    /// The provider used for sampling. With `pseudo` set and point
    /// observations present, the inpainting scheduler adds faded soft guides.
    pub fn provider<'a>(
        &self,
        metric: &'a KinematicMetric,
        pseudo: Option<&TrustParams>,
    ) -> Result<Box<dyn SystemProvider + 'a>> {
        match (pseudo, self.points.as_ref().filter(|p| !p.observed().is_empty())) {
            (Some(params), Some(points)) => {
                let mut sched = InpaintScheduler::new(points.clone(), metric, *params)?;
                if let Some(extra) = self.extra_system() {
                    sched = sched.with_extra(extra?);
                }
                Ok(Box::new(sched))
            }
            _ => Ok(Box::new(self.static_system()?)),
        }
    }
}

fn axis_list(axes: &[usize]) -> Result<()> {
    if axes.is_empty() || axes.iter().any(|&c| c > 2) {
        return Err(Error::InvalidParam(format!(
            "axes must be a non-empty subset of 0..3, got {axes:?}"
        )));
    }
    Ok(())
}

/// Hard trajectory control: `joint`'s `axes` follow `reference` at `count`
/// placed frames.
pub fn build_trajectory_task(
    reference: &MotionSeq,
    joint: usize,
    axes: &[usize],
    count: usize,
    placement: Placement,
) -> Result<Task> {
    axis_list(axes)?;
    if joint >= reference.joints() {
        return Err(Error::OutOfRange(format!(
            "joint {joint} outside [0, {})",
            reference.joints()
        )));
    }
    let frames = keyframe_frames(count, reference.frames(), placement)?;
    let obs = frames
        .iter()
        .flat_map(|&n| {
            let p = reference.position(n, joint);
            axes.iter().map(move |&c| (VecIndex::new(c, n, joint), p[c]))
        })
        .collect();
    Task::new(reference.skeleton().clone(), reference.frames()).with_points(obs)
}

/// Full-pose keyframes of `reference` at `key_frames`.
pub fn build_inpainting_task(reference: &MotionSeq, key_frames: &[usize]) -> Result<Task> {
    let mut obs = Vec::new();
    for &n in key_frames {
        if n >= reference.frames() {
            return Err(Error::OutOfRange(format!(
                "keyframe {n} outside [0, {})",
                reference.frames()
            )));
        }
        for j in 0..reference.joints() {
            let p = reference.position(n, j);
            obs.extend((0..3).map(|c| (VecIndex::new(c, n, j), p[c])));
        }
    }
    Task::new(reference.skeleton().clone(), reference.frames()).with_points(obs)
}

pub fn build_keyframe_task(skeleton: Arc<Skeleton>, frames: usize, entries: &[KeyframeEntry]) -> Result<Task> {
    let spec = KeyframeSpec::from_entries(entries, frames, &skeleton)?;
    Task::new(skeleton, frames).with_points(spec.observed().to_vec())
}

/// Pairs observed by a lifting task: every joint at `keypose_frame`, and
/// `track_joint` at every frame. Sorted by (frame, joint).
pub fn lifting_pairs(
    keypose_frame: usize,
    track_joint: usize,
    frames: usize,
    joints: usize,
) -> Result<Vec<(usize, usize)>> {
    if keypose_frame >= frames || track_joint >= joints {
        return Err(Error::OutOfRange(format!(
            "keypose frame {keypose_frame} / tracked joint {track_joint} outside {frames} x {joints}"
        )));
    }
    let mut pairs = Vec::with_capacity(joints + frames - 1);
    for n in 0..frames {
        if n == keypose_frame {
            pairs.extend((0..joints).map(|j| (n, j)));
        } else {
            pairs.push((n, track_joint));
        }
    }
    Ok(pairs)
}

/// Projects `motion` through `camera` at `pairs`.
pub fn project_pairs(motion: &MotionSeq, camera: &Camera, pairs: &[(usize, usize)]) -> Vec<[f64; 2]> {
    pairs
        .iter()
        .map(|&(n, j)| camera.project(motion.position(n, j)))
        .collect()
}

/// Hard orthographic constraints for 2D-to-3D lifting; `y2d` is ordered like
/// [`lifting_pairs`].
pub fn build_lifting_task(
    skeleton: Arc<Skeleton>,
    frames: usize,
    camera: &Camera,
    keypose_frame: usize,
    track_joint: usize,
    y2d: &[[f64; 2]],
) -> Result<Task> {
    let joints = skeleton.joint_count();
    let pairs = lifting_pairs(keypose_frame, track_joint, frames, joints)?;
    if y2d.len() != pairs.len() {
        return Err(Error::dim("2D targets", pairs.len(), y2d.len()));
    }
    let op = orthographic_op(camera, &pairs, frames, joints)?;
    let y = y2d.iter().flatten().copied().collect();
    let mut task = Task::new(skeleton, frames).with_system(ConstraintSystem::hard("lifting", op, y)?)?;
    task.lifts.push(LiftTargets {
        camera: *camera,
        pairs,
        y2d: y2d.to_vec(),
    });
    Ok(task)
}

/// First and last frame coincide.
pub fn build_loop_task(skeleton: Arc<Skeleton>, frames: usize) -> Result<Task> {
    let op = loop_closure_op(frames, skeleton.joint_count())?;
    let m = op.out_dim();
    Task::new(skeleton, frames).with_system(ConstraintSystem::hard("loop", op, vec![0.0; m])?)
}

/// `x[n, joint_a] - x[n, joint_b] = offset` at `frame_list` (all frames when `None`).
pub fn build_relative_task(
    skeleton: Arc<Skeleton>,
    frames: usize,
    joint_a: usize,
    joint_b: usize,
    offset: [f64; 3],
    frame_list: Option<&[usize]>,
) -> Result<Task> {
    let all: Vec<usize> = (0..frames).collect();
    let list = frame_list.unwrap_or(&all);
    let op = relative_offset_op(joint_a, joint_b, list, frames, skeleton.joint_count())?;
    let k = op.out_dim() / 3;
    let y = (0..k).flat_map(|_| offset).collect();
    Task::new(skeleton, frames).with_system(ConstraintSystem::hard("relative", op, y)?)
}

/// Draws a camera from the lifting protocol ranges: yaw in [-45, 45] deg,
/// pitch in [0, 30] deg, no roll, scale in [0.8, 1.2].
pub fn random_camera(rng: &mut impl rand::Rng) -> Camera {
    let yaw = rng.random_range(-45.0..=45.0);
    let pitch = rng.random_range(0.0..=30.0);
    let scale = rng.random_range(0.8..=1.2);
    Camera::from_yaw_pitch_roll(yaw, pitch, 0.0, scale).expect("protocol camera is valid")
}

/// Evaluation thresholds (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalThresholds {
    pub traj: f64,
    pub loc: f64,
    pub foot_height: f64,
    pub foot_slide: f64,
    /// Defaults to the body's feet when the skeleton names them.
    pub foot_joints: Option<Vec<JointRef>>,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds {
            traj: 0.05,
            loc: 0.01,
            foot_height: 0.05,
            foot_slide: 0.0025,
            foot_joints: None,
        }
    }
}

impl EvalThresholds {
    fn feet(&self, skeleton: &Skeleton) -> Result<Vec<usize>> {
        match &self.foot_joints {
            Some(list) => list.iter().map(|j| j.resolve(skeleton)).collect(),
            None => Ok(["left_foot", "right_foot"]
                .iter()
                .filter_map(|n| skeleton.joint_index(n))
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of controlled keyframes deviating more than `traj`.
    pub traj_err: f64,
    /// Fraction of controlled keyframes deviating more than `loc`.
    pub loc_err: f64,
    /// Mean deviation over controlled keyframes.
    pub avg_err: f64,
    /// Mean 2D reprojection error over lifted pairs.
    pub mpjpe_2d: f64,
    pub foot_skate_ratio: f64,
    /// Prior negative log-likelihood above its value at the prior mean.
    pub prior_nll: Option<f64>,
    /// `max |A x - y| / (1 + |y|)` over hard rows, recomputed from the output.
    pub hard_residual: f64,
    /// `max |A x - y|` over hard rows.
    pub hard_residual_abs: f64,
    pub controlled_keyframes: usize,
    /// Hard residual of the projected endpoint at every sampling step.
    pub residual_series: Vec<f64>,
}

/// Deviations of the output from every controlled (frame, joint), measured
/// over the observed axes.
pub fn keyframe_deviations(output: &MotionSeq, points: &KeyframeSpec) -> Vec<f64> {
    let mut grouped: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (idx, v) in points.observed() {
        let d = output.position(idx.frame, idx.joint)[idx.axis] - v;
        *grouped.entry((idx.frame, idx.joint)).or_default() += d * d;
    }
    grouped.into_values().map(f64::sqrt).collect()
}

/// Fraction of frames in which some foot below `foot_height` slides more
/// than `foot_slide` horizontally (y is up).
pub fn foot_skate_ratio(motion: &MotionSeq, feet: &[usize], foot_height: f64, foot_slide: f64) -> f64 {
    let n = motion.frames();
    if n < 2 || feet.is_empty() {
        return 0.0;
    }
    let skating = (1..n)
        .filter(|&f| {
            feet.iter().any(|&j| {
                let (a, b) = (motion.position(f - 1, j), motion.position(f, j));
                let slide = ((b[0] - a[0]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
                b[1] < foot_height && a[1] < foot_height && slide > foot_slide
            })
        })
        .count();
    skating as f64 / (n - 1) as f64
}

pub fn evaluate(
    output: &MotionSeq,
    task: &Task,
    prior: Option<&GaussianPrior>,
    traces: &[StepTrace],
    thresholds: &EvalThresholds,
) -> Result<EvalReport> {
    if output.frames() != task.frames() || output.joints() != task.joints() {
        return Err(Error::dim("evaluated motion", task.dim(), output.flat_len()));
    }
    let devs = task
        .points()
        .map(|p| keyframe_deviations(output, p))
        .unwrap_or_default();
    let frac = |thr: f64| {
        if devs.is_empty() {
            0.0
        } else {
            devs.iter().filter(|&&d| d > thr).count() as f64 / devs.len() as f64
        }
    };
    let avg_err = if devs.is_empty() {
        0.0
    } else {
        devs.iter().sum::<f64>() / devs.len() as f64
    };

    let (mut err2d, mut count2d) = (0.0, 0usize);
    for lift in task.lifts() {
        for (proj, target) in project_pairs(output, &lift.camera, &lift.pairs).iter().zip(&lift.y2d) {
            err2d += ((proj[0] - target[0]).powi(2) + (proj[1] - target[1]).powi(2)).sqrt();
            count2d += 1;
        }
    }

    let x = output.vectorize();
    let system = task.static_system()?;
    let residual = system.residual(&x)?;
    let hard_residual_abs = system.hard_rows().map(|r| residual[r].abs()).fold(0.0, f64::max);
    let prior_nll = match prior {
        Some(p) => Some((p.nll(&x)? - p.nll(p.mean())?).max(0.0)),
        None => None,
    };
    let feet = thresholds.feet(task.skeleton())?;

    Ok(EvalReport {
        traj_err: frac(thresholds.traj),
        loc_err: frac(thresholds.loc),
        avg_err,
        mpjpe_2d: if count2d == 0 { 0.0 } else { err2d / count2d as f64 },
        foot_skate_ratio: foot_skate_ratio(output, &feet, thresholds.foot_height, thresholds.foot_slide),
        prior_nll,
        hard_residual: system.hard_residual(&x)?,
        hard_residual_abs,
        controlled_keyframes: devs.len(),
        residual_series: traces.iter().map(|t| t.hard_residual).collect(),
    })
}

/// Samples one motion for `task`. `pseudo` enables inpainting guides.
pub fn sample_motion(
    oracle: &dyn VelocityOracle,
    task: &Task,
    metric: &KinematicMetric,
    config: &SamplerConfig,
    pseudo: Option<&TrustParams>,
) -> Result<(MotionSeq, SampleResult)> {
    let provider = task.provider(metric, pseudo)?;
    let result = sample(oracle, provider.as_ref(), metric, config)?;
    let motion = MotionSeq::devectorize(&result.x, task.frames(), task.skeleton().clone())?;
    Ok((motion, result))
}

/// CSV with columns `step,t,hard_residual,correction_rnorm`.
pub fn traces_to_csv(traces: &[StepTrace]) -> String {
    let mut out = String::from("step,t,hard_residual,correction_rnorm\n");
    for t in traces {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            t.step, t.t, t.hard_residual, t.correction_rnorm
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub w_kin: f64,
    pub lambda: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            w_kin: 10.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Add faded pseudo-observations around point constraints.
    pub pseudo_observations: bool,
    pub trust: TrustParams,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            pseudo_observations: true,
            trust: TrustParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

fn xyz() -> String {
    "xyz".into()
}

impl CameraConfig {
    pub fn camera(&self) -> Result<Camera> {
        Camera::from_yaw_pitch_roll(self.yaw, self.pitch, self.roll, self.scale)
    }
}

/// One entry of the `constraints` list, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstraintConfig {
    /// Follow a joint of a reference motion at a density setting.
    Trajectory {
        joint: JointRef,
        density: usize,
        reference: String,
        #[serde(default = "xyz")]
        axes: String,
        #[serde(default)]
        random_placement: bool,
    },
    /// Keyframe entries given inline or as a file.
    Keyframes {
        #[serde(default)]
        file: Option<String>,
        #[serde(default)]
        entries: Option<Vec<KeyframeEntry>>,
    },
    /// Orthographic 2D observations: targets inline, or projected from a reference motion.
    Lift {
        camera: CameraConfig,
        #[serde(default)]
        keypose_frame: usize,
        #[serde(default = "root_joint")]
        track_joint: JointRef,
        #[serde(default)]
        targets: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        reference: Option<String>,
    },
    Loop,
    Relative {
        joint_a: JointRef,
        joint_b: JointRef,
        offset: [f64; 3],
        #[serde(default)]
        frames: Option<Vec<usize>>,
    },
}

fn root_joint() -> JointRef {
    JointRef::Index(0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub motion: Option<String>,
    pub report: Option<String>,
    pub csv: Option<String>,
    pub trace_csv: Option<String>,
}

fn default_fps() -> f64 {
    20.0
}

/// JSON task description. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Skeleton JSON path; the built-in 22-joint body when absent.
    #[serde(default)]
    pub skeleton: Option<String>,
    pub prior: String,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub inpaint: InpaintConfig,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    #[serde(default)]
    pub eval: EvalThresholds,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// Everything needed to run a configured task.
#[derive(Debug)]
pub struct TaskRun {
    pub config: TaskConfig,
    pub base_dir: PathBuf,
    pub prior: GaussianPrior,
    pub metric: KinematicMetric,
    pub task: Task,
}

#[derive(Debug)]
pub struct RunOutput {
    pub motion: MotionSeq,
    pub report: EvalReport,
    pub traces: Vec<StepTrace>,
}

impl TaskConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let cfg: TaskConfig = from_json(&read_text(path)?, "task config")?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidParam("frames must be >= 1".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidParam(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.sampler.steps == 0 {
            return Err(Error::InvalidParam("sampler.steps must be >= 1".into()));
        }
        self.inpaint.trust.validate()
    }

    /// Loads the referenced files and builds the task.
    pub fn prepare(self, base_dir: &Path) -> Result<TaskRun> {
        self.validate()?;
        let resolve = |p: &str| base_dir.join(p);
        let skeleton = Arc::new(match &self.skeleton {
            Some(p) => load_skeleton(resolve(p))?,
            None => Skeleton::humanml3d(),
        });
        let prior = load_prior(resolve(&self.prior))?;
        let metric = KinematicMetric::new(&skeleton, self.frames, self.metric.w_kin, self.metric.lambda)?;
        if prior.dim() != metric.dim() {
            return Err(Error::dim(
                "prior dimension vs frames x joints x 3",
                metric.dim(),
                prior.dim(),
            ));
        }
        let load_reference = |p: &str| -> Result<MotionSeq> {
            let m = load_motion(resolve(p))?.motion;
            if m.frames() != self.frames || m.joints() != skeleton.joint_count() {
                return Err(Error::dim("reference motion", metric.dim(), m.flat_len()));
            }
            Ok(m)
        };

        let mut task = Task::new(skeleton.clone(), self.frames);
        for (k, c) in self.constraints.iter().enumerate() {
            let part = match c {
                ConstraintConfig::Trajectory {
                    joint,
                    density,
                    reference,
                    axes,
                    random_placement,
                } => {
                    let reference = load_reference(reference)?;
                    let axes = parse_axes(axes)?;
                    let placement = if *random_placement {
                        Placement::Random(self.sampler.seed.wrapping_add(k as u64))
                    } else {
                        Placement::Even
                    };
                    let count = scale_density(*density, self.frames);
                    build_trajectory_task(&reference, joint.resolve(&skeleton)?, &axes, count, placement)?
                }
                ConstraintConfig::Keyframes { file, entries } => {
                    let list: Vec<KeyframeEntry> = match (file, entries) {
                        (Some(f), None) => from_json(&read_text(&resolve(f))?, "keyframe file")?,
                        (None, Some(e)) => e.clone(),
                        _ => {
                            return Err(Error::InvalidParam(
                                "keyframes constraint needs exactly one of `file` or `entries`".into(),
                            ))
                        }
                    };
                    build_keyframe_task(skeleton.clone(), self.frames, &list)?
                }
                ConstraintConfig::Lift {
                    camera,
                    keypose_frame,
                    track_joint,
                    targets,
                    reference,
                } => {
                    let cam = camera.camera()?;
                    let track = track_joint.resolve(&skeleton)?;
                    let y2d = match (targets, reference) {
                        (Some(t), None) => t.clone(),
                        (None, Some(r)) => {
                            let pairs = lifting_pairs(*keypose_frame, track, self.frames, skeleton.joint_count())?;
                            project_pairs(&load_reference(r)?, &cam, &pairs)
                        }
                        _ => {
                            return Err(Error::InvalidParam(
                                "lift constraint needs exactly one of `targets` or `reference`".into(),
                            ))
                        }
                    };
                    build_lifting_task(skeleton.clone(), self.frames, &cam, *keypose_frame, track, &y2d)?
                }
                ConstraintConfig::Loop => build_loop_task(skeleton.clone(), self.frames)?,
                ConstraintConfig::Relative {
                    joint_a,
                    joint_b,
                    offset,
                    frames,
                } => build_relative_task(
                    skeleton.clone(),
                    self.frames,
                    joint_a.resolve(&skeleton)?,
                    joint_b.resolve(&skeleton)?,
                    *offset,
                    frames.as_deref(),
                )?,
            };
            task = task.merge(part)?;
        }
        Ok(TaskRun {
            config: self,
            base_dir: base_dir.to_path_buf(),
            prior,
            metric,
            task,
        })
    }
}

fn parse_axes(axes: &str) -> Result<Vec<usize>> {
    axes.chars()
        .map(|ch| match ch {
            'x' | 'X' => Ok(0),
            'y' | 'Y' => Ok(1),
            'z' | 'Z' => Ok(2),
            other => Err(Error::Parse(format!("unknown axis `{other}`"))),
        })
        .collect()
}

impl TaskRun {
    /// Samples and evaluates. `pseudo` selects the inpainting scheduler.
    pub fn run(&self, pseudo: bool) -> Result<RunOutput> {
        let trust = (pseudo && self.config.inpaint.pseudo_observations).then_some(&self.config.inpaint.trust);
        let (motion, result) = sample_motion(&self.prior, &self.task, &self.metric, &self.config.sampler, trust)?;
        let report = evaluate(
            &motion,
            &self.task,
            Some(&self.prior),
            &result.traces,
            &self.config.eval,
        )?;
        Ok(RunOutput {
            motion,
            report,
            traces: result.traces,
        })
    }

    pub fn output_path(&self, p: &Option<String>) -> Option<PathBuf> {
        p.as_ref().map(|p| self.base_dir.join(p))
    }
}
