use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use projflow::flow::{fit_gaussian_prior, GaussianPrior};
use projflow::inpaint::TrustParams;
use projflow::motion::VecIndex;
use projflow::operators::{mask_op, ConstraintSystem};
use projflow::sampler::{sample, SamplerConfig};
use projflow::synth::synth_corpus;
use projflow::tasks::{
    build_inpainting_task, build_loop_task, build_relative_task, build_trajectory_task, evaluate, keyframe_frames,
    sample_motion, EvalThresholds, Placement,
};
use projflow::{KinematicMetric, MotionSeq, Skeleton};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const FRAMES: usize = 16;

struct Fixture {
    skel: Arc<Skeleton>,
    prior: GaussianPrior,
    metric: KinematicMetric,
    reference: MotionSeq,
}

fn fixture() -> Fixture {
    let skel = Arc::new(Skeleton::humanml3d());
    let corpus = synth_corpus(&skel, FRAMES, 60, 1).unwrap();
    let flat: Vec<Vec<f64>> = corpus.iter().map(|m| m.vectorize()).collect();
    let prior = fit_gaussian_prior(&flat, 6).unwrap();
    let metric = KinematicMetric::new(&skel, FRAMES, 10.0, 1.0).unwrap();
    let reference = synth_corpus(&skel, FRAMES, 1, 99).unwrap().remove(0);
    Fixture {
        skel,
        prior,
        metric,
        reference,
    }
}

fn config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        steps: 40,
        seed,
        ..Default::default()
    }
}

#[test]
fn loop_closure_after_sampling() {
    let f = fixture();
    let task = build_loop_task(f.skel.clone(), FRAMES).unwrap();
    let (m, _) = sample_motion(&f.prior, &task, &f.metric, &config(3), None).unwrap();
    for j in 0..22 {
        let (a, b) = (m.position(0, j), m.position(FRAMES - 1, j));
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 1e-8);
        }
    }
}

#[test]
fn relative_offset_after_sampling() {
    let f = fixture();
    let off = [0.35, -0.05, 0.1];
    let task = build_relative_task(f.skel.clone(), FRAMES, 20, 21, off, None).unwrap();
    let (m, _) = sample_motion(&f.prior, &task, &f.metric, &config(4), None).unwrap();
    for n in 0..FRAMES {
        let (a, b) = (m.position(n, 20), m.position(n, 21));
        for c in 0..3 {
            assert!((a[c] - b[c] - off[c]).abs() <= 1e-8);
        }
    }
}

#[test]
fn loop_plus_trajectory_is_accepted() {
    let f = fixture();
    let task = build_loop_task(f.skel.clone(), FRAMES)
        .unwrap()
        .merge(build_trajectory_task(&f.reference, 10, &[0, 2], 3, Placement::Even).unwrap())
        .unwrap();
    // pinning the foot at both ends makes its loop rows redundant
    let frames = keyframe_frames(3, FRAMES, Placement::Even).unwrap();
    assert_eq!(frames, vec![0, 8, 15]);
    let err = sample_motion(&f.prior, &task, &f.metric, &config(5), None).unwrap_err();
    assert!(err.is_numerical());

    let task = build_loop_task(f.skel.clone(), FRAMES)
        .unwrap()
        .merge(build_trajectory_task(&f.reference, 10, &[0, 2], 1, Placement::Even).unwrap())
        .unwrap();
    let (m, res) = sample_motion(&f.prior, &task, &f.metric, &config(5), None).unwrap();
    assert!(task.static_system().unwrap().hard_residual(&m.vectorize()).unwrap() <= 1e-8);
    assert!(res.traces.iter().all(|t| t.hard_residual <= 1e-8));
}

#[test]
fn report_residual_is_recomputed() {
    let f = fixture();
    let task = build_trajectory_task(&f.reference, 0, &[0, 1, 2], 5, Placement::Even).unwrap();
    let (m, res) = sample_motion(&f.prior, &task, &f.metric, &config(6), None).unwrap();
    let rep = evaluate(&m, &task, Some(&f.prior), &res.traces, &EvalThresholds::default()).unwrap();
    let sys = task.static_system().unwrap();
    let r = sys.residual(&m.vectorize()).unwrap();
    let indep = r
        .iter()
        .zip(sys.y())
        .map(|(r, y)| r.abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max);
    assert!((rep.hard_residual - indep).abs() <= 1e-12);
    assert!(rep.hard_residual <= 1e-8);
    assert_eq!((rep.traj_err, rep.loc_err), (0.0, 0.0));
    assert!(rep.prior_nll.unwrap() >= 0.0);
    for v in [rep.avg_err, rep.mpjpe_2d, rep.foot_skate_ratio, rep.hard_residual_abs] {
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn inpainting_is_exact_at_every_step() {
    let f = fixture();
    let task = build_inpainting_task(&f.reference, &[0, 7, 15]).unwrap();
    let params = TrustParams::default();
    let (m, res) = sample_motion(&f.prior, &task, &f.metric, &config(7), Some(&params)).unwrap();
    assert!(res.traces.iter().all(|t| t.hard_residual <= 1e-8));
    // pseudo rows are active early and fade by the end
    assert!(res.traces[0].active_rows > res.traces.last().unwrap().active_rows);
    let rep = evaluate(&m, &task, None, &res.traces, &EvalThresholds::default()).unwrap();
    assert_eq!(rep.traj_err, 0.0);
    assert!(rep.hard_residual <= 1e-8);
}

#[test]
fn seeds_are_bitwise_reproducible_in_parallel() {
    let f = fixture();
    let task = build_inpainting_task(&f.reference, &[0, 15]).unwrap();
    let params = TrustParams::default();
    let run = |s| {
        sample_motion(&f.prior, &task, &f.metric, &config(s), Some(&params))
            .unwrap()
            .0
    };
    let par: Vec<MotionSeq> = (0..4u64).into_par_iter().map(run).collect();
    for (s, m) in par.iter().enumerate() {
        assert_eq!(*m, run(s as u64));
    }
    assert_ne!(par[0], par[1]);
}

/// Hard mask on half of the coordinates of a Gaussian testbed: the constrained
/// coordinates are exact, and the mean of the free coordinates is compared
/// with the Gaussian conditional mean over 10^4 runs.
#[test]
fn half_mask_gaussian_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let skel = Skeleton::chain(2).unwrap();
    let metric = KinematicMetric::new(&skel, 2, 10.0, 1.0).unwrap();
    let d = 12;
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = DMatrix::from_fn(d, 3, |_, _| rng.random_range(-0.7..0.7));
    let prior = GaussianPrior::low_rank(mu.clone(), w, 0.3).unwrap();
    // rows of a mask follow (frame, joint, axis) order
    let mut observed: Vec<VecIndex> = (0..6).map(|i| VecIndex::from_flat(i, 2, 2)).collect();
    observed.sort_by_key(|i| (i.frame, i.joint, i.axis));
    let o: Vec<usize> = observed.iter().map(|i| i.flat(2, 2)).collect();
    let u: Vec<usize> = (0..d).filter(|i| !o.contains(i)).collect();
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let system = ConstraintSystem::hard("half", mask_op(&observed, 2, 2).unwrap(), y.clone()).unwrap();

    let c = prior.covariance();
    let c_oo = c.select_rows(&o).select_columns(&o);
    let c_uo = c.select_rows(&u).select_columns(&o);
    let innov = DVector::from_iterator(6, (0..6).map(|r| y[r] - mu[o[r]]));
    let cond = DVector::from_iterator(6, u.iter().map(|&i| mu[i])) + c_uo * c_oo.try_inverse().unwrap() * innov;

    let runs = 10_000;
    let outs: Vec<Vec<f64>> = (0..runs as u64)
        .into_par_iter()
        .map(|s| {
            let cfg = SamplerConfig {
                seed: s,
                ..Default::default()
            };
            sample(&prior, &system, &metric, &cfg).unwrap().x
        })
        .collect();
    for x in &outs {
        for (r, &i) in o.iter().enumerate() {
            assert!((x[i] - y[r]).abs() <= 1e-8 * (1.0 + y[r].abs()));
        }
    }
    let mut worst: f64 = 0.0;
    for (k, &i) in u.iter().enumerate() {
        let mean = outs.iter().map(|x| x[i]).sum::<f64>() / runs as f64;
        let var = outs.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        worst = worst.max((mean - cond[k]).abs() / (var / runs as f64).sqrt());
    }
    println!("half-mask conditioning: worst free-coordinate z = {worst:.2}");
    assert!(
        worst <= 3.0,
        "free coordinates deviate from the conditional mean by {worst:.2} standard errors"
    );
}
