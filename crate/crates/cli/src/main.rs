//! `projflow` command-line driver.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 on
//! numerical failure (rank-deficient constraints, failed oracle suites).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;

use projflow::flow::{fit_gaussian_prior, save_prior};
use projflow::io::{load_motion, load_skeleton, save_motion, save_motion_csv};
use projflow::synth::synth_corpus;
use projflow::tasks::{traces_to_csv, RunOutput, TaskConfig, TaskRun};
use projflow::{verify, Error, Skeleton};

#[derive(Parser)]
#[command(
    name = "projflow",
    version,
    about = "Projection sampling with exact linear motion constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Task configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of sampling steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Output motion JSON (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output report JSON (overrides the config).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Output motion CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-step trace CSV (step, t, hard_residual, correction_rnorm).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
    /// Place trajectory keyframes at seeded random frames.
    #[arg(long)]
    random_placement: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and fit a low-rank Gaussian prior to it.
    Synth {
        /// Skeleton JSON; the built-in 22-joint body when omitted.
        #[arg(long)]
        skeleton: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving prior.json and reference.json (a held-out motion).
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write every corpus motion under out_dir/corpus/.
        #[arg(long)]
        write_corpus: bool,
    },
    /// Sample a motion under the hard constraints of a task.
    Sample(RunArgs),
    /// Sample with keyframes plus faded pseudo-observations.
    Inpaint(RunArgs),
    /// Sample a 3D motion from orthographic 2D observations.
    Lift(RunArgs),
    /// Cross-check the projector against dense oracles.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per suite.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Convert a motion JSON file to CSV.
    ExportCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn synth(
    skeleton: Option<PathBuf>,
    frames: usize,
    count: usize,
    rank: usize,
    seed: u64,
    out_dir: &Path,
    write_corpus: bool,
) -> CliResult {
    let skel = Arc::new(match skeleton {
        Some(p) => load_skeleton(p)?,
        None => Skeleton::humanml3d(),
    });
    fs::create_dir_all(out_dir).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", out_dir.display())))?;
    let corpus = synth_corpus(&skel, frames, count, seed)?;
    let samples: Vec<Vec<f64>> = corpus.iter().map(|m| m.vectorize()).collect();
    let prior = fit_gaussian_prior(&samples, rank)?;
    save_prior(out_dir.join("prior.json"), &prior)?;
    let held_out = synth_corpus(&skel, frames, 1, seed.wrapping_add(1))?.remove(0);
    save_motion(
        out_dir.join("reference.json"),
        &held_out,
        projflow::synth::CORPUS_FPS,
        None,
    )?;
    if write_corpus {
        let dir = out_dir.join("corpus");
        fs::create_dir_all(&dir).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", dir.display())))?;
        for (i, m) in corpus.iter().enumerate() {
            save_motion(dir.join(format!("{i:04}.json")), m, projflow::synth::CORPUS_FPS, None)?;
        }
    }
    println!(
        "fitted rank-{} prior on {} motions ({} frames, {} joints): {}",
        prior.rank(),
        count,
        frames,
        skel.joint_count(),
        out_dir.join("prior.json").display()
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Sample,
    Inpaint,
    Lift,
}

fn run_task(args: RunArgs, mode: Mode) -> CliResult {
    let (mut config, base) = TaskConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.sampler.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.sampler.steps = steps;
    }
    if args.random_placement {
        for c in &mut config.constraints {
            if let projflow::tasks::ConstraintConfig::Trajectory { random_placement, .. } = c {
                *random_placement = true;
            }
        }
    }
    config.sampler.record_trajectory = false;
    let run: TaskRun = config.prepare(&base)?;
    match mode {
        Mode::Inpaint if run.task.points().is_none() => {
            return Err(Failure::Invalid(
                "inpaint needs at least one keyframe or trajectory constraint".into(),
            ))
        }
        Mode::Lift if run.task.lifts().is_empty() => {
            return Err(Failure::Invalid("lift needs a `lift` constraint".into()))
        }
        _ => {}
    }
    info!(
        "sampling {} frames x {} joints, {} hard rows, {} steps",
        run.task.frames(),
        run.task.joints(),
        run.task.static_system()?.rows(),
        run.config.sampler.steps
    );
    let RunOutput { motion, report, traces } = run.run(mode == Mode::Inpaint)?;

    let pick = |flag: Option<PathBuf>, cfg: &Option<String>| flag.or_else(|| run.output_path(cfg));
    let outputs = &run.config.outputs;
    if let Some(p) = pick(args.out, &outputs.motion) {
        save_motion(&p, &motion, run.config.fps, None)?;
    }
    let report_json =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Invalid(format!("report serialization: {e}")))?;
    if let Some(p) = pick(args.report, &outputs.report) {
        write_file(&p, &report_json)?;
    }
    if let Some(p) = pick(args.csv, &outputs.csv) {
        save_motion_csv(&p, &motion)?;
    }
    if let Some(p) = pick(args.trace_csv, &outputs.trace_csv) {
        write_file(&p, &traces_to_csv(&traces))?;
    }
    println!(
        "hard_residual={:e} traj_err={} loc_err={} avg_err={:e} mpjpe_2d={:e} foot_skate={} prior_nll={}",
        report.hard_residual,
        report.traj_err,
        report.loc_err,
        report.avg_err,
        report.mpjpe_2d,
        report.foot_skate_ratio,
        report.prior_nll.map_or("-".into(), |v| format!("{v:.3}")),
    );
    Ok(())
}

fn oracle_check(seed: u64, trials: usize) -> CliResult {
    let suites = [
        verify::ddnm_suite(seed, trials)?,
        verify::map_suite(seed.wrapping_add(1), trials)?,
        verify::posterior_suite(seed.wrapping_add(2), trials)?,
        verify::optimality_suite(seed.wrapping_add(3), 2 * trials)?,
    ];
    for s in &suites {
        println!(
            "{} {:<10} trials={:<4} worst={:.3e} tol={:.0e}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.trials,
            s.worst,
            s.tolerance
        );
    }
    let failed = suites.iter().filter(|s| !s.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} oracle suite(s) failed")));
    }
    Ok(())
}

fn export_csv(input: &Path, output: &Path) -> CliResult {
    let loaded = load_motion(input)?;
    save_motion_csv(output, &loaded.motion)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROJFLOW_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth {
            skeleton,
            frames,
            count,
            rank,
            seed,
            out_dir,
            write_corpus,
        } => synth(skeleton, frames, count, rank, seed, &out_dir, write_corpus),
        Command::Sample(args) => run_task(args, Mode::Sample),
        Command::Inpaint(args) => run_task(args, Mode::Inpaint),
        Command::Lift(args) => run_task(args, Mode::Lift),
        Command::OracleCheck { seed, trials } => oracle_check(seed, trials),
        Command::ExportCsv { input, output } => export_csv(&input, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(2)
        }
    }
}
