use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use posefield::corpus::{filter_positives, generate_synthetic_corpus, load_corpus, poses_from_text, save_corpus};
use posefield::dataset::{load_dataset, save_dataset};
use posefield::eval::{evaluate_field, median, unseen_corpus_rows};
use posefield::field::{load_checkpoint, save_checkpoint, train_field};
use posefield::ik::{parse_keypoint_targets, retarget_trajectory, solve_frame, FrameReport};
use posefield::prior::{compute_d_good, load_trajectory, pose_prior_reward, pose_score, save_trajectory};
use posefield::projector::{denoise_batch, summarize_denoising};
use posefield::sampler::{audit_labels, build_training_set, gaussian_shell_diagnostic};
use posefield::{
    DistanceField, FieldModel, LabeledSample, OracleField, PoseCorpus, ProjectionTrace, RobotModel, SamplerConfig,
    Source, TrajectoryFrame,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FieldChoice, Loaded};
use crate::{CliError, Command};

const TRAIN_LOSS_REPORT: &str = "train_loss.csv";
const EVAL_REPORT: &str = "eval.csv";
const SCORE_REPORT: &str = "score.csv";
const DENOISE_TRACES: &str = "denoise_traces.csv";
const DENOISE_SUMMARY: &str = "denoise_summary.csv";
const DIAGNOSE_REPORT: &str = "diagnose.csv";

pub(crate) fn dispatch(l: &Loaded, command: Command) -> Result<(), CliError> {
    match command {
        Command::GenCorpus => gen_corpus(l),
        Command::Label { audit } => label(l, audit),
        Command::Train => train(l),
        Command::Eval => eval(l),
        Command::Score { poses, reference } => score(l, poses, reference),
        Command::Denoise { poses } => denoise(l, poses),
        Command::Ik { targets } => ik(l, targets, false),
        Command::Retarget { targets } => ik(l, targets, true),
        Command::Diagnose => diagnose(l),
        Command::Repro => repro(l),
    }
}

fn repro(l: &Loaded) -> Result<(), CliError> {
    gen_corpus(l)?;
    label(l, l.config.label.audit)?;
    train(l)?;
    eval(l)?;
    denoise(l, None)
}

fn load_robot(l: &Loaded) -> Result<RobotModel, CliError> {
    match l.robot_path() {
        Some(path) => RobotModel::load(&path).map_err(|e| with_path(e, &path)),
        None => Ok(RobotModel::bundled_humanoid()),
    }
}

fn load_corpus_for(l: &Loaded, robot: &RobotModel) -> Result<PoseCorpus, CliError> {
    let path = l.out(&l.config.corpus_path);
    let corpus = load_corpus(&path).map_err(|e| with_path(e, &path))?.into_corpus()?;
    corpus.check_robot(robot)?;
    Ok(corpus)
}

fn load_model_for(l: &Loaded, robot: &RobotModel) -> Result<FieldModel, CliError> {
    let path = l.out(&l.config.checkpoint_path);
    let model = load_checkpoint(&path).map_err(|e| with_path(e, &path))?;
    model.ensure_compatible(robot)?;
    Ok(model)
}

/// Prefixes I/O errors with the offending path; keeps the error class.
fn with_path(e: posefield::Error, path: &Path) -> CliError {
    match e {
        posefield::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Core(other),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn gen_corpus(l: &Loaded) -> Result<(), CliError> {
    let c = &l.config.corpus;
    let robot = load_robot(l)?;
    if c.latent_dim == 0 || c.count == 0 {
        return Err(CliError::Config("corpus.latent_dim and corpus.count must be at least 1".into()));
    }
    let mut poses = generate_synthetic_corpus(&robot, c.latent_dim, c.count, c.seed)?;
    if c.filter {
        let outcome = filter_positives(&poses, robot.n_joints(), c.filter_folds, c.filter_quantile, c.seed)?;
        println!(
            "filter: rejected {} of {} rows (threshold {:.6})",
            outcome.rejected.len(),
            c.count,
            outcome.threshold
        );
        poses = outcome.kept;
    }
    let outside = poses
        .chunks(robot.n_joints())
        .map(|row| robot.validate(row))
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .filter(|v| !v.is_empty())
        .count();
    let corpus = PoseCorpus::build(&robot, poses)?;
    let path = l.out(&l.config.corpus_path);
    ensure_parent(&path)?;
    save_corpus(&path, &corpus).map_err(|e| with_path(e, &path))?;
    println!(
        "corpus: {} poses of {} joints (robot {}), {} rows outside limits -> {}",
        corpus.len(),
        corpus.n_joints(),
        robot.name(),
        outside,
        path.display()
    );
    Ok(())
}

fn label(l: &Loaded, audit: bool) -> Result<(), CliError> {
    let block = &l.config.label;
    let robot = load_robot(l)?;
    let corpus = load_corpus_for(l, &robot)?;
    let started = Instant::now();
    let samples = build_training_set(&corpus, &robot, block.total, &block.sampler)?;
    eprintln!("labeled {} samples in {:.1?}", samples.len(), started.elapsed());
    for source in [Source::On, Source::Near, Source::Interp] {
        println!("{}: {}", source.name(), samples.iter().filter(|s| s.source == source).count());
    }
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let max = labels.iter().copied().fold(0.0, f64::max);
    println!("labels: mean {:.6}, median {:.6}, max {:.6}", posefield::eval::mean(&labels), median(&labels), max);
    if audit || block.audit {
        let bad = audit_labels(&corpus, &samples, block.audit_fraction, block.sampler.seed)?;
        if !bad.is_empty() {
            return Err(CliError::Numerical(format!("label audit found {} mismatches", bad.len())));
        }
        println!("audit: {:.1}% of labels match the oracle bitwise", 100.0 * block.audit_fraction);
    }
    let path = l.out(&l.config.dataset_path);
    ensure_parent(&path)?;
    save_dataset(&path, robot.n_joints(), &samples).map_err(|e| with_path(e, &path))?;
    println!("dataset -> {}", path.display());
    Ok(())
}

fn load_samples(l: &Loaded, robot: &RobotModel) -> Result<Vec<LabeledSample>, CliError> {
    let path = l.out(&l.config.dataset_path);
    let (n_joints, samples) = load_dataset(&path).map_err(|e| with_path(e, &path))?;
    if n_joints != robot.n_joints() {
        return Err(CliError::Core(posefield::Error::RobotMismatch(format!(
            "dataset has {n_joints} joints, robot {} has {}",
            robot.name(),
            robot.n_joints()
        ))));
    }
    Ok(samples)
}

fn train(l: &Loaded) -> Result<(), CliError> {
    let robot = load_robot(l)?;
    let samples = load_samples(l, &robot)?;
    let model = FieldModel::init(&robot, l.config.model.arch.clone(), l.config.model.seed)?;
    let started = Instant::now();
    let (model, history) = train_field(model, &samples, &l.config.train)?;
    eprintln!("trained {} epochs in {:.1?}", history.epochs.len(), started.elapsed());
    let ckpt = l.out(&l.config.checkpoint_path);
    ensure_parent(&ckpt)?;
    save_checkpoint(&model, &ckpt).map_err(|e| with_path(e, &ckpt))?;
    let report = l.out(TRAIN_LOSS_REPORT);
    write_text(&report, &history.to_csv())?;
    let last = history.last();
    let val = last.val_mae.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    println!(
        "epoch {}: train_mae {:.6} (initial {:.6}), val_mae {val}",
        last.epoch, last.train_mae, history.initial.train_mae
    );
    println!("checkpoint -> {}, losses -> {}", ckpt.display(), report.display());
    Ok(())
}

fn eval(l: &Loaded) -> Result<(), CliError> {
    let robot = load_robot(l)?;
    let corpus = load_corpus_for(l, &robot)?;
    let model = load_model_for(l, &robot)?;
    let training = load_samples(l, &robot)?;
    let held_out_cfg = SamplerConfig { seed: l.config.eval.seed, ..l.config.label.sampler.clone() };
    let held_out = build_training_set(&corpus, &robot, l.config.eval.total, &held_out_cfg)?;
    let unseen = unseen_corpus_rows(&corpus, &training)?;
    let report = evaluate_field(&model, &held_out, &corpus, &unseen)?;
    let text = report.to_csv();
    write_text(&l.out(EVAL_REPORT), &text)?;
    print!("{text}");
    Ok(())
}

/// Learned checkpoint, exact corpus oracle, or nothing.
enum FieldSource {
    Learned(FieldModel),
    Oracle(PoseCorpus),
    None,
}

impl FieldSource {
    fn load(l: &Loaded, robot: &RobotModel, choice: FieldChoice) -> Result<Self, CliError> {
        Ok(match choice {
            FieldChoice::Learned => FieldSource::Learned(load_model_for(l, robot)?),
            FieldChoice::Oracle => FieldSource::Oracle(load_corpus_for(l, robot)?),
            FieldChoice::None => FieldSource::None,
        })
    }
}

fn read_poses(path: &Path, robot: &RobotModel) -> Result<Vec<Vec<f64>>, CliError> {
    let (flat, n) = poses_from_text(&read_text(path)?)?;
    if n != robot.n_joints() {
        return Err(CliError::Core(posefield::Error::DimensionMismatch { expected: robot.n_joints(), found: n }));
    }
    Ok(flat.chunks(n).map(<[f64]>::to_vec).collect())
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Config(format!("{what} is required")))
}

fn score(l: &Loaded, poses: Option<PathBuf>, reference: Option<PathBuf>) -> Result<(), CliError> {
    let block = &l.config.score;
    let robot = load_robot(l)?;
    let model = load_model_for(l, &robot)?;
    let poses_path = required(poses.or_else(|| block.poses.clone()), "score.poses (--poses)")?;
    let poses = read_poses(&poses_path, &robot)?;
    let mut params = block.params;
    if let Some(path) = reference.or_else(|| block.reference.clone()) {
        let frames: Vec<TrajectoryFrame> = load_trajectory(&path).map_err(|e| with_path(e, &path))?;
        params.d_good = compute_d_good(&model, &frames)?;
    }
    params.validate()?;
    let mut text = String::from("index,f,score,reward\n");
    for (i, q) in poses.iter().enumerate() {
        let f = model.predict(q)?;
        let s = pose_score(f, &params)?;
        let r = pose_prior_reward(s, params.reward_scale);
        writeln!(text, "{i},{f:?},{s:?},{r:?}").expect("writing to a string");
    }
    write_text(&l.out(SCORE_REPORT), &text)?;
    print!("{text}");
    Ok(())
}

fn uniform_starts(robot: &RobotModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| robot.joints().iter().map(|j| rng.random_range(j.limit_lo..=j.limit_hi)).collect()).collect()
}

fn denoise(l: &Loaded, poses: Option<PathBuf>) -> Result<(), CliError> {
    let block = &l.config.denoise;
    let robot = load_robot(l)?;
    let corpus = load_corpus_for(l, &robot)?;
    let starts = match poses.or_else(|| block.poses.clone()) {
        Some(path) => read_poses(&path, &robot)?,
        None => uniform_starts(&robot, block.starts, block.seed),
    };
    let oracle = OracleField::new(&corpus);
    let traces: Vec<ProjectionTrace> = match FieldSource::load(l, &robot, block.field)? {
        FieldSource::Learned(model) => denoise_batch(&model, &robot, &starts, &block.projection)?,
        FieldSource::Oracle(_) => denoise_batch(&oracle, &robot, &starts, &block.projection)?,
        FieldSource::None => return Err(CliError::Config("denoise.field must be learned or oracle".into())),
    };
    let initial: Vec<f64> = traces.iter().map(|t| oracle.value(t.start())).collect::<Result<_, _>>()?;
    let finals: Vec<f64> = traces.iter().map(|t| oracle.value(t.last())).collect::<Result<_, _>>()?;
    let summary = summarize_denoising(&initial, &finals)?;
    let field_ok = traces.iter().filter(|t| t.final_value() <= t.initial_value()).count();

    let mut trace_text = String::from("start,iteration,f,q...\n");
    for (i, t) in traces.iter().enumerate() {
        for line in t.to_text().lines() {
            writeln!(trace_text, "{i},{line}").expect("writing to a string");
        }
    }
    let mut text = String::from("metric,value\n");
    writeln!(text, "starts,{}", summary.starts).expect("writing to a string");
    writeln!(text, "median_initial_distance,{:?}", summary.median_initial).expect("writing to a string");
    writeln!(text, "median_final_distance,{:?}", summary.median_final).expect("writing to a string");
    writeln!(text, "median_reduction,{:?}", summary.median_reduction).expect("writing to a string");
    writeln!(text, "distance_non_increasing_fraction,{:?}", summary.non_increasing_fraction)
        .expect("writing to a string");
    writeln!(text, "field_non_increasing_fraction,{:?}", field_ok as f64 / traces.len() as f64)
        .expect("writing to a string");
    for reason in
        [posefield::Termination::Converged, posefield::Termination::FlatGradient, posefield::Termination::MaxIters]
    {
        let n = traces.iter().filter(|t| t.terminated_by == reason).count();
        writeln!(text, "terminated_{},{n}", reason.name()).expect("writing to a string");
    }
    write_text(&l.out(DENOISE_TRACES), &trace_text)?;
    write_text(&l.out(DENOISE_SUMMARY), &text)?;
    print!("{text}");
    Ok(())
}

fn ik(l: &Loaded, targets: Option<PathBuf>, warm_start: bool) -> Result<(), CliError> {
    let block = &l.config.ik;
    let robot = load_robot(l)?;
    let path = required(targets.or_else(|| block.targets.clone()), "ik.targets (--targets)")?;
    let frames = parse_keypoint_targets(&robot, &read_text(&path)?)?;
    let needs_field = block.weights.lambda_prior > 0.0;
    let source = if needs_field { FieldSource::load(l, &robot, block.field)? } else { FieldSource::None };
    let corpus_oracle;
    let field: Option<&dyn DistanceField> = match &source {
        FieldSource::Learned(m) => Some(m),
        FieldSource::Oracle(c) => {
            corpus_oracle = OracleField::new(c);
            Some(&corpus_oracle)
        }
        FieldSource::None if needs_field => {
            return Err(CliError::Config("ik.weights.lambda_prior > 0 needs ik.field learned or oracle".into()))
        }
        FieldSource::None => None,
    };
    let solved: Vec<(Vec<f64>, FrameReport)> = if warm_start {
        retarget_trajectory(&robot, field, &frames, &block.weights, block.iters, None)?
    } else {
        let start = vec![0.0; robot.n_joints()];
        frames
            .iter()
            .map(|t| solve_frame(&robot, field, &start, t, &block.weights, block.iters))
            .collect::<Result<_, _>>()?
    };
    let name = if warm_start { "retarget" } else { "ik" };
    let mut report = String::from("frame,task_residual,prior_value,cost,iterations\n");
    for (i, (_, r)) in solved.iter().enumerate() {
        let prior = r.prior_value.map(|v| format!("{v:?}")).unwrap_or_default();
        writeln!(report, "{i},{:?},{prior},{:?},{}", r.task_residual, r.cost, r.iterations)
            .expect("writing to a string");
    }
    let trajectory: Vec<TrajectoryFrame> = solved.into_iter().map(|(q, _)| TrajectoryFrame::fixed_root(q)).collect();
    let traj_path = l.out(format!("{name}_trajectory.txt"));
    ensure_parent(&traj_path)?;
    save_trajectory(&traj_path, &trajectory).map_err(|e| with_path(e, &traj_path))?;
    write_text(&l.out(format!("{name}_report.csv")), &report)?;
    print!("{report}");
    Ok(())
}

fn diagnose(l: &Loaded) -> Result<(), CliError> {
    let d = &l.config.diagnose;
    let r = gaussian_shell_diagnostic(d.dims, d.sigma, d.n, d.seed)?;
    let text = format!(
        "dims,sigma,n,mean_sq_norm,cv_norm_naive,cv_magnitude_decoupled,ratio\n{},{:?},{},{:?},{:?},{:?},{:?}\n",
        d.dims,
        d.sigma,
        d.n,
        r.mean_sq_norm,
        r.cv_norm_naive,
        r.cv_magnitude_decoupled,
        r.cv_magnitude_decoupled / r.cv_norm_naive
    );
    write_text(&l.out(DIAGNOSE_REPORT), &text)?;
    print!("{text}");
    Ok(())
}
