//! End-to-end runs of the `posefield` binary on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posefield::corpus::{load_corpus, poses_to_text, write_corpus};
use posefield::robot::spatial_chain;
use posefield::{FramePose, RobotModel};
use tempfile::TempDir;

/// Corpus, labels and a one-epoch field: enough to exercise every command quickly.
const SMALL: &str = r#"
[corpus]
latent_dim = 4
count = 500
seed = 3

[label]
total = 4000

[label.sampler]
seed = 4

[model]
seed = 5

[train]
epochs = 1
batch_size = 256
seed = 6

[eval]
total = 500
seed = 7

[denoise]
field = "learned"
starts = 10
seed = 8
"#;

fn posefield(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--out", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    Command::new(env!("CARGO_BIN_EXE_posefield"))
        .args(all)
        .env_remove("POSEFIELD_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Tempdir with SMALL as its config.
fn workspace() -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL).display().to_string();
    (dir, cfg)
}

fn run(dir: &Path, cfg: &str, args: &[&str]) -> Output {
    let mut all = vec!["--config", cfg];
    all.extend_from_slice(args);
    posefield(dir, &all)
}

fn pipeline(dir: &Path, cfg: &str) {
    for step in ["gen-corpus", "label", "train"] {
        assert_ok(&run(dir, cfg, &[step]));
    }
}

#[test]
fn gen_corpus_reruns_are_byte_identical() {
    let (a, cfg) = workspace();
    let b = TempDir::new().unwrap();
    assert_ok(&run(a.path(), &cfg, &["gen-corpus"]));
    assert_ok(&run(b.path(), &cfg, &["gen-corpus"]));
    let first = fs::read(a.path().join("corpus.pdfc")).unwrap();
    assert_eq!(first, fs::read(b.path().join("corpus.pdfc")).unwrap());
    let other_seed = run(b.path(), &cfg, &["gen-corpus", "--seed", "99"]);
    assert_ok(&other_seed);
    assert_ne!(first, fs::read(b.path().join("corpus.pdfc")).unwrap());
}

#[test]
fn default_config_writes_full_size_corpus() {
    let dir = TempDir::new().unwrap();
    assert_ok(&posefield(dir.path(), &["gen-corpus"]));
    let corpus = load_corpus(dir.path().join("corpus.pdfc")).unwrap();
    assert_eq!(corpus.count(), 20_000);
    assert_eq!(corpus.robot_name, RobotModel::bundled_humanoid().name());
}

#[test]
fn invalid_robot_path_exits_3() {
    let (dir, cfg) = workspace();
    let out = run(dir.path(), &cfg, &["gen-corpus", "--robot", "/nonexistent/robot.toml"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn config_errors_exit_2() {
    let (dir, cfg) = workspace();
    assert_eq!(code(&run(dir.path(), &cfg, &["gen-corpus", "--set", "corpus.colour=3"])), 2);
    assert_eq!(code(&run(dir.path(), &cfg, &["gen-corpus", "--set", "corpus.count=0"])), 2);
    assert_eq!(code(&run(dir.path(), &cfg, &["no-such-command"])), 2);
    let missing = dir.path().join("absent.toml").display().to_string();
    assert_ne!(code(&run(dir.path(), &missing, &["gen-corpus"])), 0);
}

#[test]
fn empty_corpus_exits_2() {
    let (dir, cfg) = workspace();
    let robot = RobotModel::bundled_humanoid();
    let mut bytes = Vec::new();
    write_corpus(&mut bytes, robot.name(), robot.n_joints(), &[]).unwrap();
    fs::write(dir.path().join("corpus.pdfc"), bytes).unwrap();
    assert_eq!(code(&run(dir.path(), &cfg, &["label"])), 2);
}

#[test]
fn label_counts_follow_mix_and_audit_passes() {
    let (dir, cfg) = workspace();
    assert_ok(&run(dir.path(), &cfg, &["gen-corpus"]));
    let out = run(dir.path(), &cfg, &["label", "--audit", "--set", "label.total=20000"]);
    assert_ok(&out);
    let text = stdout(&out);
    for line in ["on: 4000", "near: 10000", "interp: 6000", "audit: "] {
        assert!(text.lines().any(|l| l.starts_with(line)), "missing {line:?} in\n{text}");
    }
}

#[test]
fn train_is_deterministic_and_eval_reports() {
    let (dir, cfg) = workspace();
    pipeline(dir.path(), &cfg);
    let losses = fs::read(dir.path().join("train_loss.csv")).unwrap();
    let checkpoint = fs::read(dir.path().join("field.json")).unwrap();
    assert_ok(&run(dir.path(), &cfg, &["train"]));
    assert_eq!(losses, fs::read(dir.path().join("train_loss.csv")).unwrap());
    assert_eq!(checkpoint, fs::read(dir.path().join("field.json")).unwrap());
    assert!(String::from_utf8(losses).unwrap().starts_with("epoch,train_mae,val_mae\n"));

    let out = run(dir.path(), &cfg, &["eval"]);
    assert_ok(&out);
    assert_eq!(stdout(&out), fs::read_to_string(dir.path().join("eval.csv")).unwrap());
}

#[test]
fn checkpoint_robot_mismatch_exits_2() {
    let (dir, cfg) = workspace();
    pipeline(dir.path(), &cfg);
    let robot_path = dir.path().join("chain.toml");
    fs::write(&robot_path, spatial_chain(6, 0.3, 2.5).to_toml_string()).unwrap();
    let robot = robot_path.to_str().unwrap();
    // The humanoid corpus does not fit the chain.
    assert_eq!(code(&run(dir.path(), &cfg, &["eval", "--robot", robot])), 2);
    // With a chain corpus, the humanoid checkpoint is what disagrees.
    let corpus = dir.path().join("chain.pdfc");
    let corpus = corpus.to_str().unwrap();
    assert_ok(&run(dir.path(), &cfg, &["gen-corpus", "--robot", robot, "--corpus", corpus]));
    assert_eq!(code(&run(dir.path(), &cfg, &["eval", "--robot", robot, "--corpus", corpus])), 2);
}

#[test]
fn diagnose_reproduces_cv_bands() {
    let dir = TempDir::new().unwrap();
    let out = posefield(dir.path(), &["diagnose"]);
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("diagnose.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let values: Vec<&str> = lines.next().unwrap().split(',').collect();
    let get = |name: &str| -> f64 { values[header.iter().position(|h| *h == name).unwrap()].parse().unwrap() };
    assert_eq!(get("dims"), 29.0);
    assert!((0.10..=0.17).contains(&get("cv_norm_naive")), "{text}");
    assert!((0.70..=0.81).contains(&get("cv_magnitude_decoupled")), "{text}");
}

#[test]
fn score_rewards_reference_poses() {
    let (dir, cfg) = workspace();
    pipeline(dir.path(), &cfg);
    let corpus = load_corpus(dir.path().join("corpus.pdfc")).unwrap();
    let rows = &corpus.poses[..5 * corpus.n_joints];
    let poses = dir.path().join("poses.txt");
    fs::write(&poses, poses_to_text(rows, corpus.n_joints)).unwrap();
    let frames: Vec<_> =
        rows.chunks(corpus.n_joints).map(|q| posefield::TrajectoryFrame::fixed_root(q.to_vec())).collect();
    let reference = dir.path().join("reference.txt");
    posefield::prior::save_trajectory(&reference, &frames).unwrap();

    let args = ["score", "--poses", poses.to_str().unwrap(), "--reference", reference.to_str().unwrap()];
    // A one-epoch field sits well above 0.4 on corpus rows, so d_good lands past
    // the default d_bad and the parameters are rejected.
    assert_eq!(code(&run(dir.path(), &cfg, &args)), 2);
    let mut args = args.to_vec();
    args.extend(["--set", "score.params.d_bad=5.0"]);
    let out = run(dir.path(), &cfg, &args);
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("score.csv")).unwrap();
    assert_eq!(text, stdout(&out));
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert!(row[1] > 0.0 && row[1].is_finite());
        assert_eq!(row[3], 1.0, "reward on a reference pose");
    }
    assert_eq!(code(&run(dir.path(), &cfg, &["score"])), 2, "poses are required");
}

#[test]
fn denoise_writes_traces_and_summary() {
    let (dir, cfg) = workspace();
    pipeline(dir.path(), &cfg);
    for field in ["learned", "oracle"] {
        let set = format!("denoise.field=\"{field}\"");
        assert_ok(&run(dir.path(), &cfg, &["denoise", "--set", &set]));
        let summary = fs::read_to_string(dir.path().join("denoise_summary.csv")).unwrap();
        assert!(summary.starts_with("metric,value\nstarts,10\n"), "{summary}");
        let traces = fs::read_to_string(dir.path().join("denoise_traces.csv")).unwrap();
        let started: std::collections::BTreeSet<&str> =
            traces.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(started.len(), 10);
    }
    assert_eq!(code(&run(dir.path(), &cfg, &["denoise", "--set", "denoise.field=\"none\""])), 2);
}

#[test]
fn ik_and_retarget_track_keypoints() {
    let (dir, cfg) = workspace();
    pipeline(dir.path(), &cfg);
    let robot = RobotModel::bundled_humanoid();
    let corpus = load_corpus(dir.path().join("corpus.pdfc")).unwrap();
    let leaves: Vec<usize> = (0..robot.n_joints()).filter(|&j| robot.parents().iter().all(|p| *p != Some(j))).collect();
    let mut targets = String::new();
    for (frame, q) in corpus.poses.chunks(robot.n_joints()).take(3).enumerate() {
        let poses = robot.forward_kinematics(&FramePose::identity(), q).unwrap();
        for &j in &leaves {
            let p = poses[j].position;
            targets += &format!("{frame},{},{},{},{},,,,1,\n", robot.joints()[j].name, p.x, p.y, p.z);
        }
    }
    let path = dir.path().join("targets.csv");
    fs::write(&path, targets).unwrap();
    for command in ["ik", "retarget"] {
        let out = run(dir.path(), &cfg, &[command, "--targets", path.to_str().unwrap()]);
        assert_ok(&out);
        let report = fs::read_to_string(dir.path().join(format!("{command}_report.csv"))).unwrap();
        assert_eq!(report.lines().count(), 4);
        assert!(report.starts_with("frame,task_residual,prior_value,cost,iterations\n"));
        let trajectory =
            posefield::prior::load_trajectory(dir.path().join(format!("{command}_trajectory.txt"))).unwrap();
        assert_eq!(trajectory.len(), 3);
        assert!(trajectory.iter().all(|f| robot.is_within_limits(&f.q)));
    }
    assert_eq!(code(&run(dir.path(), &cfg, &["ik"])), 2, "targets are required");
}

#[test]
fn config_dir_comes_from_environment() {
    let (dir, _) = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_posefield"))
        .args(["--out", dir.path().to_str().unwrap(), "gen-corpus"])
        .env("POSEFIELD_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    assert_ok(&out);
    assert_eq!(load_corpus(dir.path().join("corpus.pdfc")).unwrap().count(), 500);
}
