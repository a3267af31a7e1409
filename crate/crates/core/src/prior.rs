//! Pose score, pose-prior reward and trajectory tracking metrics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::corpus::io::parse_reals;
use crate::error::{check_len, Error, Result};
use crate::field::DistanceField;
use crate::robot::{FramePose, RobotModel};
use crate::so3::{geodesic_distance, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub d_good: f64,
    pub d_bad: f64,
    pub reward_scale: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams { d_good: 0.0, d_bad: 0.4, reward_scale: 1.0 }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_good >= 0.0 && self.d_bad > self.d_good && self.reward_scale > 0.0 && self.d_bad.is_finite()) {
            return Err(Error::InvalidParams(format!("need 0 <= d_good < d_bad and reward_scale > 0, got {self:?}")));
        }
        Ok(())
    }
}

/// `clip((f - d_good) / (d_bad - d_good), 0, 1)`.
pub fn pose_score(f_value: f64, p: &ScoreParams) -> Result<f64> {
    p.validate()?;
    if !f_value.is_finite() {
        return Err(Error::InvalidParams(format!("field value {f_value} is not finite")));
    }
    Ok(((f_value - p.d_good) / (p.d_bad - p.d_good)).clamp(0.0, 1.0))
}

/// `exp(-reward_scale * score)`.
pub fn pose_prior_reward(score: f64, reward_scale: f64) -> f64 {
    (-reward_scale * score).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_task: f64,
    pub w_track: f64,
    pub w_prior: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_task: 0.0, w_track: 1.0, w_prior: 0.2 }
    }
}

pub fn compose_reward(r_task: f64, r_track: f64, r_prior: f64, w: &RewardWeights) -> f64 {
    w.w_task * r_task + w.w_track * r_track + w.w_prior * r_prior
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub root: FramePose,
    pub q: Vec<f64>,
}

impl TrajectoryFrame {
    pub fn new(root: FramePose, q: Vec<f64>) -> Self {
        TrajectoryFrame { root, q }
    }

    /// Frame with the root at the world origin.
    pub fn fixed_root(q: Vec<f64>) -> Self {
        TrajectoryFrame { root: FramePose::identity(), q }
    }
}

/// Largest field value along the reference, so that every reference frame scores 0.
pub fn compute_d_good<F: DistanceField + ?Sized>(field: &F, reference: &[TrajectoryFrame]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut best = f64::NEG_INFINITY;
    for frame in reference {
        best = best.max(field.value(&frame.q)?);
    }
    Ok(best)
}

/// Time-averaged errors; each `joint_*`/`root_*` part is that term's
/// contribution to the total, so `e_pos = joint_pos + root_pos`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    pub e_pos: f64,
    pub e_rot: f64,
    pub joint_pos: f64,
    pub root_pos: f64,
    pub joint_rot: f64,
    pub root_rot: f64,
}

/// Joint frames are compared in their trajectory's root frame, the root
/// itself in the world frame; `E = (sum_j e_j + e_root) / (N + 1)`.
pub fn tracking_errors(
    robot: &RobotModel,
    reference: &[TrajectoryFrame],
    achieved: &[TrajectoryFrame],
) -> Result<TrackingErrors> {
    if reference.len() != achieved.len() {
        return Err(Error::LengthMismatch(reference.len(), achieved.len()));
    }
    if reference.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = robot.n_joints();
    let local = FramePose::identity();
    let (mut joint_pos, mut joint_rot, mut root_pos, mut root_rot) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in reference.iter().zip(achieved) {
        let fa = robot.forward_kinematics(&local, &a.q)?;
        let fb = robot.forward_kinematics(&local, &b.q)?;
        for (x, y) in fa.iter().zip(&fb) {
            joint_pos += (x.position - y.position).norm();
            joint_rot += geodesic_distance(&x.orientation, &y.orientation)?;
        }
        root_pos += (a.root.position - b.root.position).norm();
        root_rot += geodesic_distance(&a.root.orientation, &b.root.orientation)?;
    }
    let denom = reference.len() as f64 * (n + 1) as f64;
    let (joint_pos, joint_rot, root_pos, root_rot) =
        (joint_pos / denom, joint_rot / denom, root_pos / denom, root_rot / denom);
    Ok(TrackingErrors {
        e_pos: joint_pos + root_pos,
        e_rot: joint_rot + root_rot,
        joint_pos,
        root_pos,
        joint_rot,
        root_rot,
    })
}

/// Text form: a `n_joints,frames` header, then per frame the root position,
/// the root rotation vector and the joint angles, comma-separated.
pub fn trajectory_to_text(frames: &[TrajectoryFrame]) -> Result<String> {
    let n = frames.first().map_or(0, |f| f.q.len());
    let mut out = format!("{n},{}\n", frames.len());
    for frame in frames {
        check_len(n, frame.q.len())?;
        let rv = frame.root.orientation.log()?;
        let p = frame.root.position;
        let values = [p.x, p.y, p.z, rv.x, rv.y, rv.z];
        let row: Vec<String> = values.iter().chain(&frame.q).map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", row.join(",")).expect("writing to a string");
    }
    Ok(out)
}

pub fn trajectory_from_text(text: &str) -> Result<Vec<TrajectoryFrame>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Parse("missing trajectory header".into()))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("trajectory header: {e}")))?;
    let [n, count] = dims[..] else {
        return Err(Error::Parse("trajectory header must be n_joints,frames".into()));
    };
    let mut frames = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let v = parse_reals(line).map_err(|e| Error::Parse(format!("frame {i}: {e}")))?;
        if v.len() != 6 + n {
            return Err(Error::Parse(format!("frame {i}: expected {} values, found {}", 6 + n, v.len())));
        }
        let root = FramePose::new(
            Vector3::new(v[0], v[1], v[2]),
            Rotation::from_rotation_vector(&Vector3::new(v[3], v[4], v[5])),
        );
        frames.push(TrajectoryFrame::new(root, v[6..].to_vec()));
    }
    if frames.len() != count {
        return Err(Error::Parse(format!("header promises {count} frames, found {}", frames.len())));
    }
    Ok(frames)
}

pub fn save_trajectory(path: impl AsRef<Path>, frames: &[TrajectoryFrame]) -> Result<()> {
    std::fs::write(path, trajectory_to_text(frames)?)?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectoryFrame>> {
    trajectory_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, PoseCorpus};
    use crate::field::OracleField;
    use proptest::prelude::*;

    const E_INV: f64 = 0.36787944117144233;

    #[test]
    fn score_examples() {
        let p = ScoreParams { d_good: 0.1, ..Default::default() };
        assert_eq!(pose_score(0.1, &p).unwrap(), 0.0);
        assert!((pose_score(0.25, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pose_score(10.0, &p).unwrap(), 1.0);
        assert_eq!(pose_score(0.0, &p).unwrap(), 0.0);
        let bad = ScoreParams { d_good: 0.4, d_bad: 0.4, reward_scale: 1.0 };
        assert!(matches!(pose_score(0.2, &bad), Err(Error::InvalidParams(_))));
        assert!(pose_score(f64::NAN, &p).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(pose_prior_reward(0.0, 1.0), 1.0);
        assert_eq!(pose_prior_reward(1.0, 1.0), E_INV);
        assert!((pose_prior_reward(0.5, 1.0) - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let w = RewardWeights { w_task: 0.0, w_track: 0.0, w_prior: 0.2 };
        assert_eq!(compose_reward(5.0, 3.0, 1.0, &w), 0.2);
        assert_eq!(compose_reward(0.0, 0.0, 0.0, &RewardWeights::default()), 0.0);
        let w = RewardWeights { w_task: 0.3, w_track: 0.5, w_prior: 0.2 };
        let one = compose_reward(0.7, 0.4, 0.9, &w);
        assert!((compose_reward(1.4, 0.8, 1.8, &w) - 2.0 * one).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn score_monotone_and_reward_bounded(a in 0.0..3.0f64, b in 0.0..3.0f64, scale in 0.1..5.0f64) {
            let p = ScoreParams { d_good: 0.05, d_bad: 0.4, reward_scale: scale };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (s_lo, s_hi) = (pose_score(lo, &p).unwrap(), pose_score(hi, &p).unwrap());
            prop_assert!(s_lo <= s_hi);
            let (r_lo, r_hi) = (pose_prior_reward(s_lo, scale), pose_prior_reward(s_hi, scale));
            prop_assert!(r_hi <= r_lo);
            prop_assert!(r_hi >= (-scale).exp() && r_lo <= 1.0);
        }
    }

    fn humanoid_reference() -> (RobotModel, PoseCorpus, Vec<TrajectoryFrame>) {
        let robot = RobotModel::bundled_humanoid();
        let poses = generate_synthetic_corpus(&robot, 4, 300, 5).unwrap();
        let corpus = PoseCorpus::build(&robot, poses.clone()).unwrap();
        // Reference frames sit between corpus rows so their field values differ.
        let frames = (0..10)
            .map(|t| {
                let a = &poses[t * 29..(t + 1) * 29];
                let b = &poses[(t + 50) * 29..(t + 51) * 29];
                TrajectoryFrame::fixed_root(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
            })
            .collect();
        (robot, corpus, frames)
    }

    #[test]
    fn d_good_makes_reference_reward_one() {
        let (_, corpus, frames) = humanoid_reference();
        let oracle = OracleField::new(&corpus);
        let d_good = compute_d_good(&oracle, &frames).unwrap();
        assert!(d_good > 0.0);
        let p = ScoreParams { d_good, d_bad: d_good + 0.4, reward_scale: 1.0 };
        for f in &frames {
            let s = pose_score(oracle.value(&f.q).unwrap(), &p).unwrap();
            assert_eq!(pose_prior_reward(s, p.reward_scale), 1.0);
        }
        let single = compute_d_good(&oracle, &frames[..1]).unwrap();
        assert_eq!(single, oracle.value(&frames[0].q).unwrap());
        let constant = vec![frames[0].clone(); 5];
        assert_eq!(compute_d_good(&oracle, &constant).unwrap(), single);
        assert!(matches!(compute_d_good(&oracle, &[]), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn tracking_error_examples() {
        let robot = RobotModel::bundled_humanoid();
        let poses = generate_synthetic_corpus(&robot, 4, 4, 1).unwrap();
        let frames: Vec<TrajectoryFrame> = poses.chunks(29).map(|q| TrajectoryFrame::fixed_root(q.to_vec())).collect();
        let zero = tracking_errors(&robot, &frames, &frames).unwrap();
        assert_eq!(zero.e_pos, 0.0);
        assert_eq!(zero.e_rot, 0.0);

        // A leaf joint offset rotates only its own frame; its origin stays put.
        let leaf = robot.n_joints() - 1;
        let offset: Vec<TrajectoryFrame> = frames
            .iter()
            .map(|f| {
                let mut q = f.q.clone();
                q[leaf] += if q[leaf] + 0.3 <= robot.joints()[leaf].limit_hi { 0.3 } else { -0.3 };
                TrajectoryFrame::fixed_root(q)
            })
            .collect();
        let e = tracking_errors(&robot, &frames, &offset).unwrap();
        assert!((e.joint_rot - 0.01).abs() < 1e-12, "{e:?}");
        assert!(e.joint_pos < 1e-12 && e.root_rot == 0.0);

        let shifted: Vec<TrajectoryFrame> = frames
            .iter()
            .map(|f| TrajectoryFrame::new(FramePose::new(Vector3::x(), Rotation::identity()), f.q.clone()))
            .collect();
        let e = tracking_errors(&robot, &frames, &shifted).unwrap();
        assert!((e.e_pos - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(e.joint_pos, 0.0);

        assert!(matches!(tracking_errors(&robot, &frames, &frames[..2]), Err(Error::LengthMismatch(4, 2))));
        let short = vec![TrajectoryFrame::fixed_root(vec![0.0; 3]); 4];
        assert!(matches!(tracking_errors(&robot, &frames, &short), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trajectory_text_round_trip() {
        let frames = vec![
            TrajectoryFrame::new(
                FramePose::new(
                    Vector3::new(0.1, -2.0, 0.75),
                    Rotation::from_rotation_vector(&Vector3::new(0.0, 0.3, 0.1)),
                ),
                vec![0.25, -1.0 / 3.0],
            ),
            TrajectoryFrame::fixed_root(vec![0.0, 1e-17]),
        ];
        let text = trajectory_to_text(&frames).unwrap();
        assert!(text.starts_with("2,2\n"));
        let back = trajectory_from_text(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.root.position, b.root.position);
            assert!((a.root.orientation.matrix() - b.root.orientation.matrix()).norm() < 1e-15);
        }
        assert!(trajectory_from_text("2,3\n0,0,0,0,0,0,1,2\n").is_err());
        assert!(trajectory_from_text("2,1\n0,0,0,0,0,0,1\n").is_err());
        assert!(trajectory_from_text("").is_err());
    }
}
