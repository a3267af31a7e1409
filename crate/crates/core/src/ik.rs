//! Prior-regularized inverse kinematics.
//!
//! Targets are expressed in the robot's root frame. Each step solves the
//! regularized normal equations
//!
//! ```text
//! (w JᵀJ + (λs + d) I + λp g gᵀ) Δq = -w Jᵀ r  [- λp f g in solve_frame]
//! ```
//!
//! with `g` the field gradient, then clips the step to `max_step` and to the
//! joint limits. The clip stands in for a box-constrained QP.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::corpus::io::parse_reals;
use crate::error::{check_len, Error, Result};
use crate::field::DistanceField;
use crate::robot::{FramePose, RobotModel};
use crate::so3::{left_jacobian_inverse, Rotation};

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTarget {
    pub joint: usize,
    pub position: Option<Vector3<f64>>,
    pub orientation: Option<Rotation>,
    pub weight_pos: f64,
    pub weight_rot: f64,
}

impl KeypointTarget {
    pub fn new(
        joint: usize,
        position: Option<Vector3<f64>>,
        orientation: Option<Rotation>,
        weight_pos: f64,
        weight_rot: f64,
    ) -> Result<Self> {
        if position.is_none() && orientation.is_none() {
            return Err(Error::InvalidParams(format!("target on joint {joint} has neither position nor orientation")));
        }
        if !(weight_pos >= 0.0 && weight_rot >= 0.0) {
            return Err(Error::InvalidParams("target weights must be non-negative".into()));
        }
        Ok(KeypointTarget { joint, position, orientation, weight_pos, weight_rot })
    }

    pub fn position(joint: usize, p: Vector3<f64>) -> Self {
        KeypointTarget { joint, position: Some(p), orientation: None, weight_pos: 1.0, weight_rot: 0.0 }
    }

    fn rows(&self) -> usize {
        3 * (self.position.is_some() as usize + self.orientation.is_some() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IKWeights {
    pub w_task: f64,
    pub lambda_smooth: f64,
    pub lambda_prior: f64,
    pub damping: f64,
    pub max_step: f64,
}

impl Default for IKWeights {
    fn default() -> Self {
        IKWeights { w_task: 1.0, lambda_smooth: 1e-2, lambda_prior: 1e-1, damping: 1e-6, max_step: 0.2 }
    }
}

impl IKWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_task > 0.0
            && self.lambda_smooth >= 0.0
            && self.lambda_prior >= 0.0
            && self.damping > 0.0
            && self.max_step > 0.0
            && [self.w_task, self.lambda_smooth, self.lambda_prior, self.damping, self.max_step]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("IK weights out of range: {self:?}")))
        }
    }
}

/// Stacked residual and its Jacobian. Position rows hold `sqrt(w_pos)(p - p*)`;
/// orientation rows hold `sqrt(w_rot) log(R R*ᵀ)`.
pub fn task_jacobian(
    robot: &RobotModel,
    q: &[f64],
    targets: &[KeypointTarget],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = robot.n_joints();
    check_len(n, q.len())?;
    if let Some(t) = targets.iter().find(|t| t.joint >= n) {
        return Err(Error::BadTargetIndex(t.joint));
    }
    let frames = robot.forward_kinematics(&FramePose::identity(), q)?;
    let axes = robot.world_axes(&frames);
    let m: usize = targets.iter().map(KeypointTarget::rows).sum();
    let mut jac = DMatrix::zeros(m, n);
    let mut res = DVector::zeros(m);
    let mut row = 0;
    for t in targets {
        let frame = &frames[t.joint];
        let chain: Vec<usize> = (0..=t.joint).filter(|&j| robot.is_ancestor_or_self(j, t.joint)).collect();
        if let Some(p) = t.position {
            let s = t.weight_pos.sqrt();
            res.fixed_rows_mut::<3>(row).copy_from(&((frame.position - p) * s));
            for &j in &chain {
                let col = axes[j].cross(&(frame.position - frames[j].position)) * s;
                jac.fixed_view_mut::<3, 1>(row, j).copy_from(&col);
            }
            row += 3;
        }
        if let Some(target) = &t.orientation {
            let s = t.weight_rot.sqrt();
            let err = (frame.orientation * target.transpose()).log()?;
            let jl_inv = left_jacobian_inverse(&err);
            res.fixed_rows_mut::<3>(row).copy_from(&(err * s));
            for &j in &chain {
                jac.fixed_view_mut::<3, 1>(row, j).copy_from(&(jl_inv * axes[j] * s));
            }
            row += 3;
        }
    }
    Ok((jac, res))
}

fn clip_step(robot: &RobotModel, q: &[f64], mut dq: DVector<f64>, max_step: f64) -> Vec<f64> {
    for (i, j) in robot.joints().iter().enumerate() {
        let step = dq[i].clamp(-max_step, max_step);
        dq[i] = j.clamp(q[i] + step) - q[i];
    }
    dq.as_slice().to_vec()
}

/// Reference damped least-squares step, `(w JᵀJ + (λs + d) I) Δq = -w Jᵀ r`,
/// clipped like [`hlik_step`].
pub fn damped_least_squares_step(
    robot: &RobotModel,
    q: &[f64],
    jac: &DMatrix<f64>,
    res: &DVector<f64>,
    w: &IKWeights,
) -> Result<Vec<f64>> {
    let n = jac.ncols();
    let a = jac.tr_mul(jac) * w.w_task + DMatrix::identity(n, n) * (w.lambda_smooth + w.damping);
    let b = -(jac.tr_mul(res) * w.w_task);
    let dq = a.cholesky().ok_or(Error::SingularSystem)?.solve(&b);
    Ok(clip_step(robot, q, dq, w.max_step))
}

fn regularized_step(
    robot: &RobotModel,
    q: &[f64],
    jac: &DMatrix<f64>,
    res: &DVector<f64>,
    w: &IKWeights,
    prior: Option<(f64, &[f64])>,
) -> Result<Vec<f64>> {
    let n = jac.ncols();
    let mut a = jac.tr_mul(jac) * w.w_task + DMatrix::identity(n, n) * (w.lambda_smooth + w.damping);
    let mut b = -(jac.tr_mul(res) * w.w_task);
    if let Some((value, grad)) = prior {
        let g = DVector::from_column_slice(grad);
        a += &g * g.transpose() * w.lambda_prior;
        if value != 0.0 {
            b -= &g * (w.lambda_prior * value);
        }
    }
    let dq = a.cholesky().ok_or(Error::SingularSystem)?.solve(&b);
    if dq.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(clip_step(robot, q, dq, w.max_step))
}

/// One HL-IK increment. The field enters only through the directional
/// penalty `λp (gᵀΔq)²` and is not evaluated when `λp = 0`.
pub fn hlik_step(
    robot: &RobotModel,
    field: Option<&dyn DistanceField>,
    q: &[f64],
    targets: &[KeypointTarget],
    w: &IKWeights,
) -> Result<Vec<f64>> {
    w.validate()?;
    let (jac, res) = task_jacobian(robot, q, targets)?;
    let grad = prior_gradient(field, q, w)?;
    regularized_step(robot, q, &jac, &res, w, grad.as_deref().map(|g| (0.0, g)))
}

fn prior_gradient(field: Option<&dyn DistanceField>, q: &[f64], w: &IKWeights) -> Result<Option<Vec<f64>>> {
    if w.lambda_prior == 0.0 {
        return Ok(None);
    }
    let field = field.ok_or_else(|| Error::InvalidParams("lambda_prior > 0 needs a distance field".into()))?;
    Ok(Some(field.value_and_gradient(q)?.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    /// Norm of the weighted task residual at the returned configuration.
    pub task_residual: f64,
    /// Field value at the returned configuration, when a field was supplied.
    pub prior_value: Option<f64>,
    /// `½ w ‖r‖² + ½ λp f²` at the returned configuration.
    pub cost: f64,
    pub iterations: usize,
}

/// Jacobian, residual, prior value and gradient, total cost at one iterate.
type Evaluation = (DMatrix<f64>, DVector<f64>, Option<(f64, Vec<f64>)>, f64);

/// Iterates regularized steps from `q_init`, adding the value-descent term
/// `-λp f g` to the right-hand side, and returns the lowest-cost iterate.
pub fn solve_frame(
    robot: &RobotModel,
    field: Option<&dyn DistanceField>,
    q_init: &[f64],
    targets: &[KeypointTarget],
    w: &IKWeights,
    iters: usize,
) -> Result<(Vec<f64>, FrameReport)> {
    w.validate()?;
    check_len(robot.n_joints(), q_init.len())?;
    if let Some(f) = field {
        check_len(robot.n_joints(), f.n_joints())?;
    }
    let mut q = q_init.to_vec();
    robot.clamp_in_place(&mut q);
    let evaluate = |q: &[f64]| -> Result<Evaluation> {
        let (jac, res) = task_jacobian(robot, q, targets)?;
        let prior = match field {
            Some(f) if w.lambda_prior > 0.0 => Some(f.value_and_gradient(q)?),
            _ => None,
        };
        let f_val = prior.as_ref().map_or(0.0, |p| p.0);
        let cost = 0.5 * w.w_task * res.norm_squared() + 0.5 * w.lambda_prior * f_val * f_val;
        Ok((jac, res, prior, cost))
    };
    let (mut jac, mut res, mut prior, mut cost) = evaluate(&q)?;
    let mut best = (q.clone(), res.norm(), cost);
    let mut iterations = 0;
    while iterations < iters {
        let dq = regularized_step(robot, &q, &jac, &res, w, prior.as_ref().map(|(v, g)| (*v, g.as_slice())))?;
        iterations += 1;
        if dq.iter().all(|&x| x == 0.0) {
            break;
        }
        for (x, d) in q.iter_mut().zip(&dq) {
            *x += d;
        }
        (jac, res, prior, cost) = evaluate(&q)?;
        if cost < best.2 {
            best = (q.clone(), res.norm(), cost);
        }
    }
    let (q_best, task_residual, cost) = best;
    let prior_value = field.map(|f| f.value(&q_best)).transpose()?;
    Ok((q_best, FrameReport { task_residual, prior_value, cost, iterations }))
}

/// Solves frames in order, warm-starting each from the previous solution.
/// Frame 0 starts from `q_start`, or from zero clamped to the limits.
pub fn retarget_trajectory(
    robot: &RobotModel,
    field: Option<&dyn DistanceField>,
    frames: &[Vec<KeypointTarget>],
    w: &IKWeights,
    iters_per_frame: usize,
    q_start: Option<&[f64]>,
) -> Result<Vec<(Vec<f64>, FrameReport)>> {
    if frames.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut q = match q_start {
        Some(q) => q.to_vec(),
        None => vec![0.0; robot.n_joints()],
    };
    let mut out = Vec::with_capacity(frames.len());
    for targets in frames {
        let (next, report) = solve_frame(robot, field, &q, targets, w, iters_per_frame)?;
        q.clone_from(&next);
        out.push((next, report));
    }
    Ok(out)
}

/// Parses keypoint targets, one per line:
///
/// ```text
/// frame,joint_name,px,py,pz,rx,ry,rz,w_pos,w_rot
/// ```
///
/// The position triple and the rotation-vector triple may each be left empty.
/// Missing weights default to 1 for present parts. Frames must be numbered
/// from 0 without gaps; `#` starts a comment line.
pub fn parse_keypoint_targets(robot: &RobotModel, text: &str) -> Result<Vec<Vec<KeypointTarget>>> {
    let mut frames: Vec<Vec<KeypointTarget>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse(format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0].parse().map_err(|e| err(format!("frame index: {e}")))?;
        let joint = robot.joint_index(fields[1]).ok_or_else(|| err(format!("unknown joint {:?}", fields[1])))?;
        let triple = |part: &[&str]| -> Result<Option<Vector3<f64>>> {
            if part.iter().all(|s| s.is_empty()) {
                return Ok(None);
            }
            let v = parse_reals(&part.join(",")).map_err(err)?;
            Ok(Some(Vector3::new(v[0], v[1], v[2])))
        };
        let position = triple(&fields[2..5])?;
        let orientation = triple(&fields[5..8])?.map(|v| Rotation::from_rotation_vector(&v));
        let weight = |s: &str, present: bool| -> Result<f64> {
            if s.is_empty() {
                Ok(if present { 1.0 } else { 0.0 })
            } else {
                s.parse::<f64>().map_err(|e| err(format!("weight: {e}")))
            }
        };
        let w_pos = weight(fields[8], position.is_some())?;
        let w_rot = weight(fields[9], orientation.is_some())?;
        let target = KeypointTarget::new(joint, position, orientation, w_pos, w_rot)?;
        if frame > frames.len() {
            return Err(err(format!("frame {frame} skips frame {}", frames.len())));
        }
        if frame == frames.len() {
            frames.push(Vec::new());
        }
        frames[frame].push(target);
    }
    Ok(frames)
}
