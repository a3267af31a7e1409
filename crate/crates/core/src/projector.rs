//! Projection of configurations onto the zero-level set of a distance field.
//!
//! Each update moves against the normalized gradient by `step · f(q)`, so the
//! step shrinks as the field approaches zero, then clamps to the joint limits.
//! A candidate that increases the field is rejected and the step is halved.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::eval::median;
use crate::field::DistanceField;
use crate::robot::RobotModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub step_size: f64,
    /// Cap on field evaluations after the start, accepted or not.
    pub max_iters: usize,
    pub stop_distance: f64,
    pub grad_floor: f64,
    /// Step multiplier applied after a rejected candidate.
    pub backtrack: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { step_size: 1.0, max_iters: 100, stop_distance: 0.05, grad_floor: 1e-8, backtrack: 0.5 }
    }
}

impl ProjectionConfig {
    /// Defaults for an exact corpus field, whose zero set is attained.
    pub fn for_oracle() -> Self {
        ProjectionConfig { stop_distance: 1e-9, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.max_iters > 0
            && self.stop_distance > 0.0
            && self.grad_floor > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("projection configuration out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    FlatGradient,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::FlatGradient => "flat_gradient",
        }
    }
}

/// Accepted iterates with their field values; rejected candidates are not recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTrace {
    pub iterates: Vec<Vec<f64>>,
    pub field_values: Vec<f64>,
    pub terminated_by: Termination,
    /// Field evaluations after the start, including rejected candidates.
    pub evaluations: usize,
}

impl ProjectionTrace {
    pub fn start(&self) -> &[f64] {
        &self.iterates[0]
    }

    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("a trace holds at least the start")
    }

    pub fn initial_value(&self) -> f64 {
        self.field_values[0]
    }

    pub fn final_value(&self) -> f64 {
        *self.field_values.last().expect("a trace holds at least the start")
    }

    /// `iteration,f,q_0,...` per accepted iterate, floats in round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (q, f)) in self.iterates.iter().zip(&self.field_values).enumerate() {
            write!(out, "{i},{f:?}").expect("writing to a string");
            for x in q {
                write!(out, ",{x:?}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }
}

/// Projects one start. The start is clamped to the limits before the first
/// evaluation, so every recorded iterate is feasible.
pub fn project_pose<F: DistanceField + ?Sized>(
    field: &F,
    robot: &RobotModel,
    q0: &[f64],
    cfg: &ProjectionConfig,
) -> Result<ProjectionTrace> {
    check_len(robot.n_joints(), q0.len())?;
    check_len(field.n_joints(), q0.len())?;
    let mut q = q0.to_vec();
    robot.clamp_in_place(&mut q);
    let (mut f, mut g) = field.value_and_gradient(&q)?;
    let mut iterates = vec![q.clone()];
    let mut field_values = vec![f];
    let mut step = cfg.step_size;
    let mut evaluations = 0;
    let terminated_by = loop {
        if f < cfg.stop_distance {
            break Termination::Converged;
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < cfg.grad_floor {
            break Termination::FlatGradient;
        }
        if evaluations >= cfg.max_iters {
            break Termination::MaxIters;
        }
        let scale = step * f / norm;
        let mut candidate: Vec<f64> = q.iter().zip(&g).map(|(x, d)| x - scale * d).collect();
        robot.clamp_in_place(&mut candidate);
        let (fc, gc) = field.value_and_gradient(&candidate)?;
        evaluations += 1;
        if !fc.is_finite() {
            return Err(Error::NonFiniteParameters);
        }
        if fc > f {
            step *= cfg.backtrack;
            continue;
        }
        q = candidate;
        f = fc;
        g = gc;
        iterates.push(q.clone());
        field_values.push(f);
    };
    Ok(ProjectionTrace { iterates, field_values, terminated_by, evaluations })
}

/// Projects every start in parallel; output order follows `starts`.
pub fn denoise_batch<F: DistanceField + ?Sized>(
    field: &F,
    robot: &RobotModel,
    starts: &[Vec<f64>],
    cfg: &ProjectionConfig,
) -> Result<Vec<ProjectionTrace>> {
    cfg.validate()?;
    starts.par_iter().map(|q| project_pose(field, robot, q, cfg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSummary {
    pub starts: usize,
    pub median_initial: f64,
    pub median_final: f64,
    /// Median over starts of `(initial - final) / initial`; zero-distance starts count as 1.
    pub median_reduction: f64,
    /// Fraction of starts whose final value does not exceed the initial one.
    pub non_increasing_fraction: f64,
}

/// Summarizes paired initial and final distances, typically measured by an
/// exact field independent of the one that drove the projection.
pub fn summarize_denoising(initial: &[f64], final_: &[f64]) -> Result<DenoiseSummary> {
    check_len(initial.len(), final_.len())?;
    if initial.is_empty() {
        return Err(Error::InvalidParams("no starts to summarize".into()));
    }
    let reductions: Vec<f64> =
        initial.iter().zip(final_).map(|(&a, &b)| if a > 0.0 { (a - b) / a } else { 1.0 }).collect();
    let non_increasing = initial.iter().zip(final_).filter(|(a, b)| b <= a).count();
    Ok(DenoiseSummary {
        starts: initial.len(),
        median_initial: median(initial),
        median_final: median(final_),
        median_reduction: median(&reductions),
        non_increasing_fraction: non_increasing as f64 / initial.len() as f64,
    })
}
