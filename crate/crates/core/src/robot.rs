//! Kinematic trees of revolute joints.

use std::f64::consts::TAU;
use std::ops::Deref;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::so3::{rodrigues, Rotation};

pub const ROBOT_FORMAT_VERSION: u32 = 1;

const BUNDLED_HUMANOID: &str = include_str!("../assets/humanoid29.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// `None` when the joint hangs directly off the floating base.
    pub parent: Option<usize>,
    pub axis: Vector3<f64>,
    pub origin_translation: Vector3<f64>,
    pub origin_rotation: Rotation,
    pub limit_lo: f64,
    pub limit_hi: f64,
}

impl JointSpec {
    pub fn range(&self) -> f64 {
        self.limit_hi - self.limit_lo
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limit_lo, self.limit_hi)
    }
}

/// An ordered list of joints; every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<JointSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub position: Vector3<f64>,
    pub orientation: Rotation,
}

impl FramePose {
    pub fn identity() -> Self {
        FramePose { position: Vector3::zeros(), orientation: Rotation::identity() }
    }

    pub fn new(position: Vector3<f64>, orientation: Rotation) -> Self {
        FramePose { position, orientation }
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &FramePose) -> FramePose {
        FramePose {
            position: self.position + self.orientation.rotate(&other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> FramePose {
        let rt = self.orientation.transpose();
        FramePose { position: -rt.rotate(&self.position), orientation: rt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    /// Every joint is within its closed limit interval.
    Valid,
    /// Arbitrary query; may leave the limit box.
    Raw,
}

/// A joint-angle vector tagged with whether it was checked against limits.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    q: Vec<f64>,
    validity: Validity,
}

impl Configuration {
    pub fn raw(q: Vec<f64>) -> Self {
        Configuration { q, validity: Validity::Raw }
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.q
    }
}

impl Deref for Configuration {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitViolation {
    pub joint: usize,
    /// Radians outside the interval; always positive.
    pub amount: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RobotDocument {
    format_version: u32,
    name: String,
    joints: Vec<JointDocument>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct JointDocument {
    name: String,
    parent: i64,
    axis: [f64; 3],
    origin_translation: [f64; 3],
    origin_rotation_rpy: [f64; 3],
    limit: [f64; 2],
}

impl RobotModel {
    /// Builds a model, checking topology, axes and limits.
    pub fn new(name: impl Into<String>, joints: Vec<JointSpec>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Topology("robot has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                Some(p) if p == i => return Err(Error::Topology(format!("joint {} is its own parent", j.name))),
                Some(p) if p > i => {
                    return Err(Error::Topology(format!("joint {} references later joint {p} as parent", j.name)))
                }
                _ => {}
            }
            if !(j.axis.norm() - 1.0).abs().le(&1e-9) {
                return Err(Error::Parse(format!("joint {}: axis is not unit length", j.name)));
            }
            if !(j.limit_lo < j.limit_hi) || !(j.range() < TAU) {
                return Err(Error::Limit { joint: j.name.clone(), lo: j.limit_lo, hi: j.limit_hi });
            }
        }
        Ok(RobotModel { name: name.into(), joints })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: RobotDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.format_version != ROBOT_FORMAT_VERSION {
            return Err(Error::FormatVersion { found: doc.format_version, expected: ROBOT_FORMAT_VERSION });
        }
        let joints = doc
            .joints
            .into_iter()
            .map(|j| {
                let parent = match j.parent {
                    -1 => None,
                    p if p >= 0 => Some(p as usize),
                    p => return Err(Error::Topology(format!("joint {}: invalid parent {p}", j.name))),
                };
                let [r, p, y] = j.origin_rotation_rpy;
                Ok(JointSpec {
                    name: j.name,
                    parent,
                    axis: Vector3::from(j.axis),
                    origin_translation: Vector3::from(j.origin_translation),
                    origin_rotation: Rotation::from_rpy(r, p, y),
                    limit_lo: j.limit[0],
                    limit_hi: j.limit[1],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RobotModel::new(doc.name, joints)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        RobotModel::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The 29-joint humanoid description shipped with the crate.
    pub fn bundled_humanoid() -> Self {
        RobotModel::from_toml_str(BUNDLED_HUMANOID).expect("bundled description is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limit_lo).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limit_hi).collect()
    }

    /// True when `ancestor` lies on the path from `joint` to its root (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: usize, joint: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            if c < ancestor {
                return false;
            }
            cur = self.joints[c].parent;
        }
        false
    }

    /// Tags `q` as valid after checking length and limits.
    pub fn configuration(&self, q: Vec<f64>) -> Result<Configuration> {
        check_len(self.n_joints(), q.len())?;
        if let Some(v) = self.validate(&q)?.first() {
            return Err(Error::LimitViolation { row: 0, joint: v.joint });
        }
        Ok(Configuration { q, validity: Validity::Valid })
    }

    /// Projection onto the joint-limit box (closest point under the L1 metric).
    pub fn clamp_to_limits(&self, q: &[f64]) -> Result<Configuration> {
        check_len(self.n_joints(), q.len())?;
        let q = q.iter().zip(&self.joints).map(|(&x, j)| j.clamp(x)).collect();
        Ok(Configuration { q, validity: Validity::Valid })
    }

    pub(crate) fn clamp_in_place(&self, q: &mut [f64]) {
        for (x, j) in q.iter_mut().zip(&self.joints) {
            *x = j.clamp(*x);
        }
    }

    /// Joints outside their closed limit interval.
    pub fn validate(&self, q: &[f64]) -> Result<Vec<LimitViolation>> {
        check_len(self.n_joints(), q.len())?;
        Ok(q.iter()
            .zip(&self.joints)
            .enumerate()
            .filter_map(|(i, (&x, j))| {
                let amount = if x < j.limit_lo {
                    j.limit_lo - x
                } else if x > j.limit_hi {
                    x - j.limit_hi
                } else if x.is_nan() {
                    f64::INFINITY
                } else {
                    return None;
                };
                Some(LimitViolation { joint: i, amount })
            })
            .collect())
    }

    pub fn is_within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.n_joints() && q.iter().zip(&self.joints).all(|(&x, j)| x >= j.limit_lo && x <= j.limit_hi)
    }

    /// World pose of every joint frame.
    ///
    /// Frame `i` is its parent's frame (or `root` for base-attached joints)
    /// composed with the fixed offset, then rotated by `q[i]` about the joint axis.
    pub fn forward_kinematics(&self, root: &FramePose, q: &[f64]) -> Result<Vec<FramePose>> {
        check_len(self.n_joints(), q.len())?;
        let mut frames: Vec<FramePose> = Vec::with_capacity(self.n_joints());
        for (j, &angle) in self.joints.iter().zip(q) {
            let parent = match j.parent {
                Some(p) => frames[p],
                None => *root,
            };
            let orientation = (parent.orientation * j.origin_rotation) * rodrigues(&j.axis, angle);
            let position = parent.position + parent.orientation.rotate(&j.origin_translation);
            frames.push(FramePose { position, orientation });
        }
        Ok(frames)
    }

    /// Joint axis of every frame expressed in the world frame.
    pub fn world_axes(&self, frames: &[FramePose]) -> Vec<Vector3<f64>> {
        self.joints.iter().zip(frames).map(|(j, f)| f.orientation.rotate(&j.axis)).collect()
    }

    /// Serializes the model back into the description format.
    pub fn to_toml_string(&self) -> String {
        let doc = RobotDocument {
            format_version: ROBOT_FORMAT_VERSION,
            name: self.name.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointDocument {
                    name: j.name.clone(),
                    parent: j.parent.map_or(-1, |p| p as i64),
                    axis: j.axis.into(),
                    origin_translation: j.origin_translation.into(),
                    origin_rotation_rpy: rpy_of(&j.origin_rotation),
                    limit: [j.limit_lo, j.limit_hi],
                })
                .collect(),
        };
        toml::to_string(&doc).expect("robot document serializes")
    }
}

fn rpy_of(r: &Rotation) -> [f64; 3] {
    let m = r.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    [roll, pitch, yaw]
}

/// Serial chain of `n` revolute joints about z with unit links along +x.
pub fn planar_chain(n: usize, limit: f64) -> RobotModel {
    let joints = (0..n)
        .map(|i| JointSpec {
            name: format!("j{i}"),
            parent: i.checked_sub(1),
            axis: Vector3::z(),
            origin_translation: if i == 0 { Vector3::zeros() } else { Vector3::x() },
            origin_rotation: Rotation::identity(),
            limit_lo: -limit,
            limit_hi: limit,
        })
        .collect();
    RobotModel::new(format!("planar{n}"), joints).expect("planar chain is valid")
}

/// Serial chain of `n` revolute joints cycling through the z, y and x axes,
/// joined by `link`-metre offsets along +x; limits are `±limit`.
pub fn spatial_chain(n: usize, link: f64, limit: f64) -> RobotModel {
    let axes = [Vector3::z(), Vector3::y(), Vector3::x()];
    let joints = (0..n)
        .map(|i| JointSpec {
            name: format!("s{i}"),
            parent: i.checked_sub(1),
            axis: axes[i % 3],
            origin_translation: if i == 0 { Vector3::zeros() } else { Vector3::x() * link },
            origin_rotation: Rotation::identity(),
            limit_lo: -limit,
            limit_hi: limit,
        })
        .collect();
    RobotModel::new(format!("spatial{n}"), joints).expect("spatial chain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    const SINGLE: &str = r#"
format_version = 1
name = "one"
[[joints]]
name = "j0"
parent = -1
axis = [0.0, 0.0, 1.0]
origin_translation = [0.0, 0.0, 0.0]
origin_rotation_rpy = [0.0, 0.0, 0.0]
limit = [-1.0, 1.0]
"#;

    #[test]
    fn bundled_humanoid_has_29_joints() {
        let robot = RobotModel::bundled_humanoid();
        assert_eq!(robot.n_joints(), 29);
        assert_eq!(robot.joints().iter().filter(|j| j.parent.is_none()).count(), 3);
    }

    #[test]
    fn single_joint_document() {
        let robot = RobotModel::from_toml_str(SINGLE).unwrap();
        assert_eq!(robot.n_joints(), 1);
        assert_eq!(robot.name(), "one");
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let doc = SINGLE.replace("parent = -1", "parent = 0");
        assert!(matches!(RobotModel::from_toml_str(&doc), Err(Error::Topology(_))));
    }

    #[test]
    fn forward_reference_rejected() {
        let doc = SINGLE.replace("parent = -1", "parent = 3");
        assert!(matches!(RobotModel::from_toml_str(&doc), Err(Error::Topology(_))));
    }

    #[test]
    fn inverted_limits_rejected() {
        let doc = SINGLE.replace("limit = [-1.0, 1.0]", "limit = [1.0, 1.0]");
        assert!(matches!(RobotModel::from_toml_str(&doc), Err(Error::Limit { .. })));
    }

    #[test]
    fn missing_field_rejected() {
        let doc = SINGLE.replace("limit = [-1.0, 1.0]", "");
        assert!(matches!(RobotModel::from_toml_str(&doc), Err(Error::Parse(_))));
        assert!(matches!(RobotModel::from_toml_str("name = ["), Err(Error::Parse(_))));
    }

    #[test]
    fn document_round_trip() {
        let robot = RobotModel::bundled_humanoid();
        let again = RobotModel::from_toml_str(&robot.to_toml_string()).unwrap();
        assert_eq!(again.n_joints(), 29);
        for (a, b) in robot.joints().iter().zip(again.joints()) {
            assert_eq!(a.parent, b.parent);
            assert!((a.origin_rotation.matrix() - b.origin_rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn clamp_examples() {
        let robot = planar_chain(3, 1.0);
        let q = [0.2, -0.5, 1.0];
        assert_eq!(&*robot.clamp_to_limits(&q).unwrap(), &q);
        let c = robot.clamp_to_limits(&[1.3, -7.0, 0.0]).unwrap();
        assert_eq!(&*c, &[1.0, -1.0, 0.0]);
        assert_eq!(robot.clamp_to_limits(&c).unwrap(), c);
        assert!(matches!(robot.clamp_to_limits(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn validate_examples() {
        let robot = planar_chain(4, 1.0);
        assert!(robot.validate(&[0.0; 4]).unwrap().is_empty());
        let v = robot.validate(&[0.0, 0.0, 0.0, -1.1]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].joint, 3);
        assert!((v[0].amount - 0.1).abs() < 1e-12);
        assert!(robot.validate(&[1.0, -1.0, 1.0, -1.0]).unwrap().is_empty());
    }

    #[test]
    fn zero_configuration_accumulates_offsets() {
        let robot = RobotModel::bundled_humanoid();
        let frames = robot.forward_kinematics(&FramePose::identity(), &[0.0; 29]).unwrap();
        for (i, j) in robot.joints().iter().enumerate() {
            let parent = j.parent.map_or(FramePose::identity(), |p| frames[p]);
            let expected = parent.compose(&FramePose::new(j.origin_translation, j.origin_rotation));
            assert!((frames[i].position - expected.position).norm() < 1e-15);
            assert!((frames[i].orientation.matrix() - expected.orientation.matrix()).norm() < 1e-15);
        }
    }

    #[test]
    fn planar_two_link() {
        // Unit links along +x; add a tip frame so the second link's end is visible.
        let mut joints = planar_chain(2, 3.0).joints().to_vec();
        joints.push(JointSpec {
            name: "tip".into(),
            parent: Some(1),
            axis: Vector3::z(),
            origin_translation: Vector3::x(),
            origin_rotation: Rotation::identity(),
            limit_lo: -0.1,
            limit_hi: 0.1,
        });
        let robot = RobotModel::new("arm", joints).unwrap();
        let frames = robot.forward_kinematics(&FramePose::identity(), &[FRAC_PI_2, 0.0, 0.0]).unwrap();
        // Brute-force planar trig: p = (cos a + cos(a+b), sin a + sin(a+b)).
        let (a, b) = (FRAC_PI_2, 0.0f64);
        let expected = Vector3::new(a.cos() + (a + b).cos(), a.sin() + (a + b).sin(), 0.0);
        assert!((frames[2].position - expected).norm() < 1e-15);
        assert!((frames[2].position - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn leaf_rotation_leaves_ancestors() {
        let robot = RobotModel::bundled_humanoid();
        let q = vec![0.1; 29];
        let mut q2 = q.clone();
        q2[21] += 0.4;
        let a = robot.forward_kinematics(&FramePose::identity(), &q).unwrap();
        let b = robot.forward_kinematics(&FramePose::identity(), &q2).unwrap();
        for i in 0..29 {
            if i != 21 {
                assert_eq!(a[i], b[i]);
            }
        }
        assert_ne!(a[21].orientation, b[21].orientation);
    }

    #[test]
    fn ancestry() {
        let robot = RobotModel::bundled_humanoid();
        assert!(robot.is_ancestor_or_self(12, 21));
        assert!(robot.is_ancestor_or_self(21, 21));
        assert!(!robot.is_ancestor_or_self(0, 21));
        assert!(!robot.is_ancestor_or_self(21, 12));
    }

    #[test]
    fn frame_pose_inverse() {
        let f = FramePose::new(Vector3::new(1.0, -2.0, 0.5), Rotation::from_rpy(0.3, -0.2, 1.1));
        let id = f.compose(&f.inverse());
        assert!(id.position.norm() < 1e-15);
        assert!((id.orientation.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-15);
    }
}
