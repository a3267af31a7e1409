//! Learned unsigned distance fields over robot joint space.

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod ik;
pub mod prior;
pub mod projector;
pub mod robot;
pub mod sampler;
pub mod so3;

pub use corpus::{NearestResult, PoseCorpus};
pub use error::{Error, ErrorClass, Result};
pub use field::{DistanceField, FieldArchitecture, FieldModel, OracleField, TrainConfig};
pub use ik::{IKWeights, KeypointTarget};
pub use prior::{RewardWeights, ScoreParams, TrajectoryFrame};
pub use projector::{ProjectionConfig, ProjectionTrace, Termination};
pub use robot::{Configuration, FramePose, JointSpec, RobotModel};
pub use sampler::{LabeledSample, SamplerConfig, Source};
pub use so3::{AxisAngle, Rotation};
