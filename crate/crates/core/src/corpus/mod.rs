//! The positive pose set and its exact nearest-neighbour oracle.

mod index;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use index::{NearestIndex, NearestResult};
pub use io::{load_corpus, poses_from_text, poses_to_text, read_corpus, save_corpus, write_corpus, CorpusFile};

use crate::error::{check_len, Error, Result};
use crate::robot::RobotModel;

/// Fraction of each joint range covered by synthetic corpora.
pub const SYNTHETIC_SPAN: f64 = 0.6;
pub const DEFAULT_LATENT_DIM: usize = 4;
pub const DEFAULT_CORPUS_SIZE: usize = 20_000;
pub const DEFAULT_FILTER_FOLDS: usize = 5;
pub const DEFAULT_FILTER_QUANTILE: f64 = 0.99;

/// Sum of per-joint geodesic distances, which for revolute joints is the L1
/// distance between angle vectors. Summed sequentially from joint 0.
pub fn pose_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(l1(a, b))
}

#[inline]
pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs();
    }
    acc
}

/// Immutable set of on-manifold poses for one robot.
#[derive(Debug, Clone)]
pub struct PoseCorpus {
    robot_name: String,
    index: NearestIndex,
}

impl PoseCorpus {
    /// Builds a corpus from row-major poses, rejecting rows outside the limits.
    pub fn build(robot: &RobotModel, poses: Vec<f64>) -> Result<Self> {
        let dim = robot.n_joints();
        if poses.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !poses.len().is_multiple_of(dim) {
            return Err(Error::dims(dim, poses.len() % dim));
        }
        for (row, q) in poses.chunks_exact(dim).enumerate() {
            if let Some(v) = robot.validate(q)?.first() {
                return Err(Error::LimitViolation { row, joint: v.joint });
            }
        }
        Ok(PoseCorpus { robot_name: robot.name().to_owned(), index: NearestIndex::new(poses, dim) })
    }

    /// Builds without a robot at hand (e.g. when reading a corpus file).
    /// Limits are not checked.
    pub(crate) fn from_parts(robot_name: String, poses: Vec<f64>, dim: usize) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(PoseCorpus { robot_name, index: NearestIndex::new(poses, dim) })
    }

    /// Ties the corpus to `robot`, checking name, width and limits.
    pub fn check_robot(&self, robot: &RobotModel) -> Result<()> {
        if robot.name() != self.robot_name || robot.n_joints() != self.n_joints() {
            return Err(Error::RobotMismatch(format!(
                "corpus is for {} ({} joints), robot is {} ({} joints)",
                self.robot_name,
                self.n_joints(),
                robot.name(),
                robot.n_joints()
            )));
        }
        for (row, q) in self.rows().enumerate() {
            if let Some(v) = robot.validate(q)?.first() {
                return Err(Error::LimitViolation { row, joint: v.joint });
            }
        }
        Ok(())
    }

    pub fn robot_name(&self) -> &str {
        &self.robot_name
    }

    pub fn n_joints(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.len() == 0
    }

    pub fn poses(&self) -> &[f64] {
        self.index.data()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.index.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.index.data().chunks_exact(self.n_joints())
    }

    pub fn nearest(&self, q: &[f64]) -> Result<NearestResult> {
        check_len(self.n_joints(), q.len())?;
        Ok(self.index.nearest(q))
    }

    /// Nearest neighbours of row-major queries; output order follows input.
    pub fn nearest_batch(&self, queries: &[f64]) -> Result<Vec<NearestResult>> {
        self.index.nearest_batch(queries)
    }
}

/// Desk-scale stand-in for a retargeted motion corpus.
///
/// Poses are `clamp(center + W * smooth(z))` with `z ~ U([-1, 1]^latent_dim)`,
/// a seed-fixed Gaussian `W` whose rows are scaled so each joint spans
/// [`SYNTHETIC_SPAN`] of its range, and `smooth` an odd tanh squashing onto
/// `[-1, 1]`. The image is a `latent_dim`-dimensional slab through the middle
/// of the limit box.
pub fn generate_synthetic_corpus(robot: &RobotModel, latent_dim: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    if latent_dim == 0 || count == 0 {
        return Err(Error::InvalidParams("latent_dim and count must be at least 1".into()));
    }
    let dim = robot.n_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dim * latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut center = Vec::with_capacity(dim);
    for (i, joint) in robot.joints().iter().enumerate() {
        let row = &mut w[i * latent_dim..(i + 1) * latent_dim];
        let norm: f64 = row.iter().map(|x| x.abs()).sum();
        let half_span = 0.5 * SYNTHETIC_SPAN * joint.range();
        row.iter_mut().for_each(|x| *x *= half_span / norm);
        center.push(0.5 * (joint.limit_lo + joint.limit_hi));
    }
    let squash_norm = SQUASH_GAIN.tanh();
    let mut poses = Vec::with_capacity(dim * count);
    let mut s = vec![0.0; latent_dim];
    for _ in 0..count {
        for sk in s.iter_mut() {
            let z: f64 = rng.random_range(-1.0..=1.0);
            *sk = (SQUASH_GAIN * z).tanh() / squash_norm;
        }
        for (i, joint) in robot.joints().iter().enumerate() {
            let row = &w[i * latent_dim..(i + 1) * latent_dim];
            let offset: f64 = row.iter().zip(&s).map(|(a, b)| a * b).sum();
            poses.push(joint.clamp(center[i] + offset));
        }
    }
    Ok(poses)
}

const SQUASH_GAIN: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Surviving rows, row-major, in original order.
    pub kept: Vec<f64>,
    pub rejected: Vec<usize>,
    /// Cross-fold nearest distance of every input row.
    pub cross_distances: Vec<f64>,
    pub threshold: f64,
}

/// Cross-validation filter for candidate positives.
///
/// Rows are dealt into `folds` groups after a seed-fixed shuffle. Each row's
/// distance to the nearest row of the *other* folds is computed, and rows
/// whose distance exceeds the nearest-rank `quantile` of all such distances
/// are rejected.
pub fn filter_positives(poses: &[f64], dim: usize, folds: usize, quantile: f64, seed: u64) -> Result<FilterOutcome> {
    if dim == 0 || !poses.len().is_multiple_of(dim) {
        return Err(Error::dims(dim, poses.len()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidParams(format!("quantile {quantile} outside (0, 1)")));
    }
    let n = poses.len() / dim;
    if folds < 2 || n < 2 * folds {
        return Err(Error::TooFewRows(format!("{n} rows cannot be split into {folds} folds of two or more")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut fold_of = vec![0usize; n];
    for (slot, &row) in order.iter().enumerate() {
        fold_of[row] = slot % folds;
    }

    let mut cross_distances = vec![0.0; n];
    for fold in 0..folds {
        let (inside, outside): (Vec<usize>, Vec<usize>) = (0..n).partition(|&r| fold_of[r] == fold);
        let reference: Vec<f64> = outside.iter().flat_map(|&r| poses[r * dim..(r + 1) * dim].iter().copied()).collect();
        let queries: Vec<f64> = inside.iter().flat_map(|&r| poses[r * dim..(r + 1) * dim].iter().copied()).collect();
        let index = NearestIndex::new(reference, dim);
        for (&row, hit) in inside.iter().zip(index.nearest_batch(&queries)?) {
            cross_distances[row] = hit.distance;
        }
    }

    let mut sorted = cross_distances.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    let threshold = sorted[rank - 1];
    let mut kept = Vec::with_capacity(poses.len());
    let mut rejected = Vec::new();
    for (row, &d) in cross_distances.iter().enumerate() {
        if d > threshold {
            rejected.push(row);
        } else {
            kept.extend_from_slice(&poses[row * dim..(row + 1) * dim]);
        }
    }
    Ok(FilterOutcome { kept, rejected, cross_distances, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::planar_chain;
    use proptest::prelude::*;

    #[test]
    fn pose_distance_examples() {
        let a = vec![0.1; 29];
        assert_eq!(pose_distance(&a, &a).unwrap(), 0.0);
        let d = pose_distance(&a, &[0.0; 29]).unwrap();
        assert!((d - 2.9).abs() < 1e-12);
        assert!(pose_distance(&a, &[0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn pose_distance_is_a_metric(
            a in prop::collection::vec(-3.0..3.0f64, 8),
            b in prop::collection::vec(-3.0..3.0f64, 8),
            c in prop::collection::vec(-3.0..3.0f64, 8),
        ) {
            let ab = pose_distance(&a, &b).unwrap();
            let bc = pose_distance(&b, &c).unwrap();
            let ac = pose_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, pose_distance(&b, &a).unwrap());
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn build_examples() {
        let robot = planar_chain(3, 1.0);
        let c = PoseCorpus::build(&robot, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c.len(), 1);
        assert!(matches!(PoseCorpus::build(&robot, vec![]), Err(Error::EmptyCorpus)));
        let err = PoseCorpus::build(&robot, vec![0.0, 0.0, 0.0, 0.0, 1.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::LimitViolation { row: 1, joint: 1 }));
    }

    #[test]
    fn nearest_prefers_closer_row() {
        let robot = planar_chain(3, 2.0);
        let c = PoseCorpus::build(&robot, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let hit = c.nearest(&[0.4, 0.0, 0.0]).unwrap();
        assert_eq!(hit.index, 0);
        assert!((hit.distance - 0.4).abs() < 1e-15);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_valid() {
        let robot = RobotModel::bundled_humanoid();
        let a = generate_synthetic_corpus(&robot, 4, 500, 11).unwrap();
        let b = generate_synthetic_corpus(&robot, 4, 500, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_corpus(&robot, 4, 500, 12).unwrap());
        for q in a.chunks_exact(29) {
            assert!(robot.validate(q).unwrap().is_empty());
        }
        assert!(generate_synthetic_corpus(&robot, 0, 10, 1).is_err());
    }

    #[test]
    fn synthetic_corpus_has_latent_rank() {
        let robot = RobotModel::bundled_humanoid();
        let n = 10_000;
        let poses = generate_synthetic_corpus(&robot, 4, n, 3).unwrap();
        let mut m = nalgebra::DMatrix::from_row_slice(n, 29, &poses);
        let mean = m.row_mean();
        for mut row in m.row_iter_mut() {
            row -= &mean;
        }
        let sv = m.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[3] > 1e-3 * sv[0]);
        assert!(sv[4] < 1e-6 * sv[0], "5th singular value {} vs {}", sv[4], sv[0]);
    }

    #[test]
    fn filter_rejects_outlier() {
        // Tight cluster on a 4-d grid plus one far point.
        let dim = 4;
        let mut poses = Vec::new();
        for i in 0..200 {
            let x = (i % 10) as f64 * 0.01;
            let y = (i / 10) as f64 * 0.01;
            poses.extend_from_slice(&[x, y, 0.0, 0.0]);
        }
        poses.extend_from_slice(&[2.0, 2.0, 2.0, 2.0]);
        let out = filter_positives(&poses, dim, 5, 0.95, 9).unwrap();
        assert!(out.rejected.contains(&200));
        let mut sorted = out.cross_distances.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(out.cross_distances[200] >= 10.0 * median);
        assert_eq!(out.kept.len() / dim, 201 - out.rejected.len());
    }

    #[test]
    fn filter_homogeneous_keeps_almost_all() {
        let robot = RobotModel::bundled_humanoid();
        let poses = generate_synthetic_corpus(&robot, 4, 1000, 5).unwrap();
        let out = filter_positives(&poses, 29, 5, 0.99, 1).unwrap();
        assert!(out.rejected.len() <= 10, "{} rejected", out.rejected.len());
    }

    #[test]
    fn filter_needs_two_folds() {
        assert!(matches!(filter_positives(&[0.0; 40], 4, 1, 0.9, 0), Err(Error::TooFewRows(_))));
        assert!(matches!(filter_positives(&[0.0; 12], 4, 2, 0.9, 0), Err(Error::TooFewRows(_))));
    }
}
