//! Training-set construction: on-manifold, near-manifold and interpolated
//! samples, each labeled with its exact distance to the corpus.
//!
//! Every sample draws from its own random stream keyed by `(seed, index)`,
//! so labeling can run on any number of threads and still produce the same
//! dataset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::PoseCorpus;
use crate::error::{Error, Result};
use crate::robot::RobotModel;

pub const DEFAULT_SIGMAS: [f64; 4] = [0.05, 0.1, 0.25, 0.5];
pub const DEFAULT_MIX: [f64; 3] = [0.2, 0.5, 0.3];
pub const DEFAULT_TRAINING_SET_SIZE: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Source {
    On = 0,
    Near = 1,
    Interp = 2,
}

impl Source {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Source::On),
            1 => Some(Source::Near),
            2 => Some(Source::Interp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::On => "on",
            Source::Near => "near",
            Source::Interp => "interp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub q: Vec<f64>,
    /// Exact L1 distance to the nearest corpus pose.
    pub label: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Half-normal scales for near-manifold perturbations, radians.
    pub sigma_schedule: Vec<f64>,
    /// Weights of on / near / interp samples.
    pub mix: [f64; 3],
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { sigma_schedule: DEFAULT_SIGMAS.to_vec(), mix: DEFAULT_MIX, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_schedule.is_empty() || self.sigma_schedule.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParams("sigma schedule must be non-empty and positive".into()));
        }
        if self.mix.iter().any(|&w| !(w >= 0.0)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("mix {:?} must be non-negative and sum to 1", self.mix)));
        }
        Ok(())
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finalizer; derives independent seeds for sub-samplers.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Corpus rows drawn uniformly with replacement, labeled zero.
pub fn sample_on_manifold(corpus: &PoseCorpus, n: usize, seed: u64) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| {
            let row = stream_rng(seed, i as u64).random_range(0..corpus.len());
            LabeledSample { q: corpus.row(row).to_vec(), label: 0.0, source: Source::On }
        })
        .collect()
}

/// An unlabeled near-manifold candidate and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct NearDraw {
    pub q: Vec<f64>,
    pub base: usize,
    /// Half-normal perturbation length before clamping.
    pub magnitude: f64,
}

/// `clamp(base + r u)` with `u` uniform on the unit sphere and `r ~ |N(0, sigma^2)|`.
pub fn draw_near_candidates(
    corpus: &PoseCorpus,
    robot: &RobotModel,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<NearDraw>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParams(format!("sigma {sigma} must be positive")));
    }
    let dim = corpus.n_joints();
    let magnitude_dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok((0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let base = rng.random_range(0..corpus.len());
            let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x /= norm);
            let magnitude = magnitude_dist.sample(&mut rng).abs();
            let mut q: Vec<f64> = corpus.row(base).iter().zip(&u).map(|(b, d)| b + magnitude * d).collect();
            robot.clamp_in_place(&mut q);
            NearDraw { q, base, magnitude }
        })
        .collect())
}

pub fn sample_near_manifold(
    corpus: &PoseCorpus,
    robot: &RobotModel,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let draws = draw_near_candidates(corpus, robot, n, sigma, seed)?;
    label_all(corpus, draws.into_iter().map(|d| d.q).collect(), Source::Near)
}

/// `q_b + alpha (q_a - q_b)`; convexity of the limit box keeps it feasible.
pub fn interpolate(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| y + alpha * (x - y)).collect()
}

/// Convex mixtures of two distinct corpus rows with `alpha ~ U(0, 1)`.
pub fn sample_interpolated(corpus: &PoseCorpus, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall);
    }
    let candidates = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let a = rng.random_range(0..corpus.len());
            let mut b = rng.random_range(0..corpus.len() - 1);
            if b >= a {
                b += 1;
            }
            let alpha: f64 = rng.random();
            interpolate(corpus.row(a), corpus.row(b), alpha)
        })
        .collect();
    label_all(corpus, candidates, Source::Interp)
}

fn label_all(corpus: &PoseCorpus, candidates: Vec<Vec<f64>>, source: Source) -> Result<Vec<LabeledSample>> {
    let flat: Vec<f64> = candidates.iter().flatten().copied().collect();
    let hits = corpus.nearest_batch(&flat)?;
    Ok(candidates.into_iter().zip(hits).map(|(q, hit)| LabeledSample { q, label: hit.distance, source }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellReport {
    /// Mean of `|eps|^2` for isotropic Gaussian noise.
    pub mean_sq_norm: f64,
    /// Coefficient of variation of `|eps|`.
    pub cv_norm_naive: f64,
    /// Coefficient of variation of the half-normal magnitude `r`.
    pub cv_magnitude_decoupled: f64,
}

/// Contrasts how isotropic Gaussian noise concentrates on a thin shell of
/// radius ~`sigma sqrt(dims)` with the spread of a decoupled half-normal magnitude.
pub fn gaussian_shell_diagnostic(dims: usize, sigma: f64, n: usize, seed: u64) -> Result<ShellReport> {
    if dims == 0 || n < 100 || !(sigma > 0.0) {
        return Err(Error::InvalidParams("need dims >= 1, n >= 100, sigma > 0".into()));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norms = Vec::with_capacity(n);
    let mut sq_sum = 0.0;
    for _ in 0..n {
        let sq: f64 = (0..dims).map(|_| normal.sample(&mut rng).powi(2)).sum();
        sq_sum += sq;
        norms.push(sq.sqrt());
    }
    let magnitudes: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng).abs()).collect();
    Ok(ShellReport {
        mean_sq_norm: sq_sum / n as f64,
        cv_norm_naive: coefficient_of_variation(&norms),
        cv_magnitude_decoupled: coefficient_of_variation(&magnitudes),
    })
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Splits `total` by `weights` with largest-remainder rounding; ties go to
/// the earlier weight.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// The full training set, shuffled with a seed-fixed permutation.
pub fn build_training_set(
    corpus: &PoseCorpus,
    robot: &RobotModel,
    total: usize,
    config: &SamplerConfig,
) -> Result<Vec<LabeledSample>> {
    if total == 0 {
        return Err(Error::InvalidParams("training set size must be at least 1".into()));
    }
    config.validate()?;
    let counts = apportion(total, &config.mix);
    let seed = config.seed;
    let mut out = sample_on_manifold(corpus, counts[0], derive_seed(seed, 1));
    let per_sigma = apportion(counts[1], &vec![1.0; config.sigma_schedule.len()]);
    for (k, (&sigma, &n)) in config.sigma_schedule.iter().zip(&per_sigma).enumerate() {
        out.extend(sample_near_manifold(corpus, robot, n, sigma, derive_seed(seed, 100 + k as u64))?);
    }
    if counts[2] > 0 {
        out.extend(sample_interpolated(corpus, counts[2], derive_seed(seed, 2))?);
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)));
    Ok(out)
}

/// Recomputes labels for a seed-chosen `fraction` of samples; returns the
/// indices whose stored label differs bitwise from the oracle.
pub fn audit_labels(corpus: &PoseCorpus, samples: &[LabeledSample], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = (0..samples.len()).filter(|_| rng.random::<f64>() < fraction).collect();
    let flat: Vec<f64> = picked.iter().flat_map(|&i| samples[i].q.iter().copied()).collect();
    let hits = corpus.nearest_batch(&flat)?;
    Ok(picked
        .into_iter()
        .zip(hits)
        .filter(|&(i, hit)| {
            let expected = if samples[i].source == Source::On { 0.0 } else { hit.distance };
            samples[i].label.to_bits() != expected.to_bits()
        })
        .map(|(i, _)| i)
        .collect())
}
