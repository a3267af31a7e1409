//! Run configuration: one TOML document plus `--set key=value` overrides.
//!
//! Relative `robot_path` values resolve against the directory of the config
//! file; every other relative path resolves against `out_dir`.

use std::path::{Path, PathBuf};

use posefield::field::{FieldArchitecture, TrainConfig};
use posefield::{IKWeights, ProjectionConfig, SamplerConfig, ScoreParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory searched for `config.toml`
/// when `--config` is absent.
pub const CONFIG_DIR_ENV: &str = "POSEFIELD_CONFIG_DIR";
pub const CONFIG_FILE_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every stage seed by `seed + stage offset`.
    pub seed: Option<u64>,
    /// Robot description; the bundled humanoid when absent.
    pub robot_path: Option<PathBuf>,
    pub corpus_path: PathBuf,
    pub dataset_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub out_dir: PathBuf,
    /// Labeling and batch-projection threads; 0 uses every core.
    pub workers: usize,
    pub corpus: CorpusBlock,
    pub label: LabelBlock,
    pub model: ModelBlock,
    pub train: TrainConfig,
    pub eval: EvalBlock,
    pub score: ScoreBlock,
    pub denoise: DenoiseBlock,
    pub ik: IkBlock,
    pub diagnose: DiagnoseBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            robot_path: None,
            corpus_path: "corpus.pdfc".into(),
            dataset_path: "dataset.pdfl".into(),
            checkpoint_path: "field.json".into(),
            out_dir: ".".into(),
            workers: 0,
            corpus: CorpusBlock::default(),
            label: LabelBlock::default(),
            model: ModelBlock::default(),
            train: TrainConfig::default(),
            eval: EvalBlock::default(),
            score: ScoreBlock::default(),
            denoise: DenoiseBlock::default(),
            ik: IkBlock::default(),
            diagnose: DiagnoseBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusBlock {
    pub latent_dim: usize,
    pub count: usize,
    pub seed: u64,
    /// Drop cross-validation outliers after generation.
    pub filter: bool,
    pub filter_folds: usize,
    pub filter_quantile: f64,
}

impl Default for CorpusBlock {
    fn default() -> Self {
        CorpusBlock {
            latent_dim: posefield::corpus::DEFAULT_LATENT_DIM,
            count: posefield::corpus::DEFAULT_CORPUS_SIZE,
            seed: 0,
            filter: false,
            filter_folds: posefield::corpus::DEFAULT_FILTER_FOLDS,
            filter_quantile: posefield::corpus::DEFAULT_FILTER_QUANTILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelBlock {
    pub total: usize,
    /// Re-verify a fraction of the labels against the exact oracle.
    pub audit: bool,
    pub audit_fraction: f64,
    pub sampler: SamplerConfig,
}

impl Default for LabelBlock {
    fn default() -> Self {
        LabelBlock {
            total: posefield::sampler::DEFAULT_TRAINING_SET_SIZE,
            audit: false,
            audit_fraction: 0.01,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub seed: u64,
    pub arch: FieldArchitecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    /// Size of the freshly sampled held-out set.
    pub total: usize,
    pub seed: u64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock { total: 20_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreBlock {
    /// Text pose file to score.
    pub poses: Option<PathBuf>,
    /// Reference trajectory; when given, `d_good` is computed from it.
    pub reference: Option<PathBuf>,
    pub params: ScoreParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldChoice {
    #[default]
    Learned,
    Oracle,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseBlock {
    pub field: FieldChoice,
    /// Text pose file of starts; uniform random starts when absent.
    pub poses: Option<PathBuf>,
    pub starts: usize,
    pub seed: u64,
    pub projection: ProjectionConfig,
}

impl Default for DenoiseBlock {
    fn default() -> Self {
        DenoiseBlock {
            field: FieldChoice::Learned,
            poses: None,
            starts: 100,
            seed: 2,
            projection: ProjectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkBlock {
    pub field: FieldChoice,
    /// Keypoint target file.
    pub targets: Option<PathBuf>,
    pub iters: usize,
    pub weights: IKWeights,
}

impl Default for IkBlock {
    fn default() -> Self {
        IkBlock { field: FieldChoice::Learned, targets: None, iters: 50, weights: IKWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseBlock {
    pub dims: usize,
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for DiagnoseBlock {
    fn default() -> Self {
        DiagnoseBlock { dims: 29, sigma: 0.1, n: 100_000, seed: 3 }
    }
}

/// A configuration together with the directory its relative robot path
/// resolves against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn robot_path(&self) -> Option<PathBuf> {
        self.config.robot_path.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Resolves an output or intermediate path against `out_dir`.
    pub fn out(&self, p: impl AsRef<Path>) -> PathBuf {
        self.config.out_dir.join(p)
    }
}

/// Locates the config file: an explicit path (file or directory), else the
/// directory named by [`CONFIG_DIR_ENV`], else built-in defaults.
pub fn locate(explicit: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
    let candidate = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => return Ok(None),
        },
    };
    let file = if candidate.is_dir() { candidate.join(CONFIG_FILE_NAME) } else { candidate };
    if !file.is_file() {
        return Err(CliError::Io(format!("config file {} not found", file.display())));
    }
    Ok(Some(file))
}

/// Parses the document, applies `key=value` overrides in order, then
/// deserializes and applies the top-level seed.
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Loaded, CliError> {
    let (mut table, base_dir) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, dir)
        }
        None => (toml::Table::new(), PathBuf::from(".")),
    };
    for (key, value) in overrides {
        set_dotted(&mut table, key, parse_value(value))?;
    }
    let mut config: RunConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if let Some(s) = config.seed {
        config.corpus.seed = s;
        config.label.sampler.seed = s.wrapping_add(1);
        config.model.seed = s.wrapping_add(2);
        config.train.seed = s.wrapping_add(3);
        config.eval.seed = s.wrapping_add(4);
        config.denoise.seed = s.wrapping_add(5);
        config.diagnose.seed = s.wrapping_add(6);
    }
    Ok(Loaded { config, base_dir })
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last =
        parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("{key}: {part} is not a table")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| format!("expected key=value, got {raw:?}"))
}
