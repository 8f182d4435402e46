//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use ccgen::baselines::{CompanionConfig, Item2vecConfig, PairScorerConfig, DEFAULT_NEGATIVES};
use ccgen::dataset::BuildParams;
use ccgen::explain::TeacherEndpoint;
use ccgen::listlm::TrainConfig;
use ccgen::synth::SyntheticWorldSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diag::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub concepts: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub behavior: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// Lowercase tokens before word-vector lookup.
    pub lowercase: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub knn_k: usize,
    pub negatives: usize,
    pub list_size: usize,
    pub pair: PairScorerConfig,
    pub item2vec: Item2vecConfig,
    pub companion: CompanionConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            knn_k: 5,
            negatives: DEFAULT_NEGATIVES,
            list_size: 5,
            pair: PairScorerConfig::default(),
            item2vec: Item2vecConfig::default(),
            companion: CompanionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Cache key; keep distinct per teacher model.
    pub id: String,
    #[serde(flatten)]
    pub endpoint: TeacherEndpoint,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            id: "teacher".into(),
            endpoint: TeacherEndpoint::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub split: String,
    pub case_insensitive: bool,
    pub no_repeat_concept: bool,
    /// Frequency bucket edges for `report --buckets`.
    pub buckets: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            split: "test".into(),
            case_insensitive: false,
            no_repeat_concept: false,
            buckets: vec![50, 100, 200],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SyntheticWorldSpec,
    pub dataset: BuildParams,
    pub model: TrainConfig,
    pub baselines: BaselineConfig,
    pub teacher: TeacherConfig,
    pub eval: EvalConfig,
    pub embed: EmbedConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {}", path.display(), e.message())))
    }

    /// Copies the run seed into every section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        let s = self.seed;
        self.synth.seed = s;
        self.dataset.seed = s;
        self.model.seed = s;
        self.baselines.pair.seed = s;
        self.baselines.item2vec.seed = s;
        self.baselines.companion.seed = s;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(|e| CliError::config("synth", e.to_string()))?;
        self.model.validate().map_err(|e| CliError::config("model", e.to_string()))?;
        self.teacher.endpoint.validate().map_err(|e| CliError::config("teacher", e.to_string()))?;
        let d = &self.dataset;
        if d.k_collect < ccgen::dataset::TARGET_SIZE {
            return Err(CliError::config(
                "dataset.k_collect",
                format!("must be at least {}", ccgen::dataset::TARGET_SIZE),
            ));
        }
        if d.max_tokens == 0 {
            return Err(CliError::config("dataset.max_tokens", "must be positive"));
        }
        let r = d.ratios;
        if (r.train + r.dev + r.test - 1.0).abs() > 1e-6 || r.train < 0.0 || r.dev < 0.0 || r.test < 0.0 {
            return Err(CliError::config("dataset.ratios", "must be non-negative and sum to 1"));
        }
        let b = &self.baselines;
        for (field, v) in [
            ("baselines.knn_k", b.knn_k),
            ("baselines.list_size", b.list_size),
            ("baselines.negatives", b.negatives),
        ] {
            if v == 0 {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        for (field, v) in [
            ("baselines.pair.lr", b.pair.lr),
            ("baselines.item2vec.lr", b.item2vec.lr),
            ("baselines.companion.lr", b.companion.lr),
            ("baselines.companion.margin", b.companion.margin),
        ] {
            if !(v > 0.0) {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        if self.eval.k == 0 {
            return Err(CliError::config("eval.k", "must be positive"));
        }
        if !["train", "dev", "test"].contains(&self.eval.split.as_str()) {
            return Err(CliError::config("eval.split", "must be train, dev or test"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except file paths, so
    /// the hash identifies the experiment rather than where it ran.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("paths");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn case_mode(&self) -> ccgen::concept::CaseMode {
        if self.eval.case_insensitive {
            ccgen::concept::CaseMode::Insensitive
        } else {
            ccgen::concept::CaseMode::Sensitive
        }
    }
}

/// A required input: the flag wins over the config file; the file must exist.
pub fn input_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, field: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::config(field, "no path given (flag or config)"))?;
    if !path.exists() {
        return Err(CliError::config(field, format!("{} does not exist", path.display())));
    }
    Ok(path)
}
