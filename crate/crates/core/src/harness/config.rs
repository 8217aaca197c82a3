use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::builder::BuildConfig;
use crate::detector::DetectorConfig;
use crate::encoders::{FeatureDirectory, FeatureProvider, FeatureShape, SyntheticFeatures};
use crate::error::{CoreError, Result};
use crate::harness::answers::Task;
use crate::harness::metrics::Metric;
use crate::msan::MsanConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AliasPaths {
    pub subject: Option<PathBuf>,
    pub relation: Option<PathBuf>,
    pub object: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// `synthetic` or `files`.
    pub backend: String,
    pub dir: Option<PathBuf>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            backend: "synthetic".into(),
            dir: None,
            channels: 2048,
            height: 14,
            width: 14,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub annotations: Option<PathBuf>,
    pub aliases: AliasPaths,
    pub vqa_train: Option<PathBuf>,
    pub vqa_val: Option<PathBuf>,
    pub vqa_test: Option<PathBuf>,
    pub features: FeatureConfig,
    pub build: BuildConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub answer_vocab_size: usize,
    pub question_vocab_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            answer_vocab_size: 2000,
            question_vocab_size: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub task: Task,
    pub metric: Metric,
    pub ks: Vec<usize>,
    pub case_study_limit: usize,
    pub case_study_facts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: Task::OpenEnded,
            metric: Metric::VqaVote,
            ks: vec![1, 5, 10],
            case_study_limit: 20,
            case_study_facts: 10,
        }
    }
}

/// Run configuration: `{seed, data, detector, msan, train, eval}`. Paths
/// are absolute or relative to the run root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub detector: DetectorConfig,
    pub msan: MsanConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::Config(format!("{context}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn feature_shape(&self) -> Result<FeatureShape> {
        let f = &self.data.features;
        FeatureShape::new(f.channels, f.height, f.width)
    }

    pub fn feature_provider(&self, root: &Path) -> Result<Box<dyn FeatureProvider>> {
        let shape = self.feature_shape()?;
        match self.data.features.backend.as_str() {
            "synthetic" => Ok(Box::new(SyntheticFeatures::new(shape))),
            "files" => {
                let dir = self
                    .data
                    .features
                    .dir
                    .as_ref()
                    .ok_or_else(|| CoreError::Config("features backend `files` needs data.features.dir".into()))?;
                Ok(Box::new(FeatureDirectory::new(require_path(root, dir)?, shape)))
            }
            other => Err(CoreError::Config(format!("unknown feature backend `{other}`"))),
        }
    }
}

pub fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

/// Resolves `path` against `root` and checks that it exists.
pub fn require_path(root: &Path, path: &Path) -> Result<PathBuf> {
    let p = resolve(root, path);
    if p.exists() {
        Ok(p)
    } else {
        Err(CoreError::Config(format!("input path does not exist: {}", p.display())))
    }
}

/// Like [`require_path`] for an optional config entry named `key`.
pub fn require_entry(root: &Path, path: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| CoreError::Config(format!("config is missing `{key}`")))?;
    require_path(root, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&serde_json::to_string(&c).unwrap(), "t").unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::parse(r#"{"seed": 4, "eval": {"task": "multi_choice"}}"#, "t").unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.eval.task, Task::MultiChoice);
        assert_eq!(partial.eval.ks, vec![1, 5, 10]);
    }

    #[test]
    fn bad_config_is_a_config_error() {
        assert!(RunConfig::parse("{\"seed\": \"x\"}", "t").unwrap_err().is_config());
        assert!(require_path(Path::new("/nonexistent-root"), Path::new("a.jsonl"))
            .unwrap_err()
            .to_string()
            .contains("/nonexistent-root/a.jsonl"));
    }
}
