use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use somo_core::config::ModelConfig;
use somo_core::motion::SceneSpec;
use somo_core::training::TrainConfig;
use somo_core::SomoError;

/// Everything a command can be configured with. Command-line flags
/// override the matching entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneSpec,
    pub paths: Paths,
    pub gen: GenOptions,
    pub predict: PredictOptions,
    pub eval: EvalOptions,
    pub gradcheck: GradcheckOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of scene files used for training.
    pub data_dir: Option<PathBuf>,
    /// Where training writes checkpoints; defaults to `<out>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenOptions {
    pub count: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { count: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictOptions {
    pub checkpoint: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub horizon: usize,
    /// First observed frame; by default the last `observed_frames` frames
    /// of the scene are used.
    pub start: Option<usize>,
    /// Output scene file; defaults to `<out>/prediction.json`.
    pub output: Option<PathBuf>,
    pub attention: Option<PathBuf>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            checkpoint: None,
            scene: None,
            horizon: 25,
            start: None,
            output: None,
            attention: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub pred: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Frame of the truth scene aligned with the first predicted frame.
    pub truth_offset: usize,
    /// Reporting horizons in seconds; 0.2 s steps by default.
    pub horizons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckOptions {
    pub per_group: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            per_group: 8,
            eps: 1e-6,
            tolerance: 1e-4,
        }
    }
}

impl CliConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, SomoError> {
        let text = std::fs::read_to_string(path).map_err(|e| SomoError::io(path, e))?;
        let parse_err = |message: String| SomoError::Parse {
            path: path.display().to_string(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_sections_and_unknown_keys() {
        let c: CliConfig = toml::from_str(
            "seed = 4\n[model]\nfeature_dim = 32\n[train]\nepochs = 2\n[gen]\ncount = 3\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.model.feature_dim, 32);
        assert_eq!(c.model.window, 10);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.gen.count, 3);
        assert!(toml::from_str::<CliConfig>("[model]\nfeature_dims = 3\n").is_err());
        assert!(toml::from_str::<CliConfig>("bogus = 1\n").is_err());
    }
}
