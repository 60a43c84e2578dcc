//! Pipeline configuration: defaults, overridden by a TOML file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use mammopos_core::bbdetect::{BbParams, ChestWallRule};
use mammopos_core::decision::DecisionConfig;
use mammopos_predictor::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    #[default]
    Trained,
    /// Use each MLO's own annotation as the prediction.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bb: BbParams,
    pub chest_wall: ChestWallRule,
    pub decision: DecisionConfig,
    pub train: TrainConfig,
    pub predictor: PredictorMode,
    /// Model checkpoint, required in trained mode.
    pub model: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bb.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.decision.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mammopos_core::decision::UnitMode;
    use mammopos_core::view::Side;

    #[test]
    fn file_overrides_defaults_field_by_field() {
        let cfg = PipelineConfig::from_toml(
            r#"
            predictor = "passthrough"
            chest_wall = { rule = "fixed", side = "right" }
            [decision]
            unit_mode = { mode = "pixel", threshold_px = 12.5 }
            [bb]
            r_max = 25.0
            [train]
            epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.predictor, PredictorMode::Passthrough);
        assert_eq!(cfg.chest_wall, ChestWallRule::Fixed(Side::Right));
        assert_eq!(cfg.decision.unit_mode, UnitMode::Pixel { threshold_px: 12.5 });
        assert_eq!(cfg.decision.bb_distance_threshold, 50.0);
        assert_eq!((cfg.bb.r_min, cfg.bb.r_max), (10.0, 25.0));
        assert_eq!((cfg.train.epochs, cfg.train.batch_size), (3, 12));
        cfg.validate().unwrap();
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(PipelineConfig::from_toml("unknown_key = 1").is_err());
        assert!(PipelineConfig::from_toml("[decision]\ndiff_threshold_mm = \"ten\"").is_err());
        let bad = PipelineConfig::from_toml("[bb]\nr_min = 30.0").unwrap();
        assert!(bad.validate().is_err());
    }
}
