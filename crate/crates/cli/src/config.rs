//! Run configuration files and the model description stored in checkpoints.

use std::path::Path;

use meteor_core::meteor::{default_options, preset, PresetOptions};
use meteor_core::toybench::{GridBaselineConfig, TrainConfig};
use meteor_core::{ArchitectureSpec, Error, Result};
use serde::{Deserialize, Serialize};

/// Overrides for the preset constructors; unset fields keep the preset defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetOverrides {
    pub input_channels: Option<usize>,
    pub classes: Option<usize>,
    pub width_divisor: Option<usize>,
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub preset: PresetOverrides,
    /// Settings for `--arch grid-baseline`.
    pub grid: GridBaselineConfig,
    /// Side of the cube the grid baseline voxelizes.
    pub cube: f64,
    /// Full architecture for `--arch custom`.
    pub architecture: Option<ArchitectureSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            preset: PresetOverrides::default(),
            grid: GridBaselineConfig::default(),
            cube: 100.0,
            architecture: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// What a checkpoint's config blob describes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SavedModel {
    Meteor { spec: ArchitectureSpec },
    Grid { config: GridBaselineConfig, frames: usize, cube: f64, classes: usize },
}

impl SavedModel {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("checkpoint config: {e}")))
    }
}

/// Architecture for a preset name, `custom` (from the config file) or `toy-meteornet`.
pub fn meteor_spec(arch: &str, cfg: &RunConfig) -> Result<ArchitectureSpec> {
    match arch {
        "custom" => cfg
            .architecture
            .clone()
            .ok_or_else(|| Error::Config("--arch custom needs an [architecture] section".into())),
        "toy-meteornet" => preset("toy-cls", &PresetOptions { input_channels: 0, classes: 4, width_divisor: 1 }),
        name => {
            let d = default_options(name);
            let o = &cfg.preset;
            let opts = PresetOptions {
                input_channels: o.input_channels.unwrap_or(d.input_channels),
                classes: o.classes.unwrap_or(d.classes),
                width_divisor: o.width_divisor.unwrap_or(d.width_divisor),
            };
            preset(name, &opts)
        }
    }
}
