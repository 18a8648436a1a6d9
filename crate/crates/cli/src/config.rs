//! The run configuration: one TOML file with `[model]`, `[train]`,
//! `[synthmap]`, and `[eval]` sections, every field defaulted, unknown keys
//! rejected. Command-line flags override file values, and the fully resolved
//! configuration is echoed into the output directory for provenance.

use hlspot_core::matching::MatchWeights;
use hlspot_core::model::ModelConfig;
use hlspot_core::synthmap::SceneParams;
use hlspot_core::training::TrainConfig;
use hlspot_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Dataset generation knobs plus the per-scene parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Number of scenes to emit.
    pub scenes: usize,
    /// Master seed; scene `i` is generated from `seed + i`.
    pub seed: u64,
    /// Synthetic style profiles to draw from.
    pub n_styles: usize,
    pub style_seed: u64,
    pub scene: SceneParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { scenes: 100, seed: 0, n_styles: 3, style_seed: 11, scene: SceneParams::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresh: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresh: 0.5 }
    }
}

/// Everything a run needs, in one file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthmap: GenConfig,
    pub eval: EvalConfig,
}

/// Size presets selectable from the command line. A preset replaces the
/// `[model]` section (and, for generation, the `[synthmap.scene]` section)
/// wholesale — flags override file values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Desk-scale model and 128x128 scenes; overfits on a CPU.
    Micro,
    /// The published architecture sizes and 256x256 scenes.
    Paper,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::data(format!("config {}: {e}", path.display())))
    }

    /// Apply command-line overrides on top of file values.
    pub fn apply_flags(&mut self, preset: Option<Preset>, seed: Option<u64>, scenes: Option<usize>) {
        match preset {
            Some(Preset::Micro) => {
                self.model = ModelConfig::micro();
                self.synthmap.scene = SceneParams::micro();
            }
            Some(Preset::Paper) => {
                self.model = ModelConfig::paper();
                self.synthmap.scene = SceneParams::default();
            }
            None => {}
        }
        if let Some(s) = seed {
            self.synthmap.seed = s;
            self.train.seed = s;
        }
        if let Some(n) = scenes {
            self.synthmap.scenes = n;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.synthmap.n_styles == 0 {
            return Err(Error::contract("synthmap.n_styles must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eval.iou_thresh) {
            return Err(Error::contract(format!(
                "eval.iou_thresh {} outside [0,1]",
                self.eval.iou_thresh
            )));
        }
        let w: &MatchWeights = &self.train.weights;
        for (name, v) in [
            ("cls", w.cls),
            ("coord", w.coord),
            ("center", w.center),
            ("ct", w.ct),
            ("char_ce", w.char_ce),
            ("giou", w.giou),
        ] {
            if !(v >= 0.0) {
                return Err(Error::contract(format!("train.weights.{name} {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Write the resolved configuration into the run directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::data(format!("config serialization: {e}")))?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}
