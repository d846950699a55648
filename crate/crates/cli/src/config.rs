//! Run configuration: TOML schema, defaults, and flag overrides.
//! Precedence is flag > config file > profile default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zonetrain::datapipe::{NormMode, NormalizationSpec};
use zonetrain::geometry::{FrameGeometry, PatchGridSpec};
use zonetrain::model::NetworkConfig;
use zonetrain::synthphantom::small_geometry;
use zonetrain::trainer::{hyperparams_for, DeskProfile, HyperParams, Strategy};
use zonetrain::{Error, Result};

/// Named experiment scale. `desk` runs in minutes on a CPU; `full` is the
/// reference geometry and schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Full,
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Desk
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Container,
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    #[serde(default)]
    pub source: DataSource,
    /// Frame container path when `source = "container"`.
    pub container: Option<PathBuf>,
    /// Frames generated per class when `source = "synthetic"`.
    pub frames_per_class: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub axial_pixels: Option<usize>,
    pub lateral_pixels: Option<usize>,
    pub depth_cm: Option<f64>,
    pub sampling_rate_hz: Option<f64>,
    pub focus_depth_cm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub patch_axial_px: Option<usize>,
    pub patch_lateral_px: Option<usize>,
    pub axial_skip_px: Option<usize>,
    pub axial_stride_px: Option<usize>,
    pub lateral_stride_px: Option<usize>,
    pub n_axial_lines: Option<usize>,
    pub n_lateral_lines: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBlock {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormBlock {
    /// "per_patch" or "corpus".
    pub mode: Option<String>,
    pub corpus_mean: Option<f64>,
    pub corpus_std: Option<f64>,
}

/// The on-disk run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub profile: Profile,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub n_repetitions: usize,
    #[serde(default = "default_n_train")]
    pub n_train_images: usize,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub hyperparams: HyperBlock,
    #[serde(default)]
    pub normalization: NormBlock,
}

fn default_seed() -> u64 {
    7
}
fn default_reps() -> usize {
    1
}
fn default_n_train() -> usize {
    10
}
fn default_strategy() -> Strategy {
    Strategy::Zone
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            seed: default_seed(),
            n_repetitions: default_reps(),
            n_train_images: default_n_train(),
            strategy: default_strategy(),
            output_dir: None,
            data: DataBlock::default(),
            geometry: GeometryBlock::default(),
            grid: GridBlock::default(),
            hyperparams: HyperBlock::default(),
            normalization: NormBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Schema-level checks; resolution errors surface later with context.
    pub fn validate(&self) -> Result<()> {
        if self.n_repetitions == 0 {
            return Err(Error::InvalidConfig("n_repetitions must be >= 1".into()));
        }
        match self.data.source {
            DataSource::Container => {
                let path = self.data.container.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("data.source = container needs data.container".into())
                })?;
                if !path.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "container {} does not exist",
                        path.display()
                    )));
                }
            }
            DataSource::Synthetic => {}
        }
        if let Some(mode) = &self.normalization.mode {
            if mode != "per_patch" && mode != "corpus" {
                return Err(Error::InvalidConfig(format!(
                    "normalization.mode must be per_patch or corpus, got {mode}"
                )));
            }
        }
        self.resolved_geometry().validate()?;
        self.resolved_grid().validate(&self.resolved_geometry())?;
        self.resolved_norm().validate()?;
        Ok(())
    }

    pub fn resolved_geometry(&self) -> FrameGeometry {
        let mut g = match self.profile {
            Profile::Desk => small_geometry().0,
            Profile::Full => FrameGeometry::default(),
        };
        let b = &self.geometry;
        if let Some(v) = b.axial_pixels {
            g.axial_pixels = v;
        }
        if let Some(v) = b.lateral_pixels {
            g.lateral_pixels = v;
        }
        if let Some(v) = b.depth_cm {
            g.depth_cm = v;
        }
        if let Some(v) = b.sampling_rate_hz {
            g.sampling_rate_hz = v;
        }
        if let Some(v) = b.focus_depth_cm {
            g.focus_depth_cm = v;
        }
        g
    }

    pub fn resolved_grid(&self) -> PatchGridSpec {
        let mut g = match self.profile {
            Profile::Desk => small_geometry().1,
            Profile::Full => PatchGridSpec::default(),
        };
        let b = &self.grid;
        if let Some(v) = b.patch_axial_px {
            g.patch_axial_px = v;
        }
        if let Some(v) = b.patch_lateral_px {
            g.patch_lateral_px = v;
        }
        if let Some(v) = b.axial_skip_px {
            g.axial_skip_px = v;
        }
        if let Some(v) = b.axial_stride_px {
            g.axial_stride_px = v;
        }
        if let Some(v) = b.lateral_stride_px {
            g.lateral_stride_px = v;
        }
        if let Some(v) = b.n_axial_lines {
            g.n_axial_lines = v;
        }
        if let Some(v) = b.n_lateral_lines {
            g.n_lateral_lines = v;
        }
        g
    }

    pub fn resolved_net_config(&self) -> NetworkConfig {
        let channels = if self.strategy == Strategy::DepthAware { 2 } else { 1 };
        let grid = self.resolved_grid();
        let mut cfg = match self.profile {
            Profile::Desk => DeskProfile::default().net_config,
            Profile::Full => NetworkConfig::default(),
        };
        cfg.input_channels = channels;
        cfg.input_shape = (grid.patch_axial_px, grid.patch_lateral_px);
        cfg
    }

    pub fn resolved_hyperparams(&self) -> Result<HyperParams> {
        let mut hp = match self.profile {
            Profile::Desk => DeskProfile::default().hyperparams_for(self.n_train_images),
            Profile::Full => hyperparams_for(self.n_train_images),
        };
        let b = &self.hyperparams;
        if b.epochs.is_some() || b.learning_rate.is_some() {
            // full overrides free the schedule from the published table
            let epochs = b.epochs;
            let lr = b.learning_rate;
            if let (Some(e), Some(l)) = (epochs, lr) {
                hp = Ok(HyperParams::new(e, l));
            }
        }
        let mut hp = hp?;
        if let Some(e) = b.epochs {
            hp.epochs = e;
        }
        if let Some(l) = b.learning_rate {
            hp.learning_rate = l;
        }
        if let Some(bs) = b.batch_size {
            hp.batch_size = bs;
        }
        hp.validate()?;
        Ok(hp)
    }

    pub fn resolved_norm(&self) -> NormalizationSpec {
        let mut n = NormalizationSpec::default();
        if self.normalization.mode.as_deref() == Some("corpus") {
            n.mode = NormMode::Corpus;
        }
        n.corpus_mean = self.normalization.corpus_mean;
        n.corpus_std = self.normalization.corpus_std;
        n
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs/default"))
    }
}
