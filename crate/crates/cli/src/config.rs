//! Pipeline configuration, read from TOML. Every field has a default, so a
//! file only needs the keys it changes.

use std::path::{Path, PathBuf};

use attnlab_core::dronesim::SimConfig;
use attnlab_core::gazegen::BehaviorParams;
use attnlab_core::gazeproc::{DEFAULT_DISPERSION_PX, DEFAULT_MIN_DURATION_MS};
use attnlab_core::saliency::DEFAULT_WINDOW_PX;
use attnlab_core::study::StudyConfig;
use attnlab_core::{Layout, TimeGrid};
use attnlab_hism::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("layout: {0}")]
    Layout(#[from] attnlab_core::LayoutError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GazeConfig {
    pub dispersion_px: f64,
    pub min_fixation_ms: f64,
    pub smoothing_window_px: usize,
    pub calibration_window_s: f64,
    pub max_offset_px: f64,
    /// Also write every raw 250 Hz gaze trace (large).
    pub write_raw: bool,
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            dispersion_px: DEFAULT_DISPERSION_PX,
            min_fixation_ms: DEFAULT_MIN_DURATION_MS,
            smoothing_window_px: DEFAULT_WINDOW_PX,
            calibration_window_s: 1.0,
            max_offset_px: 70.0,
            write_raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Highlighted and un-highlighted events taken each; 16 gives
    /// 32 trials x 60 slices = 1,920 pairs.
    pub per_condition: usize,
    pub image_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_condition: 16,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub reliability_iterations: usize,
    /// Raster size for bottom-up saliency frames.
    pub itti_width: u32,
    pub itti_height: u32,
    /// Seconds after onset pooled into the per-condition fixation maps.
    pub map_window_s: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            reliability_iterations: 10,
            itti_width: 480,
            itti_height: 300,
            map_window_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub participants: u32,
    pub tasks: u32,
    /// Layout JSON; the built-in desk layout when absent.
    pub layout: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub sim: SimConfig,
    pub behavior: BehaviorParams,
    pub grid: TimeGrid,
    pub gaze: GazeConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.model.image_size = DatasetConfig::default().image_size;
        PipelineConfig {
            seed: 7,
            participants: 28,
            tasks: 4,
            layout: None,
            out_dir: PathBuf::from("out"),
            variant: Variant::TranEncTask,
            sim: SimConfig::desk_default(),
            behavior: BehaviorParams::default(),
            grid: TimeGrid::default(),
            gaze: GazeConfig::default(),
            dataset: DatasetConfig::default(),
            train,
            analysis: AnalysisConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.participants == 0 || self.tasks == 0 {
            return bad("participants and tasks must be positive");
        }
        if self.grid.is_empty() || self.grid.len() != self.train.model.seq_len {
            return bad("grid length must equal the model sequence length");
        }
        if self.dataset.image_size != self.train.model.image_size {
            return bad("dataset.image_size must equal train.model.image_size");
        }
        if self.dataset.per_condition == 0 {
            return bad("dataset.per_condition must be positive");
        }
        self.behavior
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            seed: self.seed,
            participants: self.participants,
            tasks: self.tasks,
            sim: self.sim.clone(),
            behavior: self.behavior.clone(),
            grid: self.grid,
            dispersion_px: self.gaze.dispersion_px,
            min_fixation_ms: self.gaze.min_fixation_ms,
            smoothing_window_px: self.gaze.smoothing_window_px,
            calibration_window_s: self.gaze.calibration_window_s,
            max_offset_px: self.gaze.max_offset_px,
        }
    }

    pub fn layout(&self) -> Result<Layout, ConfigError> {
        match &self.layout {
            Some(p) => Ok(attnlab_core::layout::load_layout(p)?),
            None => Ok(Layout::default_layout()),
        }
    }

    /// Training settings with the selected variant filled in.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.model.variant = self.variant;
        t
    }
}
