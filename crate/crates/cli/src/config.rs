//! Pipeline configuration: one TOML file sets every knob; command-line
//! flags override file values; a single top-level seed feeds all randomness.

use std::path::{Path, PathBuf};

use dpv_core::fusion::{FusionMode, GainConfig};
use dpv_core::plane_sweep::SweepConfig;
use dpv_core::refine::GuidedUpsampleConfig;
use serde::Deserialize;

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionChoice {
    None,
    Bayes,
    GlobalDamping,
    Adaptive,
}

impl FusionChoice {
    pub fn to_mode(self) -> FusionMode {
        match self {
            FusionChoice::None => FusionMode::None,
            FusionChoice::Bayes => FusionMode::Bayes,
            FusionChoice::GlobalDamping => FusionMode::GlobalDamping,
            FusionChoice::Adaptive => FusionMode::Adaptive,
        }
    }
}

impl std::str::FromStr for FusionChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(FusionChoice::None),
            "bayes" => Ok(FusionChoice::Bayes),
            "global-damping" => Ok(FusionChoice::GlobalDamping),
            "adaptive" => Ok(FusionChoice::Adaptive),
            other => Err(format!(
                "unknown fusion mode '{other}' (expected none, bayes, global-damping, adaptive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub planes: usize,
    /// Softmax temperature; `None` picks the mean per-pixel cost spread.
    pub temperature: Option<f64>,
    pub smooth_cost: bool,
    pub fusion: FusionChoice,
    pub lambda: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    /// Edge-guided upsampling of the fused volume to full resolution.
    pub refine: bool,
    pub spatial_sigma: f64,
    pub range_sigma: f64,
    pub refine_radius: f64,
    /// Photometric pose refinement of each window before measurement.
    pub pose_refine: bool,
    /// Pixels with confidence below this are written as invalid (0).
    pub conf_threshold: f64,
    /// Source-frame spacing within a window, in frames.
    pub delta_t: usize,
    /// Reference-frame advance, in frames; defaults to `delta_t`.
    pub stride: Option<usize>,
    /// Abort on the first frame error instead of skipping the frame.
    pub strict: bool,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_min: 0.5,
            d_max: 10.0,
            planes: 64,
            temperature: None,
            smooth_cost: true,
            fusion: FusionChoice::Adaptive,
            lambda: 0.8,
            kappa: 2.0,
            lambda_min: 0.2,
            refine: true,
            spatial_sigma: 4.0,
            range_sigma: 0.1,
            refine_radius: 8.0,
            pose_refine: false,
            conf_threshold: 0.0,
            delta_t: 5,
            stride: None,
            strict: false,
            seed: 0,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min) {
            return Err(CliError::Usage("require 0 < d_min < d_max".into()));
        }
        if self.planes < 2 {
            return Err(CliError::Usage("planes must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::Usage("lambda must be in [0, 1]".into()));
        }
        if self.kappa <= 0.0 {
            return Err(CliError::Usage("kappa must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_min) {
            return Err(CliError::Usage("lambda_min must be in [0, 1]".into()));
        }
        if self.delta_t < 1 {
            return Err(CliError::Usage("delta_t must be >= 1".into()));
        }
        if self.stride == Some(0) {
            return Err(CliError::Usage("stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.delta_t)
    }

    pub fn gain(&self) -> GainConfig {
        GainConfig {
            mode: self.fusion.to_mode(),
            lambda: self.lambda,
            kappa: self.kappa,
            lambda_min: self.lambda_min,
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            smooth_cost: self.smooth_cost,
            temperature: self.temperature,
        }
    }

    pub fn upsample(&self) -> GuidedUpsampleConfig {
        GuidedUpsampleConfig {
            spatial_sigma: self.spatial_sigma,
            range_sigma: self.range_sigma,
            radius: self.refine_radius,
        }
    }
}
