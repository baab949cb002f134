//! Pipeline configuration: every tunable in one JSON document.
//!
//! Unknown keys are rejected at every level. Missing keys take the defaults,
//! which are also committed as `config/defaults.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plaque::{PostprocessConfig, ReferenceSegmenterConfig};
use crate::preprocess::{GuidewireConfig, LumenConfig};
use crate::quant::ScoreThresholds;
use crate::registration::AutoRegistrationConfig;
use crate::stent::StentConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Baseline,
    FollowUp,
    StentAnalysis,
}

impl Mode {
    /// Accepts the config spellings and the short CLI forms.
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "baseline" => Some(Mode::Baseline),
            "follow_up" | "followup" => Some(Mode::FollowUp),
            "stent_analysis" | "stent" => Some(Mode::StentAnalysis),
            _ => None,
        }
    }
}

/// Inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub start: usize,
    pub end: usize,
}

impl Roi {
    /// Parses `a:b`.
    pub fn parse(s: &str) -> Option<Roi> {
        let (a, b) = s.split_once(':')?;
        let roi = Roi {
            start: a.trim().parse().ok()?,
            end: b.trim().parse().ok()?,
        };
        (roi.start <= roi.end).then_some(roi)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaqueConfig {
    pub segmenter: ReferenceSegmenterConfig,
    /// Gaussian sigma applied to the shifted patch before segmentation.
    pub patch_sigma: f64,
    /// Minimum fraction of calcium A-lines for a frame to be gated.
    pub gate_threshold: f64,
    pub postprocess: PostprocessConfig,
    /// External probability maps (`probs.raw` layout) replacing the reference segmenter.
    pub external_probs: Option<PathBuf>,
    pub external_provider: Option<String>,
}

impl Default for PlaqueConfig {
    fn default() -> Self {
        Self {
            segmenter: ReferenceSegmenterConfig::default(),
            patch_sigma: 2.0,
            gate_threshold: 0.04,
            postprocess: PostprocessConfig::default(),
            external_probs: None,
            external_provider: None,
        }
    }
}

/// Strut classifier files; when absent the built-in phantom corpus is trained on first use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPaths {
    pub detector: Option<PathBuf>,
    pub coverage: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub score: ScoreThresholds,
    pub enface_bins: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            score: ScoreThresholds::default(),
            enface_bins: 360,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub roi: Option<Roi>,
    pub guidewire: GuidewireConfig,
    pub lumen: LumenConfig,
    pub plaque: PlaqueConfig,
    pub stent: StentConfig,
    pub models: ModelPaths,
    pub quant: QuantConfig,
    pub registration: AutoRegistrationConfig,
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn unit(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} not in [0, 1]")))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be > 0")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be >= 0")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be >= {min}")))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(roi) = self.roi {
            if roi.start > roi.end {
                return Err(invalid("roi", format!("start {} > end {}", roi.start, roi.end)));
            }
        }
        let g = &self.guidewire;
        at_least("guidewire.jump", g.jump, 1)?;
        at_least("guidewire.window", g.window, 1)?;
        non_negative("guidewire.floor", g.floor)?;
        if !(g.max_width_fraction > 0.0 && g.max_width_fraction < 1.0) {
            return Err(invalid("guidewire.max_width_fraction", "must be in (0, 1)"));
        }
        let l = &self.lumen;
        at_least("lumen.jump", l.jump, 1)?;
        non_negative("lumen.sigma", l.sigma)?;
        non_negative("lumen.angular_sigma", l.angular_sigma)?;
        at_least("lumen.half_baseline", l.half_baseline, 1)?;
        non_negative("lumen.prior_penalty", l.prior_penalty)?;
        unit("lumen.gap_fraction", l.gap_fraction)?;
        unit("lumen.min_score_fraction", l.min_score_fraction)?;
        let p = &self.plaque;
        unit("plaque.segmenter.reference_percentile", p.segmenter.reference_percentile)?;
        at_least("plaque.segmenter.reference_window", p.segmenter.reference_window, 1)?;
        unit("plaque.segmenter.low_ratio", p.segmenter.low_ratio)?;
        unit("plaque.segmenter.dark_full_ratio", p.segmenter.dark_full_ratio)?;
        if p.segmenter.dark_full_ratio >= p.segmenter.low_ratio {
            return Err(invalid("plaque.segmenter.dark_full_ratio", "must be below low_ratio"));
        }
        positive("plaque.segmenter.border_softness", p.segmenter.border_softness)?;
        at_least("plaque.segmenter.border_width", p.segmenter.border_width, 1)?;
        unit("plaque.segmenter.shadow_ratio", p.segmenter.shadow_ratio)?;
        non_negative("plaque.patch_sigma", p.patch_sigma)?;
        unit("plaque.gate_threshold", p.gate_threshold)?;
        unit("plaque.postprocess.threshold", p.postprocess.threshold)?;
        if p.external_provider.is_some() && p.external_probs.is_none() {
            return Err(invalid("plaque.external_provider", "set without plaque.external_probs"));
        }
        let s = &self.stent;
        positive("stent.peak_ratio", s.peak_ratio)?;
        unit("stent.shadow_ratio", s.shadow_ratio)?;
        at_least("stent.shadow_len_px", s.shadow_len_px, 1)?;
        unit("stent.detector_threshold", s.detector_threshold)?;
        non_negative("stent.strut_thickness_um", s.strut_thickness_um)?;
        non_negative("stent.malapposition_threshold_um", s.malapposition_threshold_um)?;
        if self.models.detector.is_some() != self.models.coverage.is_some() {
            return Err(invalid("models.detector", "detector and coverage models must be given together"));
        }
        let q = &self.quant;
        positive("quant.score.angle_deg", q.score.angle_deg)?;
        positive("quant.score.length_mm", q.score.length_mm)?;
        positive("quant.score.thickness_mm", q.score.thickness_mm)?;
        at_least("quant.enface_bins", q.enface_bins, 1)?;
        at_least("registration.min_overlap", self.registration.min_overlap, 2)?;
        Ok(())
    }
}
