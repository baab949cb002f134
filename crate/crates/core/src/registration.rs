//! Serial pullback co-registration by landmarks or by normalized
//! cross-correlation of per-frame maximum calcium thickness.
//!
//! Offsets map floating frames onto reference frames:
//! `frame_ref = frame_float + offset`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Calibration, Label, LabelVolume};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("{0} signal has zero variance")]
    DegenerateSignal(&'static str),
    #[error("no offset leaves at least {min_overlap} overlapping frames")]
    InsufficientOverlap { min_overlap: usize },
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSignal {
    pub pullback_id: String,
    /// Maximum calcium thickness per frame, mm.
    pub values: Vec<f64>,
}

impl ThicknessSignal {
    pub fn new(pullback_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { pullback_id: pullback_id.into(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Longest run of calcium pixels on any A-line of each frame, in mm.
pub fn thickness_signal(labels: &LabelVolume, cal: &Calibration, pullback_id: &str) -> ThicknessSignal {
    let calcium = Label::Calcium.code();
    let values = (0..labels.n_frames())
        .map(|f| {
            let mut best = 0usize;
            for a in 0..labels.n_alines() {
                let mut run = 0usize;
                for &v in labels.aline(f, a) {
                    run = if v == calcium { run + 1 } else { 0 };
                    best = best.max(run);
                }
            }
            best as f64 * cal.r_pixel_um / 1000.0
        })
        .collect();
    ThicknessSignal::new(pullback_id, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    Automatic,
    Landmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub offset_frames: i64,
    /// Normalized correlation at the chosen offset (automatic mode only).
    pub peak_correlation: Option<f64>,
    pub mode: RegistrationMode,
    /// Reference frame for each floating frame; `None` when it falls outside.
    pub mapping: Vec<Option<usize>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoRegistrationConfig {
    /// Largest offset searched; defaults to half the shorter pullback.
    pub max_offset: Option<usize>,
    pub min_overlap: usize,
}

impl Default for AutoRegistrationConfig {
    fn default() -> Self {
        Self {
            max_offset: None,
            min_overlap: 25,
        }
    }
}

fn mapping(offset: i64, n_float: usize, n_ref: usize) -> Vec<Option<usize>> {
    (0..n_float)
        .map(|f| {
            let r = f as i64 + offset;
            (0..n_ref as i64).contains(&r).then_some(r as usize)
        })
        .collect()
}

fn has_variance(v: &[f64]) -> bool {
    v.iter().any(|&x| x != v[0])
}

/// Normalized correlation of the overlap at `offset`, or `None` when the
/// overlap is shorter than `min_overlap` or flat on either side.
pub fn correlation_at(reference: &[f64], floating: &[f64], offset: i64, min_overlap: usize) -> Option<f64> {
    // floating frame f pairs with reference frame f + offset
    let f0 = (-offset).max(0);
    let f1 = (floating.len() as i64).min(reference.len() as i64 - offset);
    if f1 - f0 < min_overlap.max(2) as i64 {
        return None;
    }
    let pairs = || (f0..f1).map(|f| (reference[(f + offset) as usize], floating[f as usize]));
    let n = (f1 - f0) as f64;
    let (sr, sf) = pairs().fold((0.0, 0.0), |(a, b), (r, f)| (a + r, b + f));
    let (mr, mf) = (sr / n, sf / n);
    let (mut num, mut vr, mut vf) = (0.0, 0.0, 0.0);
    for (r, f) in pairs() {
        num += (r - mr) * (f - mf);
        vr += (r - mr) * (r - mr);
        vf += (f - mf) * (f - mf);
    }
    if vr <= 0.0 || vf <= 0.0 {
        return None;
    }
    Some((num / (vr * vf).sqrt()).clamp(-1.0, 1.0))
}

/// Offset maximizing normalized cross-correlation. Ties go to the smaller
/// `|offset|`, then to the negative one.
pub fn register_auto(
    reference: &ThicknessSignal,
    floating: &ThicknessSignal,
    cfg: &AutoRegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    if reference.is_empty() || !has_variance(&reference.values) {
        return Err(RegistrationError::DegenerateSignal("reference"));
    }
    if floating.is_empty() || !has_variance(&floating.values) {
        return Err(RegistrationError::DegenerateSignal("floating"));
    }
    let max_offset = cfg
        .max_offset
        .unwrap_or(reference.len().min(floating.len()) / 2) as i64;
    let scores: Vec<(i64, Option<f64>)> = (-max_offset..=max_offset)
        .into_par_iter()
        .map(|k| (k, correlation_at(&reference.values, &floating.values, k, cfg.min_overlap)))
        .collect();
    let mut best: Option<(i64, f64)> = None;
    for (k, c) in scores {
        let Some(c) = c else { continue };
        let better = match best {
            None => true,
            Some((bk, bc)) => c > bc || (c == bc && (k.abs(), k) < (bk.abs(), bk)),
        };
        if better {
            best = Some((k, c));
        }
    }
    let (offset, peak) = best.ok_or(RegistrationError::InsufficientOverlap {
        min_overlap: cfg.min_overlap,
    })?;
    Ok(RegistrationResult {
        offset_frames: offset,
        peak_correlation: Some(peak),
        mode: RegistrationMode::Automatic,
        mapping: mapping(offset, floating.len(), reference.len()),
        warnings: Vec::new(),
    })
}

fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Offset from two landmark pairs: `reference[i]` and `floating[i]` show the
/// same anatomy. The offset is the mean of the two per-landmark offsets,
/// rounded half away from zero.
pub fn register_landmark(
    reference: [usize; 2],
    floating: [usize; 2],
    n_reference: usize,
    n_floating: usize,
) -> Result<RegistrationResult, RegistrationError> {
    if reference.iter().any(|&r| r >= n_reference) || floating.iter().any(|&f| f >= n_floating) {
        return Err(RegistrationError::InvalidLandmarks("landmark frame out of range".into()));
    }
    let order = |p: [usize; 2]| p[0].cmp(&p[1]);
    if order(reference) != order(floating) || reference[0] == reference[1] {
        return Err(RegistrationError::InvalidLandmarks("landmark order differs between pullbacks".into()));
    }
    let d0 = reference[0] as i64 - floating[0] as i64;
    let d1 = reference[1] as i64 - floating[1] as i64;
    let offset = round_half_away((d0 + d1) as f64 / 2.0);
    let mut warnings = Vec::new();
    if (d0 - d1).abs() > 2 {
        warnings.push(format!("landmark offsets {d0} and {d1} differ by more than 2 frames"));
    } else if (d0 + d1) % 2 != 0 {
        warnings.push(format!("landmark offsets {d0} and {d1} disagree; mean rounded to {offset}"));
    }
    Ok(RegistrationResult {
        offset_frames: offset,
        peak_correlation: None,
        mode: RegistrationMode::Landmark,
        mapping: mapping(offset, n_floating, n_reference),
        warnings,
    })
}

/// Reindex per-frame floating items onto the reference frame axis.
/// Reference frames with no floating counterpart are `None`.
pub fn apply_registration<T: Clone>(floating: &[T], offset: i64, n_reference: usize) -> Vec<Option<T>> {
    (0..n_reference as i64)
        .map(|r| {
            let f = r - offset;
            (0..floating.len() as i64).contains(&f).then(|| floating[f as usize].clone())
        })
        .collect()
}
