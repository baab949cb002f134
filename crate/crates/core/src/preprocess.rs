//! Guidewire detection, lumen segmentation, pixel-shifting and patch filtering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::{optimal_closed_path, optimal_open_path};
use crate::filter::{gaussian_filter, gaussian_filter_xy};
use crate::model::{crop_depth, Contour, Grid, Label, LabelVolume, PolarFrame, Pullback, ANALYSIS_DEPTH_PX};
use crate::morph::{open, StructuringElement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("no guidewire shadow found (edge contrast {score:.3} below floor {floor:.3})")]
    NoShadowFound { score: f64, floor: f64 },
    #[error("lumen segmentation failed on frame {frame}: {reason}")]
    SegmentationFailed { frame: usize, reason: String },
}

/// Normalized per-A-line intensity sums, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    pub values: Grid<f64>,
}

impl IntensityMap {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_alines(&self) -> usize {
        self.values.cols()
    }
}

/// Per-frame inclusive A-line interval `(lower, upper)`; `lower > upper` wraps through 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidewireBand {
    n_alines: usize,
    frames: Vec<Option<(usize, usize)>>,
}

impl GuidewireBand {
    pub fn new(n_alines: usize, frames: Vec<Option<(usize, usize)>>) -> Self {
        Self { n_alines, frames }
    }

    pub fn empty(n_alines: usize, n_frames: usize) -> Self {
        Self::new(n_alines, vec![None; n_frames])
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_alines(&self) -> usize {
        self.n_alines
    }

    pub fn interval(&self, frame: usize) -> Option<(usize, usize)> {
        self.frames.get(frame).copied().flatten()
    }

    pub fn width(&self, frame: usize) -> usize {
        self.interval(frame)
            .map_or(0, |(lo, hi)| (hi + self.n_alines - lo) % self.n_alines + 1)
    }

    pub fn contains(&self, frame: usize, aline: usize) -> bool {
        match self.interval(frame) {
            Some((lo, _)) => (aline + self.n_alines - lo) % self.n_alines < self.width(frame),
            None => false,
        }
    }

    /// Boolean mask over A-lines for one frame.
    pub fn mask(&self, frame: usize) -> Vec<bool> {
        (0..self.n_alines).map(|a| self.contains(frame, a)).collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> GuidewireBand {
        GuidewireBand::new(self.n_alines, self.frames[start..=end].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidewireConfig {
    /// Largest per-frame move of either band edge, in A-lines.
    pub jump: usize,
    /// A-lines averaged on each side of an edge.
    pub window: usize,
    /// Median edge contrast below which no shadow is reported.
    pub floor: f64,
    /// Widest accepted band as a fraction of the A-lines.
    pub max_width_fraction: f64,
}

impl Default for GuidewireConfig {
    fn default() -> Self {
        Self {
            jump: 3,
            window: 3,
            floor: 0.4,
            max_width_fraction: 0.25,
        }
    }
}

/// Sum every A-line and min-max normalize each frame's row.
pub fn accumulate_intensity(pullback: &Pullback) -> IntensityMap {
    let n_a = pullback.n_alines();
    let rows: Vec<Vec<f64>> = pullback
        .frames()
        .par_iter()
        .map(|f| {
            let sums: Vec<f64> = (0..n_a)
                .map(|a| f.pixels.row(a).iter().map(|&v| v as f64).sum())
                .collect();
            normalize_min_max(sums)
        })
        .collect();
    IntensityMap {
        values: Grid::from_vec(rows.len(), n_a, rows.concat()).expect("row sizes"),
    }
}

fn normalize_min_max(mut v: Vec<f64>) -> Vec<f64> {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    for x in &mut v {
        *x = if range > 0.0 { (*x - min) / range } else { 0.0 };
    }
    v
}

fn circular_mean(row: &[f64], start: isize, len: usize) -> f64 {
    let n = row.len() as isize;
    (0..len as isize)
        .map(|k| row[(start + k).rem_euclid(n) as usize])
        .sum::<f64>()
        / len as f64
}

/// Detect the guidewire shadow band by tracking its two edges through the pullback.
///
/// The bright-to-dark edge (first shadow A-line) and the dark-to-bright edge
/// (last shadow A-line) are each found by a dynamic program over frames that
/// maximizes the summed edge contrast under a per-frame jump bound on a
/// circular angular axis.
pub fn detect_guidewire(map: &IntensityMap, cfg: &GuidewireConfig) -> Result<GuidewireBand, PreprocessError> {
    let n_f = map.n_frames();
    let n_a = map.n_alines();
    let w = cfg.window.max(1);
    if n_f == 0 {
        return Err(PreprocessError::NoShadowFound {
            score: 0.0,
            floor: cfg.floor,
        });
    }
    // fall[p]: bright before p, dark from p on. rise[q]: dark up to q, bright after.
    let mut fall = Grid::<f64>::new(n_f, n_a);
    let mut rise = Grid::<f64>::new(n_f, n_a);
    for f in 0..n_f {
        let row = map.values.row(f);
        for p in 0..n_a {
            let pi = p as isize;
            let before = circular_mean(row, pi - w as isize, w);
            let inside = circular_mean(row, pi, w);
            fall.set(f, p, before - inside);
            let inside_q = circular_mean(row, pi - w as isize + 1, w);
            let after = circular_mean(row, pi + 1, w);
            rise.set(f, p, after - inside_q);
        }
    }
    let (lower, upper) = rayon::join(
        || optimal_open_path(&fall, cfg.jump, true),
        || optimal_open_path(&rise, cfg.jump, true),
    );
    let (lower, _) = lower;
    let (mut upper, _) = upper;
    let max_width = ((n_a as f64 * cfg.max_width_fraction).round() as usize).clamp(1, n_a - 1);
    for f in 0..n_f {
        let width = (upper[f] + n_a - lower[f]) % n_a + 1;
        if width > max_width {
            // inconsistent pair: take the strongest rise within the allowed window
            let best = (0..max_width)
                .map(|k| (lower[f] + k) % n_a)
                .max_by(|&x, &y| rise.at(f, x).total_cmp(&rise.at(f, y)).then(y.cmp(&x)))
                .unwrap();
            upper[f] = best;
        }
    }
    let mut contrast: Vec<f64> = (0..n_f)
        .map(|f| fall.at(f, lower[f]).min(rise.at(f, upper[f])))
        .collect();
    contrast.sort_by(f64::total_cmp);
    let score = contrast[n_f / 2];
    if !(score >= cfg.floor) {
        return Err(PreprocessError::NoShadowFound { score, floor: cfg.floor });
    }
    Ok(GuidewireBand::new(
        n_a,
        (0..n_f).map(|f| Some((lower[f], upper[f]))).collect(),
    ))
}

/// Label every pixel on band A-lines as guidewire.
pub fn mask_guidewire(labels: &LabelVolume, band: &GuidewireBand) -> LabelVolume {
    let mut out = labels.clone();
    mask_guidewire_in_place(&mut out, band);
    out
}

pub fn mask_guidewire_in_place(labels: &mut LabelVolume, band: &GuidewireBand) {
    let n_r = labels.n_r();
    for (f, frame) in labels.frames_mut().enumerate() {
        if band.interval(f).is_none() {
            continue;
        }
        for (a, aline) in frame.chunks_exact_mut(n_r).enumerate() {
            if band.contains(f, a) {
                aline.fill(Label::Guidewire.code());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LumenConfig {
    /// Largest radial step between neighbouring A-lines, in pixels.
    pub jump: usize,
    /// Radial smoothing before edge scoring.
    pub sigma: f64,
    /// Smoothing across A-lines before edge scoring.
    pub angular_sigma: f64,
    /// Samples averaged on each side of a candidate edge.
    pub half_baseline: usize,
    /// Innermost radius searched (keeps the stencil inside the array).
    pub min_radius_px: usize,
    /// Weight of the brightest sample seen before a candidate edge.
    pub prior_penalty: f64,
    /// Distance past an edge where signal must still be present.
    pub shadow_gap_px: usize,
    /// A-lines whose path score is below this fraction of the median are bridged.
    pub gap_fraction: f64,
    /// Frame fails when the median path score is below this fraction of the typical A-line peak.
    pub min_score_fraction: f64,
    pub opening_kernel: usize,
}

impl Default for LumenConfig {
    fn default() -> Self {
        Self {
            jump: 4,
            sigma: 2.0,
            angular_sigma: 0.0,
            half_baseline: 3,
            min_radius_px: 8,
            prior_penalty: 1.0,
            shadow_gap_px: 12,
            gap_fraction: 0.2,
            min_score_fraction: 0.05,
            opening_kernel: 5,
        }
    }
}

/// Edge score per (A-line, radius): dark-to-bright contrast, capped by the
/// brightest raw sample found beyond the edge (blooms followed by a shadow score
/// nothing), minus the brightest sample already passed on the way out from the
/// catheter. Negative scores are clamped to zero.
pub fn lumen_edge_scores(frame: &Grid<f32>, cfg: &LumenConfig) -> Grid<f64> {
    let smoothed = gaussian_filter_xy(frame, cfg.angular_sigma, cfg.sigma);
    let (n_a, n_r) = (frame.rows(), frame.cols());
    let h = cfg.half_baseline.max(1);
    let lo = cfg.min_radius_px.max(h);
    let hi = n_r.saturating_sub(h);
    let mut scores = Grid::<f64>::filled(n_a, n_r, f64::NEG_INFINITY);
    let mut prefix = vec![0.0f64; n_r + 1];
    let mut tail_max = vec![0.0f64; n_r + 1];
    for a in 0..n_a {
        let s = smoothed.row(a);
        let raw = frame.row(a);
        for r in 0..n_r {
            prefix[r + 1] = prefix[r] + s[r] as f64;
        }
        for r in (0..n_r).rev() {
            tail_max[r] = tail_max[r + 1].max(raw[r] as f64);
        }
        let mut running_max = 0.0f64;
        let row = scores.row_mut(a);
        for r in 0..hi {
            if r > h {
                running_max = running_max.max(s[r - h - 1] as f64);
            }
            if r < lo {
                continue;
            }
            let outer = (prefix[r + h] - prefix[r]) / h as f64;
            let inner = (prefix[r] - prefix[r - h]) / h as f64;
            let beyond = tail_max[(r + cfg.shadow_gap_px).min(n_r)];
            let edge = (outer - inner).min(beyond);
            row[r] = (edge - cfg.prior_penalty * running_max).max(0.0);
        }
    }
    scores
}

/// Median over A-lines of the smoothed A-line maximum; robust to speckle and blooms.
fn typical_aline_peak(pixels: &Grid<f32>, sigma: f64) -> f64 {
    let smoothed = gaussian_filter(pixels, sigma);
    let mut peaks: Vec<f64> = (0..smoothed.rows())
        .map(|a| smoothed.row(a).iter().cloned().fold(0.0f32, f32::max) as f64)
        .collect();
    peaks.sort_by(f64::total_cmp);
    peaks[peaks.len() / 2]
}

/// Segment the lumen border of one frame. `skip` marks A-lines to bridge (guidewire).
pub fn segment_lumen_frame(
    frame: &PolarFrame,
    skip: &[bool],
    cfg: &LumenConfig,
) -> Result<Contour, PreprocessError> {
    let fail = |reason: String| PreprocessError::SegmentationFailed {
        frame: frame.index,
        reason,
    };
    let n_a = frame.n_alines();
    let n_r = frame.n_r();
    let pixels = frame.to_f32();
    let reference = typical_aline_peak(&pixels, cfg.sigma);
    if reference <= 0.0 {
        return Err(fail("empty frame".into()));
    }
    let mut scores = lumen_edge_scores(&pixels, cfg);
    for a in (0..n_a).filter(|&a| skip[a]) {
        for v in scores.row_mut(a) {
            if v.is_finite() {
                *v = 0.0;
            }
        }
    }
    let (path, _) = optimal_closed_path(&scores, cfg.jump);
    let path_scores: Vec<f64> = (0..n_a).map(|a| scores.at(a, path[a])).collect();
    let mut usable: Vec<f64> = (0..n_a).filter(|&a| !skip[a]).map(|a| path_scores[a]).collect();
    if usable.is_empty() {
        return Err(fail("every A-line is masked".into()));
    }
    usable.sort_by(f64::total_cmp);
    let median = usable[usable.len() / 2];
    if median < cfg.min_score_fraction * reference {
        return Err(fail(format!("median edge score {median:.1} below floor")));
    }
    let gap: Vec<bool> = (0..n_a)
        .map(|a| skip[a] || path_scores[a] < cfg.gap_fraction * median)
        .collect();
    let radii: Vec<f64> = path.iter().map(|&r| r as f64).collect();
    let bridged = bridge_gaps(&radii, &gap);
    let opened = open_lumen_mask(&bridged, n_r, cfg.opening_kernel);
    Ok(Contour::closed(opened))
}

/// Replace gap entries by circular linear interpolation between the flanking kept entries.
pub fn bridge_gaps(radii: &[f64], gap: &[bool]) -> Vec<f64> {
    let n = radii.len();
    let Some(anchor) = (0..n).find(|&i| !gap[i]) else {
        return radii.to_vec();
    };
    let mut out = radii.to_vec();
    let mut i = 0;
    while i < n {
        let a = (anchor + i) % n;
        if !gap[a] {
            i += 1;
            continue;
        }
        let start = (a + n - 1) % n;
        let mut len = 0;
        while gap[(a + len) % n] {
            len += 1;
        }
        let end = (a + len) % n;
        let (r0, r1) = (radii[start], radii[end]);
        for k in 0..len {
            let t = (k + 1) as f64 / (len + 1) as f64;
            out[(a + k) % n] = (r0 + (r1 - r0) * t).round();
        }
        i += len;
    }
    out
}

/// Open the polar lumen mask `{r < c[a]}` and read the border back.
fn open_lumen_mask(radii: &[f64], n_r: usize, kernel: usize) -> Vec<f64> {
    let n_a = radii.len();
    let ints: Vec<usize> = radii.iter().map(|&r| (r.round().max(0.0) as usize).min(n_r)).collect();
    if kernel < 2 {
        return ints.iter().map(|&r| r as f64).collect();
    }
    let cols = (ints.iter().copied().max().unwrap_or(0) + kernel).min(n_r);
    let mask = Grid::from_fn(n_a, cols, |a, r| r < ints[a]);
    let opened = open(&mask, &StructuringElement::disk(kernel), true);
    (0..n_a)
        .map(|a| opened.row(a).iter().take_while(|&&v| v).count() as f64)
        .collect()
}

/// Lumen contours for every frame; failed frames carry their error.
pub fn segment_lumen_dp(
    pullback: &Pullback,
    band: Option<&GuidewireBand>,
    cfg: &LumenConfig,
) -> Vec<Result<Contour, PreprocessError>> {
    pullback
        .frames()
        .par_iter()
        .map(|frame| {
            let skip = match band {
                Some(b) => b.mask(frame.index),
                None => vec![false; pullback.n_alines()],
            };
            segment_lumen_frame(frame, &skip, cfg)
        })
        .collect()
}

/// Per-A-line left shift applied to one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub shifts: Vec<usize>,
}

impl ShiftRecord {
    pub fn from_contour(contour: &Contour, n_r: usize) -> Self {
        Self {
            shifts: contour
                .radii
                .iter()
                .map(|&r| (r.round().max(0.0) as usize).min(n_r))
                .collect(),
        }
    }
}

/// Move A-line `a` left by `contour[a]` pixels so the lumen border sits at column 0.
pub fn pixel_shift<T: Copy + Default>(frame: &Grid<T>, record: &ShiftRecord) -> Grid<T> {
    let (n_a, n_r) = (frame.rows(), frame.cols());
    let mut out = Grid::<T>::new(n_a, n_r);
    for a in 0..n_a {
        let s = record.shifts[a].min(n_r);
        let src = &frame.row(a)[s..];
        out.row_mut(a)[..src.len()].copy_from_slice(src);
    }
    out
}

/// Inverse of [`pixel_shift`] for a cropped patch: place column `j` at radius `shift + j`.
pub fn unshift<T: Copy + Default>(patch: &Grid<T>, record: &ShiftRecord, n_r: usize) -> Grid<T> {
    let n_a = patch.rows();
    let mut out = Grid::<T>::new(n_a, n_r);
    for a in 0..n_a {
        let s = record.shifts[a];
        if s >= n_r {
            continue;
        }
        let keep = patch.cols().min(n_r - s);
        out.row_mut(a)[s..s + keep].copy_from_slice(&patch.row(a)[..keep]);
    }
    out
}

/// Shift, crop to the analysis depth and smooth: the segmenter input patch.
pub fn model_input_patch(frame: &PolarFrame, record: &ShiftRecord, sigma: f64) -> Grid<f32> {
    let shifted = pixel_shift(&frame.to_f32(), record);
    gaussian_filter(&crop_depth(&shifted, ANALYSIS_DEPTH_PX), sigma)
}

pub fn gaussian_filter_patch(patch: &Grid<f32>, sigma: f64) -> Grid<f32> {
    gaussian_filter(patch, sigma)
}
