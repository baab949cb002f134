//! Frame-level calcium gating and calcium segmentation behind a pluggable segmenter.

use serde::{Deserialize, Serialize};

use crate::model::{Grid, Label, LabelVolume};
use crate::morph::{close_1d, components_8, open, open_1d, remove_small_components, StructuringElement};
use crate::preprocess::{pixel_shift, unshift, ShiftRecord};

/// Per-frame calcium gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGate {
    pub scores: Vec<f64>,
    pub threshold: f64,
    /// Thresholded scores before morphology.
    pub raw: Vec<bool>,
    /// After opening then closing with length 3 along the frame axis.
    pub gated: Vec<bool>,
}

impl FrameGate {
    pub fn empty(n_frames: usize) -> Self {
        Self {
            scores: vec![0.0; n_frames],
            threshold: 1.0,
            raw: vec![false; n_frames],
            gated: vec![false; n_frames],
        }
    }
}

/// Threshold, then open and close with a length-3 element along the frame axis.
pub fn gate_frames(scores: &[f64], threshold: f64) -> FrameGate {
    let raw: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let gated = gate_morphology(&raw);
    FrameGate {
        scores: scores.to_vec(),
        threshold,
        raw,
        gated,
    }
}

pub fn gate_morphology(raw: &[bool]) -> Vec<bool> {
    close_1d(&open_1d(raw, 3), 3)
}

/// Gate score of one probability map: fraction of A-lines whose peak exceeds 0.5.
pub fn gate_score(probs: &Grid<f32>) -> f64 {
    if probs.rows() == 0 {
        return 0.0;
    }
    let hits = (0..probs.rows())
        .filter(|&a| probs.row(a).iter().any(|&p| p > 0.5))
        .count();
    hits as f64 / probs.rows() as f64
}

/// Everything a segmenter sees for one frame.
pub struct SegmenterInput<'a> {
    /// Pixel-shifted, depth-cropped, filtered intensities.
    pub patch: &'a Grid<f32>,
    pub frame: usize,
    /// Shift that produced the patch from the original frame.
    pub shift: &'a ShiftRecord,
    /// A-lines to ignore (guidewire).
    pub excluded: &'a [bool],
}

/// Provider of per-pixel calcium probabilities in the shifted patch domain.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    /// Output has the patch's shape, values in [0, 1].
    fn segment(&self, input: &SegmenterInput<'_>) -> Grid<f32>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSegmenterConfig {
    /// A-line percentile used as the per-depth tissue reference.
    pub reference_percentile: f64,
    /// Running-median window applied to the reference profile along depth.
    pub reference_window: usize,
    /// Pixels darker than this fraction of the reference are signal-poor.
    pub low_ratio: f64,
    /// Darkness is full at or below this fraction of the reference.
    pub dark_full_ratio: f64,
    /// Border contrast (reference units, border peak minus region mean) at which border evidence is one half.
    pub border_contrast: f64,
    pub border_softness: f64,
    /// Samples averaged on each side of a region border.
    pub border_width: usize,
    /// Trailing columns whose signal tells a shadow from tissue.
    pub shadow_tail_px: usize,
    /// A-lines with tail signal below this fraction of the reference are shadows.
    pub shadow_ratio: f64,
    /// Regions starting shallower than this are judged on either border.
    pub shallow_px: usize,
}

impl Default for ReferenceSegmenterConfig {
    fn default() -> Self {
        Self {
            reference_percentile: 0.75,
            reference_window: 21,
            low_ratio: 0.5,
            dark_full_ratio: 0.3,
            border_contrast: 0.58,
            border_softness: 0.04,
            border_width: 3,
            shadow_tail_px: 30,
            shadow_ratio: 0.25,
            shallow_px: 50,
        }
    }
}

/// Rule-based segmenter: signal-poor regions bounded by a bright, sharp border.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSegmenter {
    pub cfg: ReferenceSegmenterConfig,
}

impl ReferenceSegmenter {
    pub fn new(cfg: ReferenceSegmenterConfig) -> Self {
        Self { cfg }
    }
}

fn percentile(values: &mut [f32], q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let k = ((values.len() - 1) as f64 * q).round() as usize;
    let (_, v, _) = values.select_nth_unstable_by(k, f32::total_cmp);
    *v
}

/// Median over a centered window (truncated at the ends); removes narrow spikes such as rims.
fn running_median(v: &[f32], window: usize) -> Vec<f32> {
    let h = window / 2;
    let mut buf = Vec::with_capacity(window + 1);
    (0..v.len())
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&v[i.saturating_sub(h)..(i + h + 1).min(v.len())]);
            percentile(&mut buf, 0.5)
        })
        .collect()
}

fn peak(row: &[f32], from: usize, to: usize) -> Option<f32> {
    (to > from).then(|| row[from..to].iter().cloned().fold(f32::MIN, f32::max))
}

fn mean(row: &[f32], from: usize, to: usize) -> Option<f32> {
    (to > from).then(|| row[from..to].iter().sum::<f32>() / (to - from) as f32)
}

impl Segmenter for ReferenceSegmenter {
    fn name(&self) -> &str {
        "reference"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn segment(&self, input: &SegmenterInput<'_>) -> Grid<f32> {
        let c = &self.cfg;
        let p = input.patch;
        let (n_a, depth) = (p.rows(), p.cols());
        let mut out = Grid::<f32>::new(n_a, depth);
        if n_a == 0 || depth == 0 {
            return out;
        }
        let tail = c.shadow_tail_px.clamp(1, depth);
        let candidates: Vec<usize> = (0..n_a).filter(|&a| !input.excluded.get(a).copied().unwrap_or(false)).collect();
        // per-depth reference over candidate A-lines
        let mut column = Vec::with_capacity(n_a);
        let mut reference = vec![0.0f32; depth];
        for (j, r) in reference.iter_mut().enumerate() {
            column.clear();
            column.extend(candidates.iter().map(|&a| p.at(a, j)));
            *r = percentile(&mut column, c.reference_percentile);
        }
        let reference = running_median(&reference, c.reference_window);
        let tail_ref = mean(&reference, depth - tail, depth).unwrap_or(0.0);
        if tail_ref <= 0.0 {
            return out;
        }
        let valid: Vec<bool> = (0..n_a)
            .map(|a| {
                !input.excluded.get(a).copied().unwrap_or(false)
                    && mean(p.row(a), depth - tail, depth).unwrap_or(0.0) >= c.shadow_ratio as f32 * tail_ref
            })
            .collect();
        let rel = Grid::from_fn(n_a, depth, |a, j| {
            if reference[j] > 0.0 {
                p.at(a, j) / reference[j]
            } else {
                1.0
            }
        });
        let low = Grid::from_fn(n_a, depth, |a, j| valid[a] && rel.at(a, j) < c.low_ratio as f32);
        let (ids, sizes) = components_8(&low, true);
        // border contrast samples per region
        let mut samples: Vec<Vec<f32>> = vec![Vec::new(); sizes.len()];
        let w = c.border_width.max(1);
        for a in 0..n_a {
            let row = rel.row(a);
            let id_row = ids.row(a);
            let mut j = 0;
            while j < depth {
                let id = id_row[j];
                if id == 0 {
                    j += 1;
                    continue;
                }
                let start = j;
                while j < depth && id_row[j] == id {
                    j += 1;
                }
                let end = j;
                let inside = mean(row, start, (start + w).min(end)).unwrap_or(0.0);
                let inside_end = mean(row, end.saturating_sub(w).max(start), end).unwrap_or(0.0);
                let lead = peak(row, start.saturating_sub(w + 1), start).map_or(0.0, |b| b - inside);
                let trail = if end + w < depth {
                    peak(row, end, end + w + 1).map_or(0.0, |b| b - inside_end)
                } else {
                    0.0
                };
                let s = if start < c.shallow_px { lead.max(trail) } else { lead };
                samples[id as usize - 1].push(s);
            }
        }
        let border: Vec<f32> = samples
            .into_iter()
            .map(|mut s| {
                let m = percentile(&mut s, 0.5) as f64;
                (1.0 / (1.0 + (-(m - c.border_contrast) / c.border_softness).exp())) as f32
            })
            .collect();
        let span = (c.low_ratio - c.dark_full_ratio).max(1e-6) as f32;
        for a in 0..n_a {
            for j in 0..depth {
                let id = ids.at(a, j);
                if id == 0 {
                    continue;
                }
                let dark = ((c.low_ratio as f32 - rel.at(a, j)) / span).clamp(0.0, 1.0);
                let dark = 0.5 + 0.5 * dark;
                out.set(a, j, border[id as usize - 1] * dark);
            }
        }
        out
    }
}

/// Probabilities supplied from outside in the container layout (unshifted frames).
pub struct ExternalSegmenter {
    pub provider: String,
    pub probs: Vec<f32>,
    pub n_alines: usize,
    pub n_r: usize,
}

impl Segmenter for ExternalSegmenter {
    fn name(&self) -> &str {
        &self.provider
    }

    fn version(&self) -> &str {
        "external"
    }

    fn segment(&self, input: &SegmenterInput<'_>) -> Grid<f32> {
        let len = self.n_alines * self.n_r;
        let start = input.frame * len;
        let frame = Grid::from_vec(self.n_alines, self.n_r, self.probs[start..start + len].to_vec())
            .expect("frame-sized slice");
        let shifted = pixel_shift(&frame, input.shift);
        Grid::from_fn(input.patch.rows(), input.patch.cols(), |a, j| {
            if j < shifted.cols() {
                shifted.at(a, j).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub threshold: f64,
    pub opening_kernel: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            opening_kernel: 5,
        }
    }
}

/// Calcium mask of one frame in the original polar layout.
///
/// Thresholds the shifted probabilities, drops excluded A-lines, opens with the
/// disk kernel, maps back through the shift record and removes components
/// smaller than the kernel.
pub fn calcium_mask(probs: &Grid<f32>, shift: &ShiftRecord, excluded: &[bool], n_r: usize, cfg: &PostprocessConfig) -> Grid<bool> {
    let se = StructuringElement::disk(cfg.opening_kernel);
    let mask = Grid::from_fn(probs.rows(), probs.cols(), |a, j| {
        !excluded.get(a).copied().unwrap_or(false) && probs.at(a, j) as f64 >= cfg.threshold
    });
    let opened = open(&mask, &se, true);
    let back = unshift(&opened, shift, n_r);
    remove_small_components(&back, se.len(), true)
}

/// Write calcium onto background pixels of gated frames. Lumen and guidewire are never overwritten.
pub fn postprocess_labels(
    labels: &mut LabelVolume,
    probs: &[Grid<f32>],
    shifts: &[ShiftRecord],
    excluded: &[Vec<bool>],
    gate: &FrameGate,
    cfg: &PostprocessConfig,
) {
    let n_r = labels.n_r();
    let bg = Label::Background.code();
    let ca = Label::Calcium.code();
    for f in 0..labels.n_frames() {
        if !gate.gated.get(f).copied().unwrap_or(false) {
            continue;
        }
        let mask = calcium_mask(&probs[f], &shifts[f], &excluded[f], n_r, cfg);
        let frame = labels.frame_mut(f);
        for (v, &m) in frame.iter_mut().zip(mask.as_slice()) {
            if m && *v == bg {
                *v = ca;
            }
        }
    }
}
