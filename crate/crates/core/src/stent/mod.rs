//! Stent strut analysis: candidate detection from bloom and shadow, feature
//! extraction, strut and coverage classification, stent contour, coverage
//! thickness, malapposition and pullback summaries.

mod codec;
pub mod corpus;
pub mod model;
pub mod svm;
pub mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{aline_angle, Calibration, Contour, PolarFrame, Pullback};
use crate::preprocess::GuidewireBand;

pub use model::{train, ModelKind, TrainOptions, TrainedModel, TrainingSet};

/// Bumped whenever the feature definitions change; stored in model files.
pub const FEATURE_VERSION: u32 = 1;
pub const DETECTOR_FEATURES: usize = 12;
pub const COVERAGE_FEATURES: usize = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StentError {
    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),
    #[error("model kind mismatch: expected {expected:?}, found {found:?}")]
    ModelKindMismatch { expected: ModelKind, found: ModelKind },
    #[error("invalid model file: {0}")]
    ModelFormat(String),
    #[error("{found} strut(s) on frame, at least 2 needed for a contour")]
    InsufficientStruts { found: usize },
    #[error("model io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StentConfig {
    /// Candidate peak must exceed this multiple of the local tissue level.
    pub peak_ratio: f64,
    /// Shadow mean must stay below this multiple of the local tissue level.
    pub shadow_ratio: f64,
    pub shadow_len_px: usize,
    /// Radial search range around the lumen border.
    pub search_inside_px: usize,
    pub search_outside_px: usize,
    /// Adjacent A-line peaks closer than this are merged into one strut.
    pub merge_radius_px: f64,
    /// Depth behind the lumen border used for the tissue level.
    pub tissue_depth_px: usize,
    /// Half-width in A-lines of the window the tissue level is a median over.
    pub tissue_window_alines: usize,
    /// Radial depth of the coverage patches in front of the bloom.
    pub patch_depth_px: usize,
    pub side_gap_alines: usize,
    pub side_width_alines: usize,
    pub detector_threshold: f64,
    pub strut_thickness_um: f64,
    pub malapposition_threshold_um: f64,
    /// Half-width of the circular moving average applied to the lumen border
    /// before coverage and malapposition are measured.
    pub border_smoothing_alines: usize,
}

impl Default for StentConfig {
    fn default() -> Self {
        Self {
            peak_ratio: 1.6,
            shadow_ratio: 0.3,
            shadow_len_px: 30,
            search_inside_px: 140,
            search_outside_px: 70,
            merge_radius_px: 6.0,
            tissue_depth_px: 20,
            tissue_window_alines: 32,
            patch_depth_px: 20,
            side_gap_alines: 2,
            side_width_alines: 4,
            detector_threshold: 0.5,
            strut_thickness_um: 80.0,
            malapposition_threshold_um: 20.0,
            border_smoothing_alines: 8,
        }
    }
}

/// A bright-peak-plus-shadow hit, merged over adjacent A-lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrutCandidate {
    pub frame: usize,
    /// Intensity-weighted angular centroid, rounded.
    pub aline: usize,
    pub aline_pos: f64,
    pub first_aline: usize,
    /// Shadow angular width in A-lines.
    pub width: usize,
    pub lead_px: usize,
    pub trail_px: usize,
    pub center_px: f64,
    pub peak: f64,
    /// Local tissue level used to normalize intensities.
    pub tissue: f64,
    pub shadow_mean: f64,
    pub lumen_px: f64,
}

impl StrutCandidate {
    pub fn extent_px(&self) -> usize {
        self.trail_px + 1 - self.lead_px
    }

    pub fn alines(&self, n_alines: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).map(move |k| (self.first_aline + k) % n_alines)
    }
}

/// Detector features followed by coverage features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrutFeatures {
    pub values: Vec<f64>,
}

impl StrutFeatures {
    pub fn detector(&self) -> &[f64] {
        &self.values[..DETECTOR_FEATURES]
    }

    pub fn coverage(&self) -> &[f64] {
        &self.values[DETECTOR_FEATURES..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Covered,
    Uncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrutRecord {
    pub frame: usize,
    pub aline: usize,
    pub angle_deg: f64,
    pub center_px: f64,
    pub lead_px: usize,
    pub extent_px: usize,
    pub shadow_width: usize,
    pub score: f64,
    pub coverage: Coverage,
    pub coverage_um: f64,
    pub malapposition_um: f64,
    pub malapposed: bool,
}

impl StrutRecord {
    pub fn covered(&self) -> bool {
        self.coverage == Coverage::Covered
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn ratio(x: f64, by: f64) -> f64 {
    if by > 0.0 {
        x / by
    } else {
        0.0
    }
}

fn border_px(border: &Contour, a: usize, n_r: usize) -> usize {
    (border.radii[a].round().max(0.0) as usize).min(n_r)
}

/// Per-A-line tissue level: median over nearby A-lines of the mean intensity
/// just behind the lumen border.
fn tissue_levels(frame: &PolarFrame, border: &Contour, excluded: &[bool], cfg: &StentConfig) -> Vec<f64> {
    let n_a = frame.n_alines();
    let n_r = frame.n_r();
    let near: Vec<Option<f64>> = (0..n_a)
        .map(|a| {
            if excluded[a] {
                return None;
            }
            let c = border_px(border, a, n_r);
            let e = (c + cfg.tissue_depth_px).min(n_r);
            (c < e).then(|| mean(frame.pixels.row(a)[c..e].iter().map(|&v| v as f64)))
        })
        .collect();
    let w = cfg.tissue_window_alines.min(n_a / 2);
    (0..n_a)
        .map(|a| {
            let vals: Vec<f64> = (0..=2 * w)
                .filter_map(|k| near[(a + n_a + k - w) % n_a])
                .collect();
            median(vals)
        })
        .collect()
}

struct Hit {
    peak_r: usize,
    peak: f64,
}

fn aline_hit(row: &[u16], c: usize, tissue: f64, cfg: &StentConfig) -> Option<Hit> {
    let n_r = row.len();
    if tissue <= 0.0 || n_r < cfg.shadow_len_px + 4 {
        return None;
    }
    let lo = c.saturating_sub(cfg.search_inside_px).max(1);
    let hi = (c + cfg.search_outside_px).min(n_r - cfg.shadow_len_px - 2);
    if lo >= hi {
        return None;
    }
    let boxed = |r: usize| (row[r - 1] as f64 + row[r] as f64 + row[r + 1] as f64) / 3.0;
    let mut peak_r = lo;
    let mut peak = boxed(lo);
    for r in lo + 1..hi {
        let v = boxed(r);
        if v > peak {
            peak = v;
            peak_r = r;
        }
    }
    if peak < cfg.peak_ratio * tissue {
        return None;
    }
    let half = peak / 2.0;
    let mut trail = peak_r;
    while trail + 1 < n_r && row[trail + 1] as f64 >= half {
        trail += 1;
    }
    let s = (trail + 2).min(n_r);
    let e = (s + cfg.shadow_len_px).min(n_r);
    let shadow = mean(row[s..e].iter().map(|&v| v as f64));
    (e > s && shadow < cfg.shadow_ratio * tissue).then_some(Hit { peak_r, peak })
}

/// Bloom-plus-shadow candidates on one frame. `excluded` marks A-lines that are
/// never searched (guidewire shadow).
pub fn detect_candidates(
    frame: &PolarFrame,
    border: &Contour,
    excluded: &[bool],
    cfg: &StentConfig,
) -> Vec<StrutCandidate> {
    let n_a = frame.n_alines();
    let n_r = frame.n_r();
    if n_a == 0 || border.len() != n_a {
        return Vec::new();
    }
    let tissue = tissue_levels(frame, border, excluded, cfg);
    let hits: Vec<Option<Hit>> = (0..n_a)
        .map(|a| {
            if excluded[a] {
                None
            } else {
                aline_hit(frame.pixels.row(a), border_px(border, a, n_r), tissue[a], cfg)
            }
        })
        .collect();
    // walk the circle from an A-line without a hit so no run is split at 0
    let start = (0..n_a).find(|&a| hits[a].is_none()).unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in 0..n_a {
        let a = (start + i) % n_a;
        match &hits[a] {
            Some(h) => {
                let joins = current.last().is_some_and(|&p| {
                    let prev = hits[p].as_ref().expect("hit");
                    (prev.peak_r as f64 - h.peak_r as f64).abs() <= cfg.merge_radius_px
                });
                if !joins && !current.is_empty() {
                    groups.push(std::mem::take(&mut current));
                }
                current.push(a);
            }
            None => {
                if !current.is_empty() {
                    groups.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }
    let mut out: Vec<StrutCandidate> = groups
        .iter()
        .map(|g| {
            let group_hits: Vec<&Hit> = g.iter().map(|&a| hits[a].as_ref().expect("hit")).collect();
            merge_group(frame, border, g, &group_hits, &tissue, cfg)
        })
        .collect();
    out.sort_by_key(|c| c.aline);
    out
}

fn averaged_profile(frame: &PolarFrame, alines: &[usize]) -> Vec<f64> {
    let n_r = frame.n_r();
    let mut prof = vec![0.0; n_r];
    for &a in alines {
        for (p, &v) in prof.iter_mut().zip(frame.pixels.row(a)) {
            *p += v as f64;
        }
    }
    let k = alines.len().max(1) as f64;
    prof.iter_mut().for_each(|p| *p /= k);
    prof
}

fn merge_group(
    frame: &PolarFrame,
    border: &Contour,
    g: &[usize],
    hits: &[&Hit],
    tissue: &[f64],
    cfg: &StentConfig,
) -> StrutCandidate {
    let n_a = frame.n_alines();
    let n_r = frame.n_r();
    let wsum: f64 = hits.iter().map(|h| h.peak).sum();
    let offset = hits.iter().enumerate().map(|(k, h)| k as f64 * h.peak).sum::<f64>() / wsum;
    let aline_pos = (g[0] as f64 + offset).rem_euclid(n_a as f64);
    let aline = (aline_pos.round() as usize) % n_a;
    let prof = averaged_profile(frame, g);
    let lo = hits.iter().map(|h| h.peak_r).min().expect("non-empty").saturating_sub(3);
    let hi = (hits.iter().map(|h| h.peak_r).max().expect("non-empty") + 4).min(n_r);
    let mut peak_r = lo;
    for r in lo..hi {
        if prof[r] > prof[peak_r] {
            peak_r = r;
        }
    }
    let peak = prof[peak_r];
    let half = peak / 2.0;
    let mut lead = peak_r;
    while lead > 0 && prof[lead - 1] >= half {
        lead -= 1;
    }
    let mut trail = peak_r;
    while trail + 1 < n_r && prof[trail + 1] >= half {
        trail += 1;
    }
    let s = (trail + 2).min(n_r);
    let e = (s + cfg.shadow_len_px).min(n_r);
    StrutCandidate {
        frame: frame.index,
        aline,
        aline_pos,
        first_aline: g[0],
        width: g.len(),
        lead_px: lead,
        trail_px: trail,
        center_px: (lead + trail) as f64 / 2.0,
        peak,
        tissue: mean(g.iter().map(|&a| tissue[a])),
        shadow_mean: mean(prof[s..e].iter().copied()),
        lumen_px: border.radii[aline],
    }
}

/// Seven intensity statistics of a patch, normalized by the tissue level.
fn patch_stats(frame: &PolarFrame, alines: &[usize], r0: usize, r1: usize, tissue: f64) -> [f64; 7] {
    let mut vals = Vec::new();
    let mut near = Vec::new();
    for &a in alines {
        let row = frame.pixels.row(a);
        for (r, &v) in row.iter().enumerate().take(r1).skip(r0) {
            let x = ratio(v as f64, tissue);
            vals.push(x);
            if r + 5 >= r1 {
                near.push(x);
            }
        }
    }
    if vals.is_empty() {
        return [0.0; 7];
    }
    let m = mean(vals.iter().copied());
    let sd = mean(vals.iter().map(|v| (v - m) * (v - m))).sqrt();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let bright = vals.iter().filter(|&&v| v > 0.5).count() as f64 / vals.len() as f64;
    let near_mean = mean(near.iter().copied());
    [m, sd, median(vals), max, min, bright, near_mean]
}

/// Fixed-length feature vector of one candidate: 12 bloom/shadow features then
/// 21 center/side patch features.
pub fn extract_features(c: &StrutCandidate, frame: &PolarFrame, cfg: &StentConfig) -> StrutFeatures {
    let n_a = frame.n_alines();
    let n_r = frame.n_r();
    let t = c.tissue;
    let center: Vec<usize> = c.alines(n_a).collect();
    let prof = averaged_profile(frame, &center);
    let lead = c.lead_px.min(n_r.saturating_sub(1));
    let trail = c.trail_px.min(n_r.saturating_sub(1));
    let at = |r: usize| prof.get(r).copied().unwrap_or(0.0);
    let span = |s: usize, e: usize| mean(prof[s.min(n_r)..e.min(n_r)].iter().copied());
    let lead_edge = ratio(at(lead) - if lead > 0 { at(lead - 1) } else { 0.0 }, c.peak);
    let trail_edge = ratio(at(trail) - at(trail + 1), c.peak);
    let tail = &prof[(trail + 2).min(n_r)..];
    let dark = if t > 0.0 && !tail.is_empty() {
        tail.iter().filter(|&&v| v < 0.1 * t).count() as f64 / tail.len() as f64
    } else {
        0.0
    };
    let side = |first: usize, dir_left: bool| -> Vec<usize> {
        (0..cfg.side_width_alines)
            .map(|k| {
                let d = cfg.side_gap_alines + k + 1;
                if dir_left {
                    (first + n_a * 2 - d) % n_a
                } else {
                    (first + d) % n_a
                }
            })
            .collect()
    };
    let last = (c.first_aline + c.width.max(1) - 1) % n_a;
    let left = side(c.first_aline, true);
    let right = side(last, false);
    let sides: Vec<usize> = left.iter().chain(&right).copied().collect();
    let side_bloom = mean(sides.iter().flat_map(|&a| {
        frame.pixels.row(a)[lead..=trail].iter().map(|&v| v as f64)
    }));
    let per_line_peaks: Vec<f64> = center
        .iter()
        .map(|&a| {
            frame.pixels.row(a)[lead..=trail]
                .iter()
                .map(|&v| v as f64)
                .fold(0.0, f64::max)
        })
        .collect();
    let pm = mean(per_line_peaks.iter().copied());
    let psd = mean(per_line_peaks.iter().map(|v| (v - pm) * (v - pm))).sqrt();
    let mut values = vec![
        ratio(c.peak, t),
        c.extent_px() as f64,
        ratio(c.shadow_mean, t),
        c.width as f64,
        lead_edge,
        trail_edge,
        c.lead_px as f64 - c.lumen_px,
        ratio(span(trail + 40, trail + 120), t),
        dark,
        ratio(side_bloom, t),
        ratio(side_bloom, c.peak),
        ratio(psd, pm),
    ];
    let r0 = c.lead_px.saturating_sub(cfg.patch_depth_px);
    for patch in [&center, &left, &right] {
        values.extend(patch_stats(frame, patch, r0, c.lead_px, t));
    }
    debug_assert_eq!(values.len(), DETECTOR_FEATURES + COVERAGE_FEATURES);
    StrutFeatures { values }
}

/// Keep candidates whose detector score reaches `threshold`.
pub fn classify_struts(
    candidates: &[StrutCandidate],
    features: &[StrutFeatures],
    model: &TrainedModel,
    threshold: f64,
    n_alines: usize,
) -> Result<Vec<StrutRecord>, StentError> {
    model.expect_kind(ModelKind::StrutDetector)?;
    Ok(candidates
        .iter()
        .zip(features)
        .filter_map(|(c, f)| {
            let score = model.score(f.detector());
            (score >= threshold).then(|| StrutRecord {
                frame: c.frame,
                aline: c.aline,
                angle_deg: aline_angle(c.aline, n_alines).to_degrees(),
                center_px: c.center_px,
                lead_px: c.lead_px,
                extent_px: c.extent_px(),
                shadow_width: c.width,
                score,
                coverage: Coverage::Uncovered,
                coverage_um: 0.0,
                malapposition_um: 0.0,
                malapposed: false,
            })
        })
        .collect())
}

/// Covered when the classifier says so and tissue lies in front of the bloom.
/// Returns the label and the coverage thickness in µm (0 when uncovered).
pub fn classify_coverage(
    strut: &StrutRecord,
    features: &StrutFeatures,
    border: &Contour,
    model: &TrainedModel,
    cal: &Calibration,
) -> Result<(Coverage, f64), StentError> {
    model.expect_kind(ModelKind::CoverageClassifier)?;
    let tissue_px = strut.lead_px as f64 - border.radii[strut.aline];
    if model.predict(features.coverage()) && tissue_px > 0.0 {
        Ok((Coverage::Covered, tissue_px * cal.r_pixel_um))
    } else {
        Ok((Coverage::Uncovered, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Malapposition {
    /// Distance from the strut center to the nearest lumen boundary point.
    pub distance_um: f64,
    /// Strut center lies inside the lumen.
    pub luminal: bool,
    pub malapposed: bool,
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

/// Distance from a strut center at `(aline, center_px)` to the lumen polygon.
pub fn measure_malapposition(
    aline: usize,
    center_px: f64,
    border: &Contour,
    cal: &Calibration,
    strut_thickness_um: f64,
    threshold_um: f64,
) -> Malapposition {
    let n = border.len();
    let t = aline_angle(aline, n);
    let p = (center_px * t.cos(), center_px * t.sin());
    let pts = border.cartesian_points();
    let d = (0..n)
        .map(|i| point_segment_distance(p, pts[i], pts[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min);
    let distance_um = d * cal.r_pixel_um;
    let luminal = center_px < border.radii[aline];
    Malapposition {
        distance_um,
        luminal,
        malapposed: luminal && distance_um > strut_thickness_um + threshold_um,
    }
}

/// Periodic linear interpolation of strut `(aline position, radius)` points.
pub fn fit_stent_contour(points: &[(f64, f64)], n_alines: usize) -> Result<Contour, StentError> {
    let n = n_alines as f64;
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(a, r)| (a.rem_euclid(n), r)).collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    pts.dedup_by(|b, a| (b.0 - a.0).abs() < 1e-9);
    if pts.len() < 2 {
        return Err(StentError::InsufficientStruts { found: pts.len() });
    }
    let k = pts.len();
    let radii = (0..n_alines)
        .map(|i| {
            let x = i as f64;
            // segment j runs from pts[j] to pts[j + 1], the last one wrapping
            let j = match pts.iter().rposition(|p| p.0 <= x) {
                Some(j) => j,
                None => k - 1,
            };
            let (a0, r0) = pts[j];
            let (mut a1, r1) = pts[(j + 1) % k];
            let mut xx = x;
            if j == k - 1 {
                a1 += n;
                if x < a0 {
                    xx += n;
                }
            }
            r0 + (r1 - r0) * (xx - a0) / (a1 - a0)
        })
        .collect();
    Ok(Contour::closed(radii))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStentSummary {
    pub frame: usize,
    pub n_struts: usize,
    pub covered: usize,
    pub uncovered: usize,
    pub malapposed: usize,
    pub percent_covered: f64,
    pub mean_coverage_um: Option<f64>,
    pub mean_malapposition_um: Option<f64>,
    pub max_malapposition_um: Option<f64>,
}

/// Run of consecutive frames, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub length_mm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StentReport {
    pub frames: Vec<FrameStentSummary>,
    pub n_struts: usize,
    pub covered: usize,
    pub uncovered: usize,
    pub malapposed: usize,
    pub malapposed_segments: Vec<FrameSegment>,
    pub uncovered_segments: Vec<FrameSegment>,
    pub malapposed_length_mm: f64,
    pub uncovered_length_mm: f64,
}

fn segments(flags: &[(usize, bool)], spacing_mm: f64) -> Vec<FrameSegment> {
    let mut out: Vec<FrameSegment> = Vec::new();
    for &(f, on) in flags {
        if !on {
            continue;
        }
        match out.last_mut() {
            Some(s) if s.end_frame + 1 == f => s.end_frame = f,
            _ => out.push(FrameSegment { start_frame: f, end_frame: f, length_mm: 0.0 }),
        }
    }
    for s in &mut out {
        s.length_mm = (s.end_frame - s.start_frame + 1) as f64 * spacing_mm;
    }
    out
}

/// Per-frame counts and contiguous malapposed / uncovered segments.
pub fn summarize_stent(records: &[StrutRecord], frame_spacing_mm: f64) -> StentReport {
    let mut by_frame: std::collections::BTreeMap<usize, Vec<&StrutRecord>> = Default::default();
    for r in records {
        by_frame.entry(r.frame).or_default().push(r);
    }
    let mut frames = Vec::new();
    for (&frame, rs) in &by_frame {
        let covered: Vec<&&StrutRecord> = rs.iter().filter(|r| r.covered()).collect();
        let mal: Vec<f64> = rs.iter().filter(|r| r.malapposed).map(|r| r.malapposition_um).collect();
        frames.push(FrameStentSummary {
            frame,
            n_struts: rs.len(),
            covered: covered.len(),
            uncovered: rs.len() - covered.len(),
            malapposed: mal.len(),
            percent_covered: 100.0 * covered.len() as f64 / rs.len() as f64,
            mean_coverage_um: (!covered.is_empty()).then(|| mean(covered.iter().map(|r| r.coverage_um))),
            mean_malapposition_um: (!mal.is_empty()).then(|| mean(mal.iter().copied())),
            max_malapposition_um: mal.iter().copied().reduce(f64::max),
        });
    }
    let mal_flags: Vec<(usize, bool)> = frames.iter().map(|s| (s.frame, s.malapposed > 0)).collect();
    let unc_flags: Vec<(usize, bool)> = frames.iter().map(|s| (s.frame, s.uncovered > 0)).collect();
    let malapposed_segments = segments(&mal_flags, frame_spacing_mm);
    let uncovered_segments = segments(&unc_flags, frame_spacing_mm);
    StentReport {
        n_struts: records.len(),
        covered: records.iter().filter(|r| r.covered()).count(),
        uncovered: records.iter().filter(|r| !r.covered()).count(),
        malapposed: records.iter().filter(|r| r.malapposed).count(),
        malapposed_length_mm: malapposed_segments.iter().map(|s| s.length_mm).sum(),
        uncovered_length_mm: uncovered_segments.iter().map(|s| s.length_mm).sum(),
        malapposed_segments,
        uncovered_segments,
        frames,
    }
}

/// The detector and coverage classifier used together.
#[derive(Debug, Clone, PartialEq)]
pub struct StentModels {
    pub detector: TrainedModel,
    pub coverage: TrainedModel,
}

impl StentModels {
    pub fn new(detector: TrainedModel, coverage: TrainedModel) -> Result<Self, StentError> {
        detector.expect_kind(ModelKind::StrutDetector)?;
        coverage.expect_kind(ModelKind::CoverageClassifier)?;
        Ok(Self { detector, coverage })
    }
}

/// Circular moving average of a closed border.
pub fn smooth_border(border: &Contour, half_width: usize) -> Contour {
    let n = border.len();
    if half_width == 0 || n == 0 {
        return border.clone();
    }
    let w = half_width.min((n - 1) / 2);
    let radii = (0..n)
        .map(|a| mean((0..=2 * w).map(|k| border.radii[(a + n + k - w) % n])))
        .collect();
    Contour::closed(radii)
}

/// Full analysis of one frame against a lumen border.
pub fn analyze_frame(
    frame: &PolarFrame,
    border: &Contour,
    excluded: &[bool],
    models: &StentModels,
    cal: &Calibration,
    cfg: &StentConfig,
) -> Result<Vec<StrutRecord>, StentError> {
    let n_a = frame.n_alines();
    let candidates = detect_candidates(frame, border, excluded, cfg);
    let features: Vec<StrutFeatures> = candidates.iter().map(|c| extract_features(c, frame, cfg)).collect();
    models.detector.expect_kind(ModelKind::StrutDetector)?;
    let smooth = smooth_border(border, cfg.border_smoothing_alines);
    let mut out = Vec::new();
    for (c, f) in candidates.iter().zip(&features) {
        let Some(mut rec) =
            classify_struts(std::slice::from_ref(c), std::slice::from_ref(f), &models.detector, cfg.detector_threshold, n_a)?
                .pop()
        else {
            continue;
        };
        let (coverage, um) = classify_coverage(&rec, f, &smooth, &models.coverage, cal)?;
        rec.coverage = coverage;
        rec.coverage_um = um;
        let m = measure_malapposition(
            rec.aline,
            rec.center_px,
            &smooth,
            cal,
            cfg.strut_thickness_um,
            cfg.malapposition_threshold_um,
        );
        if coverage == Coverage::Uncovered && m.luminal {
            rec.malapposition_um = m.distance_um;
            rec.malapposed = m.malapposed;
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StentAnalysis {
    pub records: Vec<StrutRecord>,
    /// Stent contour per frame; `None` when fewer than two struts were found.
    pub contours: Vec<Option<Contour>>,
    pub report: StentReport,
}

/// Analyze every frame that has a lumen border.
pub fn analyze_stent(
    pullback: &Pullback,
    borders: &[Option<Contour>],
    band: Option<&GuidewireBand>,
    models: &StentModels,
    cfg: &StentConfig,
) -> Result<StentAnalysis, StentError> {
    let n_a = pullback.n_alines();
    let cal = pullback.calibration;
    let per_frame: Vec<Result<Vec<StrutRecord>, StentError>> = pullback
        .frames()
        .par_iter()
        .enumerate()
        .map(|(f, frame)| match borders.get(f).and_then(Option::as_ref) {
            Some(border) => {
                let excluded = band.map_or_else(|| vec![false; n_a], |b| b.mask(f));
                analyze_frame(frame, border, &excluded, models, &cal, cfg)
            }
            None => Ok(Vec::new()),
        })
        .collect();
    let mut records = Vec::new();
    let mut contours = Vec::with_capacity(per_frame.len());
    for r in per_frame {
        let rs = r?;
        let pts: Vec<(f64, f64)> = rs.iter().map(|s| (s.aline as f64, s.center_px)).collect();
        contours.push(fit_stent_contour(&pts, n_a).ok());
        records.extend(rs);
    }
    let report = summarize_stent(&records, cal.frame_spacing_mm);
    Ok(StentAnalysis { records, contours, report })
}
