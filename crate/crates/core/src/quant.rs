//! Lumen and calcium measurements, lesion summaries, calcium score, en face and
//! longitudinal views, manual measurements.
//!
//! Every per-frame value is computed from a label frame so edited and automated
//! labels go through the same path.

use serde::{Deserialize, Serialize};

use crate::model::{aline_angle, aline_for_degrees, Calibration, Contour, Grid, Label, LabelVolume, Pullback};
use crate::preprocess::bridge_gaps;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFlags {
    pub guidewire_interpolated: bool,
    pub segmentation_failed: bool,
}

impl FrameFlags {
    /// Compact text form used in CSV output.
    pub fn code(&self) -> String {
        let mut parts = Vec::new();
        if self.guidewire_interpolated {
            parts.push("gw");
        }
        if self.segmentation_failed {
            parts.push("segfail");
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameQuant {
    pub frame: usize,
    pub lumen_area_mm2: Option<f64>,
    pub diam_max_mm: Option<f64>,
    pub diam_min_mm: Option<f64>,
    pub diam_mean_mm: Option<f64>,
    pub calc_angle_deg: f64,
    pub calc_max_thickness_mm: Option<f64>,
    pub calc_min_depth_mm: Option<f64>,
    pub gated: bool,
    pub flags: FrameFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumenQuant {
    pub area_mm2: f64,
    pub diam_max_mm: f64,
    pub diam_min_mm: f64,
    pub diam_mean_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalciumQuant {
    pub angle_deg: f64,
    pub max_thickness_mm: Option<f64>,
    pub min_depth_mm: Option<f64>,
}

fn polygon_mm(contour: &Contour, cal: &Calibration) -> Vec<(f64, f64)> {
    let px = cal.r_pixel_mm();
    contour
        .cartesian_points()
        .into_iter()
        .map(|(x, y)| (x * px, y * px))
        .collect()
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

/// Area centroid of a simple polygon (vertex mean if degenerate).
pub fn polygon_centroid(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len();
    let area = shoelace(pts);
    if area.abs() < 1e-12 {
        let k = n.max(1) as f64;
        return (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let cross = a.0 * b.1 - b.0 * a.1;
        cx += (a.0 + b.0) * cross;
        cy += (a.1 + b.1) * cross;
    }
    (cx / (6.0 * area), cy / (6.0 * area))
}

/// Length of the chord through `c` in direction `phi` across the polygon.
fn chord(pts: &[(f64, f64)], c: (f64, f64), phi: f64) -> f64 {
    let d = (phi.cos(), phi.sin());
    let n = pts.len();
    let (mut t_min, mut t_max) = (0.0f64, 0.0f64);
    for i in 0..n {
        let (p, q) = (pts[i], pts[(i + 1) % n]);
        let e = (q.0 - p.0, q.1 - p.1);
        let denom = d.0 * (-e.1) - d.1 * (-e.0);
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = (p.0 - c.0, p.1 - c.1);
        let t = (w.0 * (-e.1) - w.1 * (-e.0)) / denom;
        let s = (d.0 * w.1 - d.1 * w.0) / denom;
        if (-1e-9..=1.0 + 1e-9).contains(&s) {
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
    }
    t_max - t_min
}

/// Shoelace area and centroid chords sampled at every A-line angle over 180 degrees.
pub fn lumen_quant(contour: &Contour, cal: &Calibration) -> LumenQuant {
    let pts = polygon_mm(contour, cal);
    let n = pts.len();
    let c = polygon_centroid(&pts);
    let chords: Vec<f64> = (0..(n / 2).max(1)).map(|k| chord(&pts, c, aline_angle(k, n))).collect();
    LumenQuant {
        area_mm2: shoelace(&pts).abs(),
        diam_max_mm: chords.iter().cloned().fold(f64::MIN, f64::max),
        diam_min_mm: chords.iter().cloned().fold(f64::MAX, f64::min),
        diam_mean_mm: chords.iter().sum::<f64>() / chords.len() as f64,
    }
}

/// Longest circular run of set entries after closing single-entry gaps.
pub fn longest_arc(present: &[bool]) -> usize {
    crate::phantom::longest_arc_closing_single_gaps(present)
}

/// Longest contiguous run of calcium along one A-line and the index of its first calcium pixel.
fn aline_calcium(aline: &[u8]) -> Option<(usize, usize)> {
    let code = Label::Calcium.code();
    let first = aline.iter().position(|&v| v == code)?;
    let mut best = 0;
    let mut run = 0;
    for &v in &aline[first..] {
        if v == code {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    Some((best, first))
}

/// Calcium angle, thickness and depth for one label frame; `border[a]` is the lumen radius.
pub fn calcium_quant(labels: &[u8], n_alines: usize, n_r: usize, border: &[f64], cal: &Calibration) -> CalciumQuant {
    let px = cal.r_pixel_mm();
    let gw = Label::Guidewire.code();
    let mut present = vec![false; n_alines];
    let mut thick: Option<usize> = None;
    let mut depth: Option<f64> = None;
    for a in 0..n_alines {
        let aline = &labels[a * n_r..(a + 1) * n_r];
        if aline[0] == gw {
            continue;
        }
        if let Some((t, first)) = aline_calcium(aline) {
            present[a] = true;
            thick = Some(thick.map_or(t, |v| v.max(t)));
            let d = (first as f64 - border[a].round()).max(0.0);
            depth = Some(depth.map_or(d, |v| v.min(d)));
        }
    }
    CalciumQuant {
        angle_deg: longest_arc(&present) as f64 * 360.0 / n_alines as f64,
        max_thickness_mm: thick.map(|t| t as f64 * px),
        min_depth_mm: depth.map(|d| d * px),
    }
}

/// Lumen border per A-line read from labels: one past the outermost lumen pixel.
/// Guidewire A-lines and A-lines without lumen are bridged by interpolation.
/// Returns `None` when no A-line carries lumen.
pub fn border_from_labels(labels: &[u8], n_alines: usize, n_r: usize) -> Option<(Contour, bool)> {
    let lumen = Label::Lumen.code();
    let mut radii = vec![0.0; n_alines];
    let mut gap = vec![false; n_alines];
    for a in 0..n_alines {
        let aline = &labels[a * n_r..(a + 1) * n_r];
        match aline.iter().rposition(|&v| v == lumen) {
            Some(i) => radii[a] = (i + 1) as f64,
            None => gap[a] = true,
        }
    }
    if gap.iter().all(|&g| g) {
        return None;
    }
    let bridged = gap.iter().any(|&g| g);
    Some((Contour::closed(bridge_gaps(&radii, &gap)), bridged))
}

/// Full per-frame measurement from one label frame.
pub fn frame_quant(
    frame: usize,
    labels: &[u8],
    n_alines: usize,
    n_r: usize,
    cal: &Calibration,
    gated: bool,
    segmentation_failed: bool,
) -> FrameQuant {
    let border = if segmentation_failed { None } else { border_from_labels(labels, n_alines, n_r) };
    let guidewire = (0..n_alines).any(|a| labels[a * n_r] == Label::Guidewire.code());
    let mut q = FrameQuant {
        frame,
        lumen_area_mm2: None,
        diam_max_mm: None,
        diam_min_mm: None,
        diam_mean_mm: None,
        calc_angle_deg: 0.0,
        calc_max_thickness_mm: None,
        calc_min_depth_mm: None,
        gated,
        flags: FrameFlags {
            guidewire_interpolated: guidewire,
            segmentation_failed: segmentation_failed || border.is_none(),
        },
    };
    let Some((contour, _)) = border else {
        return q;
    };
    let l = lumen_quant(&contour, cal);
    q.lumen_area_mm2 = Some(l.area_mm2);
    q.diam_max_mm = Some(l.diam_max_mm);
    q.diam_min_mm = Some(l.diam_min_mm);
    q.diam_mean_mm = Some(l.diam_mean_mm);
    let c = calcium_quant(labels, n_alines, n_r, &contour.radii, cal);
    q.calc_angle_deg = c.angle_deg;
    q.calc_max_thickness_mm = c.max_thickness_mm;
    q.calc_min_depth_mm = c.min_depth_mm;
    q
}

/// Measure every frame of a label volume.
pub fn quantify(labels: &LabelVolume, cal: &Calibration, gate: &[bool], failed: &[bool]) -> Vec<FrameQuant> {
    use rayon::prelude::*;
    (0..labels.n_frames())
        .into_par_iter()
        .map(|f| {
            frame_quant(
                f,
                labels.frame(f),
                labels.n_alines(),
                labels.n_r(),
                cal,
                gate.get(f).copied().unwrap_or(false),
                failed.get(f).copied().unwrap_or(false),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreThresholds {
    pub angle_deg: f64,
    pub length_mm: f64,
    pub thickness_mm: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        Self {
            angle_deg: 180.0,
            length_mm: 5.0,
            thickness_mm: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionQuant {
    pub start_frame: usize,
    pub end_frame: usize,
    pub length_mm: f64,
    pub max_angle_deg: f64,
    pub max_thickness_mm: Option<f64>,
    pub min_depth_mm: Option<f64>,
    pub score: u8,
}

impl LesionQuant {
    pub fn n_frames(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

/// Points 0 to 4: +2 for angle, +1 for length, +1 for thickness above threshold.
pub fn calcium_score(max_angle_deg: f64, length_mm: f64, max_thickness_mm: f64, t: &ScoreThresholds) -> u8 {
    let mut s = 0;
    if max_angle_deg > t.angle_deg {
        s += 2;
    }
    if length_mm > t.length_mm {
        s += 1;
    }
    if max_thickness_mm > t.thickness_mm {
        s += 1;
    }
    s
}

fn opt_max(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn opt_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Maximal gated runs with extrema of their frame attributes.
pub fn lesion_quant(frames: &[FrameQuant], gate: &[bool], cal: &Calibration, t: &ScoreThresholds) -> Vec<LesionQuant> {
    let mut out = Vec::new();
    let mut f = 0;
    while f < gate.len() {
        if !gate[f] {
            f += 1;
            continue;
        }
        let start = f;
        while f < gate.len() && gate[f] {
            f += 1;
        }
        let end = f - 1;
        let run = &frames[start..=end];
        let max_angle = run.iter().map(|q| q.calc_angle_deg).fold(0.0, f64::max);
        let thick = run.iter().fold(None, |acc, q| opt_max(acc, q.calc_max_thickness_mm));
        let depth = run.iter().fold(None, |acc, q| opt_min(acc, q.calc_min_depth_mm));
        let length = (end - start + 1) as f64 * cal.frame_spacing_mm;
        out.push(LesionQuant {
            start_frame: frames[start].frame,
            end_frame: frames[end].frame,
            length_mm: length,
            max_angle_deg: max_angle,
            max_thickness_mm: thick,
            min_depth_mm: depth,
            score: calcium_score(max_angle, length, thick.unwrap_or(0.0), t),
        });
    }
    out
}

/// Value marking bins without calcium in the thickness and depth maps.
pub const ENFACE_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnFaceMaps {
    pub bins: usize,
    pub presence: Grid<bool>,
    pub thickness_mm: Grid<f64>,
    pub depth_mm: Grid<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnFaceKind {
    Angle,
    Thickness,
    Depth,
}

impl EnFaceMaps {
    /// Values of one map, presence as 0/1.
    pub fn values(&self, kind: EnFaceKind) -> Grid<f64> {
        match kind {
            EnFaceKind::Angle => self.presence.map(|&p| if p { 1.0 } else { 0.0 }),
            EnFaceKind::Thickness => self.thickness_mm.clone(),
            EnFaceKind::Depth => self.depth_mm.clone(),
        }
    }
}

/// Frame-by-bin calcium maps. A-line `a` falls in bin `a * bins / n_alines`.
pub fn enface_maps(labels: &LabelVolume, cal: &Calibration, bins: usize) -> EnFaceMaps {
    let (n_f, n_a, n_r) = (labels.n_frames(), labels.n_alines(), labels.n_r());
    let bins = bins.clamp(1, n_a);
    let px = cal.r_pixel_mm();
    let mut presence = Grid::<bool>::new(n_f, bins);
    let mut thickness = Grid::<f64>::filled(n_f, bins, ENFACE_SENTINEL);
    let mut depth = Grid::<f64>::filled(n_f, bins, ENFACE_SENTINEL);
    for f in 0..n_f {
        let frame = labels.frame(f);
        let border = border_from_labels(frame, n_a, n_r).map(|(c, _)| c.radii);
        for a in 0..n_a {
            let aline = &frame[a * n_r..(a + 1) * n_r];
            if aline[0] == Label::Guidewire.code() {
                continue;
            }
            let Some((t, first)) = aline_calcium(aline) else {
                continue;
            };
            let b = a * bins / n_a;
            presence.set(f, b, true);
            let t_mm = t as f64 * px;
            if t_mm > thickness.at(f, b) {
                thickness.set(f, b, t_mm);
            }
            if let Some(border) = &border {
                let d_mm = (first as f64 - border[a].round()).max(0.0) * px;
                let cur = depth.at(f, b);
                if cur == ENFACE_SENTINEL || d_mm < cur {
                    depth.set(f, b, d_mm);
                }
            }
        }
    }
    EnFaceMaps {
        bins,
        presence,
        thickness_mm: thickness,
        depth_mm: depth,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalView {
    /// Frames by `2 * n_r`: left half is the opposite A-line reversed, right half the A-line at the angle.
    pub pixels: Grid<u16>,
    pub labels: Grid<u8>,
    pub alines: (usize, usize),
}

/// Cut view through the pullback at a projection angle.
pub fn longitudinal_view(pullback: &Pullback, labels: Option<&LabelVolume>, angle_deg: f64) -> LongitudinalView {
    let (n_f, n_a, n_r) = (pullback.n_frames(), pullback.n_alines(), pullback.n_r());
    let right = aline_for_degrees(angle_deg, n_a);
    let left = aline_for_degrees(angle_deg + 180.0, n_a);
    let mut pixels = Grid::<u16>::new(n_f, 2 * n_r);
    let mut lab = Grid::<u8>::new(n_f, 2 * n_r);
    for f in 0..n_f {
        let frame = &pullback.frame(f).pixels;
        let row = pixels.row_mut(f);
        for r in 0..n_r {
            row[n_r - 1 - r] = frame.at(left, r);
            row[n_r + r] = frame.at(right, r);
        }
        if let Some(l) = labels {
            let (la, ra) = (l.aline(f, left), l.aline(f, right));
            let row = lab.row_mut(f);
            for r in 0..n_r {
                row[n_r - 1 - r] = la[r];
                row[n_r + r] = ra[r];
            }
        }
    }
    LongitudinalView {
        pixels,
        labels: lab,
        alines: (left, right),
    }
}

/// Manual measurement request. Points are cartesian pixels about the catheter center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measurement {
    /// Angle at `vertex` between rays toward `a` and `b`.
    Angle { vertex: [f64; 2], a: [f64; 2], b: [f64; 2] },
    /// Cross-sectional distance.
    Length { a: [f64; 2], b: [f64; 2] },
    /// Longitudinal distance between two frames.
    FrameSpan { from: usize, to: usize },
}

/// Result in degrees for angles, millimeters otherwise. `None` for degenerate rays.
pub fn manual_measure(m: &Measurement, cal: &Calibration) -> Option<f64> {
    match *m {
        Measurement::Angle { vertex, a, b } => {
            let u = (a[0] - vertex[0], a[1] - vertex[1]);
            let v = (b[0] - vertex[0], b[1] - vertex[1]);
            let (nu, nv) = (u.0.hypot(u.1), v.0.hypot(v.1));
            if nu == 0.0 || nv == 0.0 {
                return None;
            }
            let cross = u.0 * v.1 - u.1 * v.0;
            let dot = u.0 * v.0 + u.1 * v.1;
            Some(cross.abs().atan2(dot).to_degrees())
        }
        Measurement::Length { a, b } => Some((a[0] - b[0]).hypot(a[1] - b[1]) * cal.r_pixel_mm()),
        Measurement::FrameSpan { from, to } => Some(from.abs_diff(to) as f64 * cal.frame_spacing_mm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cal() -> Calibration {
        Calibration::default()
    }

    fn ellipse_contour(n: usize, a_px: f64, b_px: f64) -> Contour {
        Contour::closed(
            (0..n)
                .map(|i| {
                    let t = aline_angle(i, n);
                    1.0 / ((t.cos() / a_px).powi(2) + (t.sin() / b_px).powi(2)).sqrt()
                })
                .collect(),
        )
    }

    #[test]
    fn circle_area_and_diameters() {
        let q = lumen_quant(&Contour::closed(vec![300.0; 504]), &cal());
        assert!((q.area_mm2 - PI * 1.5 * 1.5).abs() / (PI * 2.25) < 0.005);
        for d in [q.diam_max_mm, q.diam_min_mm, q.diam_mean_mm] {
            assert!((d - 3.0).abs() <= 0.005, "{d}");
        }
    }

    #[test]
    fn ellipse_area_and_diameters() {
        let q = lumen_quant(&ellipse_contour(504, 360.0, 240.0), &cal());
        assert!((q.area_mm2 - PI * 1.2 * 1.8).abs() / (PI * 1.2 * 1.8) < 0.005);
        assert!((q.diam_max_mm - 3.6).abs() <= 0.01);
        assert!((q.diam_min_mm - 2.4).abs() <= 0.01);
        assert!(q.diam_min_mm <= q.diam_mean_mm && q.diam_mean_mm <= q.diam_max_mm);
    }

    #[test]
    fn area_invariant_under_rotation() {
        let c = ellipse_contour(64, 120.0, 90.0);
        let mut rolled = c.radii.clone();
        rolled.rotate_left(13);
        let a = lumen_quant(&c, &cal()).area_mm2;
        let b = lumen_quant(&Contour::closed(rolled), &cal()).area_mm2;
        assert!((a - b).abs() / a < 1e-9);
    }

    fn frame_with(n_a: usize, n_r: usize, border: usize, calcium: &[(usize, usize, usize)]) -> Vec<u8> {
        let mut v = vec![0u8; n_a * n_r];
        for a in 0..n_a {
            v[a * n_r..a * n_r + border].fill(1);
        }
        for &(a, s, e) in calcium {
            v[a * n_r + s..a * n_r + e].fill(2);
        }
        v
    }

    #[test]
    fn calcium_run_and_depth() {
        let lab = frame_with(8, 400, 100, &[(2, 140, 180), (2, 200, 260), (3, 120, 130)]);
        let c = calcium_quant(&lab, 8, 400, &[100.0; 8], &cal());
        assert_eq!(c.angle_deg, 90.0);
        assert!((c.max_thickness_mm.unwrap() - 0.3).abs() < 1e-12);
        assert!((c.min_depth_mm.unwrap() - 0.1).abs() < 1e-12);
        let none = calcium_quant(&frame_with(8, 400, 100, &[]), 8, 400, &[100.0; 8], &cal());
        assert_eq!(none.angle_deg, 0.0);
        assert_eq!(none.max_thickness_mm, None);
        assert_eq!(none.min_depth_mm, None);
    }

    #[test]
    fn full_ring_is_360() {
        let ring: Vec<_> = (0..16).map(|a| (a, 150, 160)).collect();
        let c = calcium_quant(&frame_with(16, 400, 100, &ring), 16, 400, &[100.0; 16], &cal());
        assert_eq!(c.angle_deg, 360.0);
    }

    #[test]
    fn border_bridges_guidewire() {
        let mut lab = frame_with(8, 50, 10, &[]);
        lab[3 * 50..4 * 50].fill(5);
        let (c, bridged) = border_from_labels(&lab, 8, 50).unwrap();
        assert!(bridged);
        assert_eq!(c.radii, vec![10.0; 8]);
        let q = frame_quant(0, &lab, 8, 50, &cal(), false, false);
        assert!(q.flags.guidewire_interpolated);
    }

    #[test]
    fn score_examples() {
        let t = ScoreThresholds::default();
        assert_eq!(calcium_score(200.0, 6.0, 0.6, &t), 4);
        assert_eq!(calcium_score(90.0, 2.0, 0.3, &t), 0);
        assert_eq!(calcium_score(181.0, 2.0, 0.3, &t), 2);
    }

    #[test]
    fn lesion_length() {
        let frames: Vec<FrameQuant> = (0..30)
            .map(|f| frame_quant(f, &frame_with(8, 400, 100, &[(1, 150, 160)]), 8, 400, &cal(), false, false))
            .collect();
        let gate: Vec<bool> = (0..30).map(|f| (10..=20).contains(&f)).collect();
        let l = lesion_quant(&frames, &gate, &cal(), &ScoreThresholds::default());
        assert_eq!(l.len(), 1);
        assert!((l[0].length_mm - 2.2).abs() < 1e-12);
        assert_eq!((l[0].start_frame, l[0].end_frame), (10, 20));
        assert!(lesion_quant(&frames, &[false; 30], &cal(), &ScoreThresholds::default()).is_empty());
    }

    #[test]
    fn enface_identity_binning() {
        let mut vol = LabelVolume::new(1, 8, 400);
        vol.frame_mut(0).copy_from_slice(&frame_with(8, 400, 100, &[(2, 140, 180), (5, 110, 120)]));
        let m = enface_maps(&vol, &cal(), 8);
        assert!(m.presence.at(0, 2) && m.presence.at(0, 5) && !m.presence.at(0, 0));
        assert!((m.thickness_mm.at(0, 2) - 0.2).abs() < 1e-12);
        assert!((m.depth_mm.at(0, 5) - 0.05).abs() < 1e-12);
        assert_eq!(m.depth_mm.at(0, 0), ENFACE_SENTINEL);
    }

    #[test]
    fn manual_measure_examples() {
        let c = cal();
        let ang = Measurement::Angle { vertex: [0.0, 0.0], a: [1.0, 0.0], b: [0.0, 5.0] };
        assert!((manual_measure(&ang, &c).unwrap() - 90.0).abs() < 1e-12);
        let len = Measurement::Length { a: [0.0, 0.0], b: [60.0, 80.0] };
        assert!((manual_measure(&len, &c).unwrap() - 0.5).abs() < 1e-12);
        let span = Measurement::FrameSpan { from: 10, to: 20 };
        assert!((manual_measure(&span, &c).unwrap() - 2.0).abs() < 1e-12);
    }
}
