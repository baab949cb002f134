//! Synthetic IVOCT pullbacks with exact ground truth.
//!
//! Geometry is defined in millimetres and rasterized to integer radial pixels;
//! every ground-truth quantity is derived from the rasterized geometry, so the
//! truth matches the rendered pixels exactly.
//!
//! Appearance model (per A-line, from the catheter outward):
//! lumen is dark; tissue starts bright at the lumen border and decays
//! exponentially with depth; calcium is a signal-poor band with bright rims;
//! strut and guidewire blooms are bright specular reflections with a zeroed
//! shadow behind them. Speckle is multiplicative exponential noise.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    aline_angle, Calibration, Contour, Grid, Label, LabelVolume, PolarFrame, Pullback, ANALYSIS_DEPTH_PX,
};
use crate::preprocess::GuidewireBand;
use crate::quant::{FrameFlags, FrameQuant};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid phantom spec at `{path}`: {reason}")]
pub struct SpecInvalid {
    pub path: String,
    pub reason: String,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SpecInvalid {
    SpecInvalid {
        path: path.into(),
        reason: reason.into(),
    }
}

fn default_id() -> String {
    "phantom".to_string()
}
fn default_n_alines() -> usize {
    crate::model::DEFAULT_N_ALINES
}
fn default_n_r() -> usize {
    crate::model::DEFAULT_N_R
}
fn default_r_pixel_um() -> f64 {
    crate::model::DEFAULT_R_PIXEL_UM
}
fn default_frame_spacing() -> f64 {
    crate::model::DEFAULT_FRAME_SPACING_MM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub n_frames: usize,
    #[serde(default = "default_n_alines")]
    pub n_alines: usize,
    #[serde(default = "default_n_r")]
    pub n_r: usize,
    #[serde(default = "default_r_pixel_um")]
    pub r_pixel_um: f64,
    #[serde(default = "default_frame_spacing")]
    pub frame_spacing_mm: f64,
    pub lumen: LumenSpec,
    #[serde(default)]
    pub guidewire: Option<GuidewireSpec>,
    #[serde(default)]
    pub calcium: Vec<CalciumLesionSpec>,
    #[serde(default)]
    pub struts: Vec<StrutSpec>,
    /// Speckle level in [0, 1]: 0 is noiseless, 1 is fully developed speckle.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub intensity: IntensityModel,
}

/// Elliptical lumen whose axes and center interpolate linearly from the first
/// to the last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LumenSpec {
    pub semi_axes_mm: [f64; 2],
    #[serde(default)]
    pub end_semi_axes_mm: Option<[f64; 2]>,
    #[serde(default)]
    pub orientation_deg: f64,
    #[serde(default)]
    pub center_mm: [f64; 2],
    #[serde(default)]
    pub end_center_mm: Option<[f64; 2]>,
}

impl LumenSpec {
    pub fn circle(radius_mm: f64) -> Self {
        Self {
            semi_axes_mm: [radius_mm, radius_mm],
            end_semi_axes_mm: None,
            orientation_deg: 0.0,
            center_mm: [0.0, 0.0],
            end_center_mm: None,
        }
    }
}

fn default_wire_fraction() -> f64 {
    0.55
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidewireSpec {
    pub center_deg: f64,
    pub width_deg: f64,
    /// Linear drift of the band center over the whole pullback.
    #[serde(default)]
    pub drift_deg: f64,
    /// Wire position as a fraction of the lumen radius on its A-lines.
    #[serde(default = "default_wire_fraction")]
    pub radius_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalciumLesionSpec {
    /// Inclusive frame range.
    pub frames: [usize; 2],
    pub center_deg: f64,
    pub arc_deg: f64,
    pub depth_mm: f64,
    pub thickness_mm: f64,
    /// Thickness at the last frame (linear taper); defaults to `thickness_mm`.
    #[serde(default)]
    pub end_thickness_mm: Option<f64>,
    #[serde(default)]
    pub end_arc_deg: Option<f64>,
}

/// One stent strut. `offset_mm > 0` floats the strut center into the lumen
/// (malapposed); `offset_mm < 0` embeds it. A positive `coverage_mm` places the
/// bloom leading edge that far behind the lumen border and overrides `offset_mm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrutSpec {
    pub frame: usize,
    pub angle_deg: f64,
    #[serde(default)]
    pub offset_mm: f64,
    #[serde(default)]
    pub coverage_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityModel {
    pub lumen: f64,
    pub tissue_surface: f64,
    pub attenuation_per_mm: f64,
    /// Calcium interior intensity relative to the local tissue intensity.
    pub calcium_ratio: f64,
    /// Calcium rim intensity relative to the local tissue intensity.
    pub calcium_rim_ratio: f64,
    pub calcium_rim_px: usize,
    pub strut_bloom: f64,
    pub strut_bloom_px: usize,
    pub strut_width_alines: usize,
    pub guidewire_bloom: f64,
    pub guidewire_bloom_px: usize,
    /// Speckle multiplier applied to specular blooms relative to tissue speckle.
    pub bloom_speckle: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            lumen: 600.0,
            tissue_surface: 12_000.0,
            attenuation_per_mm: 0.8,
            calcium_ratio: 0.12,
            calcium_rim_ratio: 2.2,
            calcium_rim_px: 2,
            strut_bloom: 60_000.0,
            strut_bloom_px: 5,
            strut_width_alines: 5,
            guidewire_bloom: 60_000.0,
            guidewire_bloom_px: 8,
            bloom_speckle: 0.1,
        }
    }
}

/// Ground-truth stent strut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrutTruth {
    pub frame: usize,
    pub aline: usize,
    /// Bloom center radius in pixels.
    pub center_px: f64,
    pub lead_px: usize,
    pub bloom_px: usize,
    pub lumen_px: usize,
    pub covered: bool,
    pub coverage_um: f64,
    pub malapposition_um: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: LabelVolume,
    pub struts: Vec<StrutTruth>,
    pub frames: Vec<FrameQuant>,
    /// Rasterized lumen border: first tissue pixel per A-line.
    pub lumen: Vec<Contour>,
    pub guidewire: Option<GuidewireBand>,
    /// Frames containing any visible calcium.
    pub calcium_frames: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Output frame `i` shows input frame `i + k`; frames past either end are zero.
    FrameShift(i64),
    IntensityScale(f64),
    /// Rotate every frame by `a` A-lines.
    AngularRoll(i64),
}

impl PhantomSpec {
    pub fn calibration(&self) -> Calibration {
        Calibration {
            r_pixel_um: self.r_pixel_um,
            frame_spacing_mm: self.frame_spacing_mm,
            z_offset_px: 0,
        }
    }

    fn mm_to_px(&self, mm: f64) -> f64 {
        mm * 1000.0 / self.r_pixel_um
    }

    pub fn validate(&self) -> Result<(), SpecInvalid> {
        if self.n_frames == 0 {
            return Err(invalid("n_frames", "must be >= 1"));
        }
        if self.n_alines < crate::model::MIN_ALINES {
            return Err(invalid("n_alines", format!("must be >= {}", crate::model::MIN_ALINES)));
        }
        if self.n_r < crate::model::MIN_RADIAL {
            return Err(invalid("n_r", format!("must be >= {}", crate::model::MIN_RADIAL)));
        }
        if !(self.r_pixel_um > 0.0) {
            return Err(invalid("r_pixel_um", "must be > 0"));
        }
        if !(self.frame_spacing_mm > 0.0) {
            return Err(invalid("frame_spacing_mm", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(invalid("noise", "must be in [0, 1]"));
        }
        let l = &self.lumen;
        for (name, axes) in [("lumen.semi_axes_mm", Some(l.semi_axes_mm)), ("lumen.end_semi_axes_mm", l.end_semi_axes_mm)] {
            if let Some([a, b]) = axes {
                if !(a > 0.0 && b > 0.0) {
                    return Err(invalid(name, "semi-axes must be > 0"));
                }
            }
        }
        let limit = (self.n_r - ANALYSIS_DEPTH_PX) as f64;
        for f in 0..self.n_frames {
            let e = self.ellipse_at(f);
            if e.implicit(0.0, 0.0) >= 0.0 {
                return Err(invalid("lumen.center_mm", format!("catheter outside lumen at frame {f}")));
            }
            for a in 0..self.n_alines {
                let r = self.mm_to_px(e.ray_distance(aline_angle(a, self.n_alines)));
                if r.round() >= limit {
                    return Err(invalid(
                        "lumen.semi_axes_mm",
                        format!("lumen radius {r:.1} px at frame {f} exceeds n_r - 300"),
                    ));
                }
            }
        }
        if let Some(gw) = &self.guidewire {
            if !(gw.width_deg > 0.0 && gw.width_deg < 360.0) {
                return Err(invalid("guidewire.width_deg", "must be in (0, 360)"));
            }
            if !(gw.radius_fraction > 0.0 && gw.radius_fraction < 1.0) {
                return Err(invalid("guidewire.radius_fraction", "must be in (0, 1)"));
            }
        }
        for (k, c) in self.calcium.iter().enumerate() {
            let p = |field: &str| format!("calcium[{k}].{field}");
            if c.frames[0] > c.frames[1] || c.frames[1] >= self.n_frames {
                return Err(invalid(p("frames"), "range outside pullback"));
            }
            for (name, arc) in [("arc_deg", Some(c.arc_deg)), ("end_arc_deg", c.end_arc_deg)] {
                if let Some(arc) = arc {
                    if !(arc > 0.0 && arc <= 360.0) {
                        return Err(invalid(p(name), "must be in (0, 360]"));
                    }
                }
            }
            if !(c.depth_mm >= 0.0) {
                return Err(invalid(p("depth_mm"), "must be >= 0"));
            }
            for (name, t) in [("thickness_mm", Some(c.thickness_mm)), ("end_thickness_mm", c.end_thickness_mm)] {
                if let Some(t) = t {
                    if !(t > 0.0) {
                        return Err(invalid(p(name), "must be > 0"));
                    }
                }
            }
            let reach = self.mm_to_px(c.depth_mm + c.thickness_mm.max(c.end_thickness_mm.unwrap_or(0.0)));
            if reach > ANALYSIS_DEPTH_PX as f64 {
                return Err(invalid(p("thickness_mm"), "lesion extends past the 1.5 mm analysis depth"));
            }
        }
        for (k, s) in self.struts.iter().enumerate() {
            let p = |field: &str| format!("struts[{k}].{field}");
            if s.frame >= self.n_frames {
                return Err(invalid(p("frame"), "outside pullback"));
            }
            if s.coverage_mm < 0.0 {
                return Err(invalid(p("coverage_mm"), "must be >= 0"));
            }
            let lead = self.strut_geometry(s).0;
            if lead < 1 || lead + self.intensity.strut_bloom_px + 1 >= self.n_r {
                return Err(invalid(p("offset_mm"), "strut outside the radial field"));
            }
        }
        Ok(())
    }

    fn lerp_frame(&self, f: usize) -> f64 {
        if self.n_frames <= 1 {
            0.0
        } else {
            f as f64 / (self.n_frames - 1) as f64
        }
    }

    fn ellipse_at(&self, f: usize) -> Ellipse {
        let t = self.lerp_frame(f);
        let l = &self.lumen;
        let end_axes = l.end_semi_axes_mm.unwrap_or(l.semi_axes_mm);
        let end_center = l.end_center_mm.unwrap_or(l.center_mm);
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        Ellipse {
            a: lerp(l.semi_axes_mm[0], end_axes[0]),
            b: lerp(l.semi_axes_mm[1], end_axes[1]),
            cx: lerp(l.center_mm[0], end_center[0]),
            cy: lerp(l.center_mm[1], end_center[1]),
            psi: l.orientation_deg.to_radians(),
        }
    }

    /// Rasterized lumen border (first tissue pixel) for every A-line of frame `f`.
    pub fn lumen_border_px(&self, f: usize) -> Vec<usize> {
        let e = self.ellipse_at(f);
        (0..self.n_alines)
            .map(|a| self.mm_to_px(e.ray_distance(aline_angle(a, self.n_alines))).round() as usize)
            .collect()
    }

    fn aline_step_deg(&self) -> f64 {
        360.0 / self.n_alines as f64
    }

    /// Guidewire A-lines `(first, count)` for frame `f`.
    fn guidewire_alines(&self, f: usize) -> Option<(usize, usize)> {
        let gw = self.guidewire.as_ref()?;
        let center = gw.center_deg + gw.drift_deg * self.lerp_frame(f);
        let step = self.aline_step_deg();
        let first = ((center - gw.width_deg / 2.0) / step - 1e-9).ceil() as i64;
        let count = ((gw.width_deg / step).round() as usize).clamp(1, self.n_alines - 1);
        Some((first.rem_euclid(self.n_alines as i64) as usize, count))
    }

    /// Calcium A-lines of lesion `c` on frame `f` as `(first, count, depth_px, thickness_px)`.
    fn lesion_on_frame(&self, c: &CalciumLesionSpec, f: usize) -> Option<(usize, usize, usize, usize)> {
        if f < c.frames[0] || f > c.frames[1] {
            return None;
        }
        let span = c.frames[1] - c.frames[0];
        let t = if span == 0 { 0.0 } else { (f - c.frames[0]) as f64 / span as f64 };
        let arc = c.arc_deg + (c.end_arc_deg.unwrap_or(c.arc_deg) - c.arc_deg) * t;
        let thick = c.thickness_mm + (c.end_thickness_mm.unwrap_or(c.thickness_mm) - c.thickness_mm) * t;
        let step = self.aline_step_deg();
        let count = ((arc / step).round() as usize).clamp(1, self.n_alines);
        let first = ((c.center_deg - arc / 2.0) / step - 1e-9).ceil() as i64;
        let depth = self.mm_to_px(c.depth_mm).round() as usize;
        let thickness = self.mm_to_px(thick).round().max(1.0) as usize;
        Some((first.rem_euclid(self.n_alines as i64) as usize, count, depth, thickness))
    }

    /// `(lead_px, center_px)` of a strut bloom.
    fn strut_geometry(&self, s: &StrutSpec) -> (usize, f64) {
        let a = self.strut_aline(s);
        let border = self.lumen_border_px(s.frame)[a] as i64;
        let bloom = self.intensity.strut_bloom_px as i64;
        let half = bloom / 2;
        let lead = if s.coverage_mm > 0.0 {
            border + self.mm_to_px(s.coverage_mm).round() as i64
        } else {
            border - self.mm_to_px(s.offset_mm).round() as i64 - half
        };
        let lead = lead.max(0);
        (lead as usize, lead as f64 + (bloom - 1) as f64 / 2.0)
    }

    fn strut_aline(&self, s: &StrutSpec) -> usize {
        crate::model::aline_for_degrees(s.angle_deg, self.n_alines)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    a: f64,
    b: f64,
    cx: f64,
    cy: f64,
    psi: f64,
}

impl Ellipse {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.psi.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn implicit(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        u * u / (self.a * self.a) + v * v / (self.b * self.b) - 1.0
    }

    /// Distance from the catheter (origin) to the ellipse along direction `theta`.
    fn ray_distance(&self, theta: f64) -> f64 {
        let (s, c) = self.psi.sin_cos();
        let (ux, uy) = theta.cos_sin();
        let dx = c * ux + s * uy;
        let dy = -s * ux + c * uy;
        let (qx, qy) = self.local(0.0, 0.0);
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let qa = dx * dx / a2 + dy * dy / b2;
        let qb = 2.0 * (qx * dx / a2 + qy * dy / b2);
        let qc = qx * qx / a2 + qy * qy / b2 - 1.0;
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    fn chord_through_center(&self, phi: f64) -> f64 {
        let t = phi - self.psi;
        2.0 / ((t.cos() / self.a).powi(2) + (t.sin() / self.b).powi(2)).sqrt()
    }
}

trait CosSin {
    fn cos_sin(self) -> (f64, f64);
}

impl CosSin for f64 {
    fn cos_sin(self) -> (f64, f64) {
        (self.cos(), self.sin())
    }
}

/// Per-A-line scene description for one frame.
struct FrameScene {
    border: Vec<usize>,
    guidewire: Vec<bool>,
    /// Merged calcium interior intervals `[start, end)` per A-line.
    calcium: Vec<Vec<(usize, usize)>>,
    /// Strut bloom `(lead, len)` per A-line.
    strut: Vec<Option<(usize, usize)>>,
}

fn in_circular_range(a: usize, first: usize, count: usize, n: usize) -> bool {
    (a + n - first) % n < count
}

fn merge_intervals(mut v: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    v.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

impl PhantomSpec {
    fn scene(&self, f: usize) -> FrameScene {
        let n = self.n_alines;
        let border = self.lumen_border_px(f);
        let gw = self.guidewire_alines(f);
        let guidewire = (0..n)
            .map(|a| gw.is_some_and(|(first, count)| in_circular_range(a, first, count, n)))
            .collect();
        let mut calcium: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for c in &self.calcium {
            if let Some((first, count, depth, thick)) = self.lesion_on_frame(c, f) {
                for k in 0..count {
                    let a = (first + k) % n;
                    let s = border[a] + depth;
                    let e = (s + thick).min(self.n_r);
                    if s < e {
                        calcium[a].push((s, e));
                    }
                }
            }
        }
        let calcium = calcium.into_iter().map(merge_intervals).collect();
        let mut strut = vec![None; n];
        let half = self.intensity.strut_width_alines / 2;
        for s in self.struts.iter().filter(|s| s.frame == f) {
            let a0 = self.strut_aline(s);
            let (lead, _) = self.strut_geometry(s);
            for k in 0..self.intensity.strut_width_alines {
                let a = (a0 + n + k - half) % n;
                strut[a] = Some((lead, self.intensity.strut_bloom_px));
            }
        }
        FrameScene {
            border,
            guidewire,
            calcium,
            strut,
        }
    }
}

fn render_frame(spec: &PhantomSpec, f: usize, seed: u64) -> (Grid<u16>, Vec<u8>) {
    let n_a = spec.n_alines;
    let n_r = spec.n_r;
    let im = &spec.intensity;
    let scene = spec.scene(f);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(f as u64);
    let px_mm = spec.r_pixel_um / 1000.0;
    let noise = spec.noise;
    let speckle = |level: f64, rng: &mut ChaCha8Rng| -> f64 {
        if level <= 0.0 {
            1.0
        } else {
            let x: f64 = Exp1.sample(rng);
            (1.0 - level) + level * x
        }
    };
    let mut pixels = Grid::<u16>::new(n_a, n_r);
    let mut labels = vec![Label::Background.code(); n_a * n_r];
    let mut base = vec![0.0f64; n_r];
    let mut bloom_mask = vec![false; n_r];
    for a in 0..n_a {
        let border = scene.border[a];
        bloom_mask.iter_mut().for_each(|b| *b = false);
        for (r, v) in base.iter_mut().enumerate() {
            *v = if r < border {
                im.lumen
            } else {
                im.tissue_surface * (-im.attenuation_per_mm * (r - border) as f64 * px_mm).exp()
            };
        }
        for &(s, e) in &scene.calcium[a] {
            let rim = im.calcium_rim_px;
            for r in s.saturating_sub(rim).max(border)..s {
                base[r] *= im.calcium_rim_ratio;
            }
            for v in &mut base[s..e] {
                *v *= im.calcium_ratio;
            }
            for r in e..(e + rim).min(n_r) {
                base[r] *= im.calcium_rim_ratio;
            }
        }
        let shadow_from = if scene.guidewire[a] {
            let wire = ((border as f64 * spec.guidewire.as_ref().map_or(0.55, |g| g.radius_fraction)).round()
                as usize)
                .max(1);
            let end = (wire + im.guidewire_bloom_px).min(n_r);
            for r in wire..end {
                base[r] = im.guidewire_bloom;
                bloom_mask[r] = true;
            }
            Some(end)
        } else if let Some((lead, len)) = scene.strut[a] {
            let end = (lead + len).min(n_r);
            for r in lead..end {
                base[r] = im.strut_bloom;
                bloom_mask[r] = true;
            }
            Some(end)
        } else {
            None
        };
        if let Some(end) = shadow_from {
            base[end..].iter_mut().for_each(|v| *v = 0.0);
        }
        let row = pixels.row_mut(a);
        for r in 0..n_r {
            let level = if bloom_mask[r] { noise * im.bloom_speckle } else { noise };
            let v = base[r] * speckle(level, &mut rng);
            row[r] = v.round().clamp(0.0, u16::MAX as f64) as u16;
        }
        let lab = &mut labels[a * n_r..(a + 1) * n_r];
        if scene.guidewire[a] {
            lab.fill(Label::Guidewire.code());
            continue;
        }
        lab[..border].fill(Label::Lumen.code());
        for &(s, e) in &scene.calcium[a] {
            lab[s..e].fill(Label::Calcium.code());
        }
    }
    (pixels, labels)
}

/// Longest circular run of set entries after closing single-entry gaps.
pub(crate) fn longest_arc_closing_single_gaps(present: &[bool]) -> usize {
    let n = present.len();
    if n == 0 {
        return 0;
    }
    let closed: Vec<bool> = (0..n)
        .map(|i| present[i] || (present[(i + n - 1) % n] && present[(i + 1) % n]))
        .collect();
    if closed.iter().all(|&b| b) {
        return n;
    }
    let start = closed.iter().position(|&b| !b).unwrap();
    let mut best = 0;
    let mut run = 0;
    for k in 1..=n {
        if closed[(start + k) % n] {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

fn truth_frame_quant(spec: &PhantomSpec, f: usize, scene: &FrameScene) -> FrameQuant {
    let n = spec.n_alines;
    let px_mm = spec.r_pixel_um / 1000.0;
    let e = spec.ellipse_at(f);
    let half = n / 2;
    let chords: Vec<f64> = (0..half).map(|k| e.chord_through_center(aline_angle(k, n))).collect();
    let diam_max = chords.iter().cloned().fold(f64::MIN, f64::max);
    let diam_min = chords.iter().cloned().fold(f64::MAX, f64::min);
    let diam_mean = chords.iter().sum::<f64>() / chords.len() as f64;
    let present: Vec<bool> = (0..n)
        .map(|a| !scene.guidewire[a] && !scene.calcium[a].is_empty())
        .collect();
    let arc = longest_arc_closing_single_gaps(&present);
    let mut thick: Option<usize> = None;
    let mut depth: Option<usize> = None;
    for a in (0..n).filter(|&a| present[a]) {
        let t = scene.calcium[a].iter().map(|&(s, e)| e - s).max().unwrap();
        let d = scene.calcium[a][0].0 - scene.border[a];
        thick = Some(thick.map_or(t, |v| v.max(t)));
        depth = Some(depth.map_or(d, |v| v.min(d)));
    }
    FrameQuant {
        frame: f,
        lumen_area_mm2: Some(PI * e.a * e.b),
        diam_max_mm: Some(diam_max),
        diam_min_mm: Some(diam_min),
        diam_mean_mm: Some(diam_mean),
        calc_angle_deg: arc as f64 * 360.0 / n as f64,
        calc_max_thickness_mm: thick.map(|t| t as f64 * px_mm),
        calc_min_depth_mm: depth.map(|d| d as f64 * px_mm),
        gated: arc > 0,
        flags: FrameFlags {
            guidewire_interpolated: scene.guidewire.iter().any(|&g| g),
            segmentation_failed: false,
        },
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - (a.0 + t * vx)).hypot(p.1 - (a.1 + t * vy))
}

fn strut_truth(spec: &PhantomSpec, s: &StrutSpec) -> StrutTruth {
    let a = spec.strut_aline(s);
    let border = spec.lumen_border_px(s.frame);
    let (lead, center) = spec.strut_geometry(s);
    let lumen_px = border[a];
    let coverage_px = lead.saturating_sub(lumen_px);
    let malapposition_um = if center < lumen_px as f64 {
        let n = spec.n_alines;
        let t = aline_angle(a, n);
        let p = (center * t.cos(), center * t.sin());
        let pts: Vec<(f64, f64)> = border
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let t = aline_angle(i, n);
                (r as f64 * t.cos(), r as f64 * t.sin())
            })
            .collect();
        let d = (0..n)
            .map(|i| point_segment_distance(p, pts[i], pts[(i + 1) % n]))
            .fold(f64::MAX, f64::min);
        d * spec.r_pixel_um
    } else {
        0.0
    };
    StrutTruth {
        frame: s.frame,
        aline: a,
        center_px: center,
        lead_px: lead,
        bloom_px: spec.intensity.strut_bloom_px,
        lumen_px,
        covered: coverage_px > 0,
        coverage_um: coverage_px as f64 * spec.r_pixel_um,
        malapposition_um,
    }
}

/// Render a phantom pullback and its ground truth. Deterministic in `(spec, seed)`.
pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<(Pullback, GroundTruth), SpecInvalid> {
    spec.validate()?;
    let n_a = spec.n_alines;
    let n_r = spec.n_r;
    let rendered: Vec<(Grid<u16>, Vec<u8>)> = (0..spec.n_frames)
        .into_par_iter()
        .map(|f| render_frame(spec, f, seed))
        .collect();
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut label_bytes = Vec::with_capacity(spec.n_frames * n_a * n_r);
    for (f, (pixels, labels)) in rendered.into_iter().enumerate() {
        frames.push(PolarFrame { index: f, pixels });
        label_bytes.extend_from_slice(&labels);
    }
    let labels = LabelVolume::from_vec(spec.n_frames, n_a, n_r, label_bytes).expect("consistent label size");
    let pullback = Pullback::new(spec.id.clone(), spec.calibration(), n_a, n_r, frames)
        .map_err(|e| invalid("", e.to_string()))?;

    let mut truth_frames = Vec::with_capacity(spec.n_frames);
    let mut lumen = Vec::with_capacity(spec.n_frames);
    let mut calcium_frames = Vec::with_capacity(spec.n_frames);
    for f in 0..spec.n_frames {
        let scene = spec.scene(f);
        let q = truth_frame_quant(spec, f, &scene);
        calcium_frames.push(q.calc_angle_deg > 0.0);
        truth_frames.push(q);
        lumen.push(Contour::closed(scene.border.iter().map(|&b| b as f64).collect()));
    }
    let guidewire = spec.guidewire.as_ref().map(|_| {
        GuidewireBand::new(
            n_a,
            (0..spec.n_frames)
                .map(|f| {
                    spec.guidewire_alines(f)
                        .map(|(first, count)| (first, (first + count - 1) % n_a))
                })
                .collect(),
        )
    });
    let struts = spec.struts.iter().map(|s| strut_truth(spec, s)).collect();
    Ok((
        pullback,
        GroundTruth {
            labels,
            struts,
            frames: truth_frames,
            lumen,
            guidewire,
            calcium_frames,
        },
    ))
}

/// Deterministic transform of a pullback used for robustness and registration tests.
pub fn perturb(pullback: &Pullback, kind: Perturbation) -> Pullback {
    let n_f = pullback.n_frames() as i64;
    let (n_a, n_r) = (pullback.n_alines(), pullback.n_r());
    let frames: Vec<PolarFrame> = match kind {
        Perturbation::FrameShift(k) => (0..n_f)
            .map(|i| {
                let src = i + k;
                let pixels = if (0..n_f).contains(&src) {
                    pullback.frame(src as usize).pixels.clone()
                } else {
                    Grid::new(n_a, n_r)
                };
                PolarFrame { index: i as usize, pixels }
            })
            .collect(),
        Perturbation::IntensityScale(s) => pullback
            .frames()
            .iter()
            .map(|f| PolarFrame {
                index: f.index,
                pixels: f.pixels.map(|&v| (v as f64 * s).round().clamp(0.0, u16::MAX as f64) as u16),
            })
            .collect(),
        Perturbation::AngularRoll(k) => pullback
            .frames()
            .iter()
            .map(|f| {
                let mut out = Grid::<u16>::new(n_a, n_r);
                for a in 0..n_a {
                    let dst = (a as i64 + k).rem_euclid(n_a as i64) as usize;
                    out.row_mut(dst).copy_from_slice(f.pixels.row(a));
                }
                PolarFrame { index: f.index, pixels: out }
            })
            .collect(),
    };
    Pullback::new(pullback.id.clone(), pullback.calibration, n_a, n_r, frames).expect("same dimensions")
}

/// Knobs for [`random_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomPhantomOptions {
    pub n_frames: usize,
    pub n_alines: usize,
    pub n_r: usize,
    pub noise: f64,
    pub guidewire: bool,
    /// Expected number of calcium lesions.
    pub lesions: usize,
    /// Struts per frame (0 disables the stent).
    pub struts_per_frame: usize,
    /// Probability that a strut is covered / malapposed (remaining: apposed uncovered).
    pub p_covered: f64,
    pub p_malapposed: f64,
    pub elliptical: bool,
    pub drifting: bool,
}

impl Default for RandomPhantomOptions {
    fn default() -> Self {
        Self {
            n_frames: 60,
            n_alines: 504,
            n_r: 704,
            noise: 1.0,
            guidewire: true,
            lesions: 2,
            struts_per_frame: 0,
            p_covered: 0.45,
            p_malapposed: 0.2,
            elliptical: true,
            drifting: true,
        }
    }
}

fn circular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Random, valid phantom spec drawn deterministically from `seed`.
pub fn random_spec(seed: u64, opts: &RandomPhantomOptions) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ee_d0c7_0905_u64);
    let px_mm = default_r_pixel_um() / 1000.0;
    // keep the lumen plus the 1.5 mm analysis depth inside the field
    let max_r_mm = ((opts.n_r - ANALYSIS_DEPTH_PX) as f64 - 8.0) * px_mm;
    let r0 = rng.random_range(1.1..1.6f64).min(max_r_mm * 0.8);
    let (ax, ay) = if opts.elliptical {
        (r0 * rng.random_range(1.0..1.25), r0 * rng.random_range(0.8..1.0))
    } else {
        (r0, r0)
    };
    let ax = ax.min(max_r_mm * 0.82);
    let ay = ay.min(max_r_mm * 0.82);
    let end_axes = if opts.drifting {
        let s = rng.random_range(0.85..1.12f64);
        Some([(ax * s).min(max_r_mm * 0.82), (ay * s).min(max_r_mm * 0.82)])
    } else {
        None
    };
    let center = if opts.drifting {
        [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)]
    } else {
        [0.0, 0.0]
    };
    let end_center = if opts.drifting {
        Some([rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)])
    } else {
        None
    };
    let lumen = LumenSpec {
        semi_axes_mm: [ax, ay],
        end_semi_axes_mm: end_axes,
        orientation_deg: rng.random_range(0.0..180.0),
        center_mm: center,
        end_center_mm: end_center,
    };
    let guidewire = opts.guidewire.then(|| GuidewireSpec {
        center_deg: rng.random_range(0.0..360.0),
        width_deg: rng.random_range(14.0..26.0),
        drift_deg: rng.random_range(-12.0..12.0),
        radius_fraction: rng.random_range(0.4..0.7),
    });
    let gw_center = guidewire.as_ref().map(|g| (g.center_deg, g.width_deg, g.drift_deg));
    let mut calcium = Vec::new();
    let nf = opts.n_frames;
    for _ in 0..opts.lesions {
        let len = rng.random_range((nf / 8).max(3)..=(nf / 3).max(4)).min(nf);
        let start = rng.random_range(0..=(nf - len));
        let arc = rng.random_range(40.0..200.0f64);
        let mut center = rng.random_range(0.0..360.0f64);
        if let Some((c, w, d)) = gw_center {
            // keep lesions clear of the guidewire shadow
            let gap = arc / 2.0 + w / 2.0 + d.abs() + 6.0;
            if circular_distance_deg(center, c) < gap {
                center = c + 180.0;
            }
        }
        let depth = rng.random_range(0.05..0.35f64);
        let thickness = rng.random_range(0.25..(1.3 - depth).min(0.9));
        calcium.push(CalciumLesionSpec {
            frames: [start, start + len - 1],
            center_deg: center.rem_euclid(360.0),
            arc_deg: arc,
            depth_mm: depth,
            thickness_mm: thickness,
            end_thickness_mm: Some((thickness * rng.random_range(0.6..1.4)).clamp(0.2, 1.4 - depth)),
            end_arc_deg: Some((arc * rng.random_range(0.7..1.3)).clamp(30.0, 300.0)),
        });
    }
    let mut struts = Vec::new();
    if opts.struts_per_frame > 0 {
        let k = opts.struts_per_frame;
        let phase0 = rng.random_range(0.0..360.0f64);
        for f in 0..nf {
            let phase = phase0 + f as f64 * 7.0;
            for j in 0..k {
                let angle = (phase + j as f64 * 360.0 / k as f64 + rng.random_range(-6.0..6.0)).rem_euclid(360.0);
                if let Some((c, w, d)) = gw_center {
                    if circular_distance_deg(angle, c + d * f as f64 / (nf.max(2) - 1) as f64) < w / 2.0 + 6.0 {
                        continue;
                    }
                }
                let u: f64 = rng.random();
                let (offset_mm, coverage_mm) = if u < opts.p_covered {
                    (0.0, rng.random_range(0.03..0.25))
                } else if u < opts.p_covered + opts.p_malapposed {
                    (rng.random_range(0.1..0.5), 0.0)
                } else {
                    (0.0, 0.0)
                };
                struts.push(StrutSpec {
                    frame: f,
                    angle_deg: angle,
                    offset_mm,
                    coverage_mm,
                });
            }
        }
    }
    PhantomSpec {
        id: format!("random-{seed}"),
        n_frames: nf,
        n_alines: opts.n_alines,
        n_r: opts.n_r,
        r_pixel_um: default_r_pixel_um(),
        frame_spacing_mm: default_frame_spacing(),
        lumen,
        guidewire,
        calcium,
        struts,
        noise: opts.noise,
        intensity: IntensityModel::default(),
    }
}

/// The set of A-lines covered by struts on frame `f` (bloom plus shadow).
pub fn strut_alines(spec: &PhantomSpec, f: usize) -> BTreeSet<usize> {
    let n = spec.n_alines;
    let half = spec.intensity.strut_width_alines / 2;
    spec.struts
        .iter()
        .filter(|s| s.frame == f)
        .flat_map(|s| {
            let a0 = spec.strut_aline(s);
            (0..spec.intensity.strut_width_alines).map(move |k| (a0 + n + k - half) % n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec() -> PhantomSpec {
        PhantomSpec {
            id: "t".into(),
            n_frames: 4,
            n_alines: 504,
            n_r: 700,
            r_pixel_um: 5.0,
            frame_spacing_mm: 0.2,
            lumen: LumenSpec::circle(1.5),
            guidewire: Some(GuidewireSpec {
                center_deg: 180.0,
                width_deg: 20.0,
                drift_deg: 0.0,
                radius_fraction: 0.55,
            }),
            calcium: vec![],
            struts: vec![],
            noise: 0.0,
            intensity: IntensityModel::default(),
        }
    }

    #[test]
    fn plain_phantom_has_only_lumen_guidewire_background() {
        let (pb, gt) = generate(&small_spec(), 1).unwrap();
        assert_eq!(pb.n_frames(), 4);
        let codes: BTreeSet<u8> = gt.labels.as_bytes().iter().copied().collect();
        assert_eq!(codes, BTreeSet::from([0, 1, 5]));
        let band = gt.guidewire.unwrap();
        assert_eq!(band.interval(0), Some((238, 265)));
        assert_eq!(gt.lumen[0].radii[0], 300.0);
    }

    #[test]
    fn deterministic_for_same_seed() {
        let mut spec = small_spec();
        spec.noise = 1.0;
        let (a, _) = generate(&spec, 9).unwrap();
        let (b, _) = generate(&spec, 9).unwrap();
        let (c, _) = generate(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn calcium_truth_by_construction() {
        let mut spec = small_spec();
        spec.n_frames = 30;
        spec.guidewire = None;
        spec.calcium.push(CalciumLesionSpec {
            frames: [10, 20],
            center_deg: 45.0,
            arc_deg: 90.0,
            depth_mm: 0.1,
            thickness_mm: 0.5,
            end_thickness_mm: None,
            end_arc_deg: None,
        });
        let (_, gt) = generate(&spec, 0).unwrap();
        for f in 10..=20 {
            let q = &gt.frames[f];
            assert!((q.calc_angle_deg - 90.0).abs() < 1e-9);
            assert!((q.calc_max_thickness_mm.unwrap() - 0.5).abs() < 1e-9);
            assert!((q.calc_min_depth_mm.unwrap() - 0.1).abs() < 1e-9);
        }
        assert_eq!(gt.frames[9].calc_angle_deg, 0.0);
        assert_eq!(gt.calcium_frames.iter().filter(|&&b| b).count(), 11);
    }

    #[test]
    fn malapposed_strut_truth() {
        let mut spec = small_spec();
        spec.guidewire = None;
        spec.struts.push(StrutSpec {
            frame: 1,
            angle_deg: 90.0,
            offset_mm: 0.3,
            coverage_mm: 0.0,
        });
        spec.struts.push(StrutSpec {
            frame: 1,
            angle_deg: 0.0,
            offset_mm: 0.0,
            coverage_mm: 0.08,
        });
        let (pb, gt) = generate(&spec, 0).unwrap();
        let m = &gt.struts[0];
        assert!(!m.covered);
        assert!((m.malapposition_um - 300.0).abs() < 0.5, "{}", m.malapposition_um);
        let c = &gt.struts[1];
        assert!(c.covered);
        assert_eq!(c.coverage_um, 80.0);
        assert_eq!(c.malapposition_um, 0.0);
        // shadow behind the bloom is zero
        let row = pb.frame(1).pixels.row(0);
        assert!(row[c.lead_px + c.bloom_px..].iter().all(|&v| v == 0));
        assert!(row[c.lead_px] > 50_000);
    }

    #[test]
    fn invalid_specs_report_field() {
        let mut spec = small_spec();
        spec.lumen = LumenSpec::circle(2.5);
        let err = generate(&spec, 0).unwrap_err();
        assert_eq!(err.path, "lumen.semi_axes_mm");
        let mut spec = small_spec();
        spec.calcium.push(CalciumLesionSpec {
            frames: [2, 9],
            center_deg: 0.0,
            arc_deg: 30.0,
            depth_mm: 0.1,
            thickness_mm: 0.2,
            end_thickness_mm: None,
            end_arc_deg: None,
        });
        assert_eq!(generate(&spec, 0).unwrap_err().path, "calcium[0].frames");
    }

    #[test]
    fn perturbations() {
        let mut spec = small_spec();
        spec.noise = 0.5;
        let (pb, _) = generate(&spec, 3).unwrap();
        assert_eq!(perturb(&pb, Perturbation::FrameShift(0)), pb);
        let shifted = perturb(&pb, Perturbation::FrameShift(1));
        assert_eq!(shifted.frame(0).pixels, pb.frame(1).pixels);
        assert!(shifted.frame(3).pixels.as_slice().iter().all(|&v| v == 0));
        let rolled = perturb(&pb, Perturbation::AngularRoll(3));
        assert_eq!(rolled.frame(2).pixels.row(3), pb.frame(2).pixels.row(0));
        let scaled = perturb(&pb, Perturbation::IntensityScale(2.0));
        assert_eq!(scaled.frame(0).pixels.at(5, 400), pb.frame(0).pixels.at(5, 400).saturating_mul(2));
    }

    #[test]
    fn random_specs_validate() {
        for seed in 0..40 {
            let opts = RandomPhantomOptions {
                struts_per_frame: 8,
                ..Default::default()
            };
            let spec = random_spec(seed, &opts);
            spec.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn arc_gap_closing() {
        let mut v = vec![false; 20];
        for i in 2..6 {
            v[i] = true;
        }
        v[7] = true;
        v[8] = true;
        assert_eq!(longest_arc_closing_single_gaps(&v), 7);
        v[10] = true;
        assert_eq!(longest_arc_closing_single_gaps(&v), 9);
        assert_eq!(longest_arc_closing_single_gaps(&[true; 5]), 5);
        let mut w = vec![true; 10];
        w[4] = false;
        assert_eq!(longest_arc_closing_single_gaps(&w), 10);
    }
}
