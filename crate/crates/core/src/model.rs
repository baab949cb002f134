//! Pullback data model, calibration and polar/cartesian geometry.
//!
//! Polar frames are stored A-line-major: row `i` is the A-line at angle
//! `i * 360 / n_alines` degrees, column `r` is the radial sample `r` pixels
//! from the catheter center.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default analysis depth behind the lumen border, in radial pixels (1.5 mm at 5 µm/px).
pub const ANALYSIS_DEPTH_PX: usize = 300;
pub const DEFAULT_R_PIXEL_UM: f64 = 5.0;
pub const DEFAULT_FRAME_SPACING_MM: f64 = 0.2;
pub const DEFAULT_N_ALINES: usize = 504;
pub const DEFAULT_N_R: usize = 976;

pub const MIN_ALINES: usize = 8;
pub const MIN_RADIAL: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("z-offset {delta} px out of range for {n_r} radial samples")]
    OffsetOutOfRange { delta: i64, n_r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub r_pixel_um: f64,
    pub frame_spacing_mm: f64,
    /// Accumulated radial shift already applied to the pixel data.
    pub z_offset_px: i32,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            r_pixel_um: DEFAULT_R_PIXEL_UM,
            frame_spacing_mm: DEFAULT_FRAME_SPACING_MM,
            z_offset_px: 0,
        }
    }
}

impl Calibration {
    pub fn new(r_pixel_um: f64, frame_spacing_mm: f64, z_offset_px: i32) -> Result<Self, ModelError> {
        let cal = Self {
            r_pixel_um,
            frame_spacing_mm,
            z_offset_px,
        };
        cal.validate(None)?;
        Ok(cal)
    }

    pub fn validate(&self, n_r: Option<usize>) -> Result<(), ModelError> {
        if !(self.r_pixel_um.is_finite() && self.r_pixel_um > 0.0) {
            return Err(ModelError::InvalidCalibration(format!(
                "r_pixel_um must be > 0, got {}",
                self.r_pixel_um
            )));
        }
        if !(self.frame_spacing_mm.is_finite() && self.frame_spacing_mm > 0.0) {
            return Err(ModelError::InvalidCalibration(format!(
                "frame_spacing_mm must be > 0, got {}",
                self.frame_spacing_mm
            )));
        }
        if let Some(n_r) = n_r {
            if self.z_offset_px.unsigned_abs() as usize >= n_r {
                return Err(ModelError::OffsetOutOfRange {
                    delta: self.z_offset_px as i64,
                    n_r,
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn r_pixel_mm(&self) -> f64 {
        self.r_pixel_um / 1000.0
    }
}

/// Dense row-major 2-D array. Rows are A-lines, columns radial samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::InvalidDimensions(format!(
                "{} elements for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    pub index: usize,
    pub pixels: Grid<u16>,
}

impl PolarFrame {
    pub fn n_alines(&self) -> usize {
        self.pixels.rows()
    }

    pub fn n_r(&self) -> usize {
        self.pixels.cols()
    }

    pub fn to_f32(&self) -> Grid<f32> {
        self.pixels.map(|&v| v as f32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    pub id: String,
    pub calibration: Calibration,
    n_alines: usize,
    n_r: usize,
    frames: Vec<PolarFrame>,
}

impl Pullback {
    pub fn new(
        id: impl Into<String>,
        calibration: Calibration,
        n_alines: usize,
        n_r: usize,
        frames: Vec<PolarFrame>,
    ) -> Result<Self, ModelError> {
        if n_alines < MIN_ALINES {
            return Err(ModelError::InvalidDimensions(format!(
                "n_alines {n_alines} < {MIN_ALINES}"
            )));
        }
        if n_r < MIN_RADIAL {
            return Err(ModelError::InvalidDimensions(format!("n_r {n_r} < {MIN_RADIAL}")));
        }
        calibration.validate(Some(n_r))?;
        for (k, f) in frames.iter().enumerate() {
            if f.index != k {
                return Err(ModelError::InvalidDimensions(format!(
                    "frame at position {k} has index {}",
                    f.index
                )));
            }
            if f.n_alines() != n_alines || f.n_r() != n_r {
                return Err(ModelError::InvalidDimensions(format!(
                    "frame {k} is {}x{}, expected {n_alines}x{n_r}",
                    f.n_alines(),
                    f.n_r()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            calibration,
            n_alines,
            n_r,
            frames,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_alines(&self) -> usize {
        self.n_alines
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn frames(&self) -> &[PolarFrame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &PolarFrame {
        &self.frames[index]
    }

    pub fn into_frames(self) -> Vec<PolarFrame> {
        self.frames
    }

    /// Sub-pullback of frames `start..=end`, re-indexed from zero.
    pub fn slice(&self, start: usize, end: usize) -> Pullback {
        let frames = self.frames[start..=end]
            .iter()
            .enumerate()
            .map(|(k, f)| PolarFrame {
                index: k,
                pixels: f.pixels.clone(),
            })
            .collect();
        Pullback {
            id: self.id.clone(),
            calibration: self.calibration,
            n_alines: self.n_alines,
            n_r: self.n_r,
            frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Lumen = 1,
    Calcium = 2,
    Lipid = 3,
    Other = 4,
    Guidewire = 5,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Some(match code {
            0 => Label::Background,
            1 => Label::Lumen,
            2 => Label::Calcium,
            3 => Label::Lipid,
            4 => Label::Other,
            5 => Label::Guidewire,
            _ => return None,
        })
    }
}

/// Per-pixel class codes aligned with a pullback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    n_frames: usize,
    n_alines: usize,
    n_r: usize,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(n_frames: usize, n_alines: usize, n_r: usize) -> Self {
        Self {
            n_frames,
            n_alines,
            n_r,
            data: vec![0; n_frames * n_alines * n_r],
        }
    }

    pub fn like(pullback: &Pullback) -> Self {
        Self::new(pullback.n_frames(), pullback.n_alines(), pullback.n_r())
    }

    pub fn from_vec(
        n_frames: usize,
        n_alines: usize,
        n_r: usize,
        data: Vec<u8>,
    ) -> Result<Self, ModelError> {
        if data.len() != n_frames * n_alines * n_r {
            return Err(ModelError::InvalidDimensions(format!(
                "{} label bytes for {n_frames}x{n_alines}x{n_r}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&c| c > 5) {
            return Err(ModelError::InvalidDimensions(format!("label code {bad} outside 0..=5")));
        }
        Ok(Self {
            n_frames,
            n_alines,
            n_r,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_alines(&self) -> usize {
        self.n_alines
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn frame_len(&self) -> usize {
        self.n_alines * self.n_r
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        let len = self.frame_len();
        &self.data[f * len..(f + 1) * len]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [u8] {
        let len = self.frame_len();
        &mut self.data[f * len..(f + 1) * len]
    }

    pub fn frames_mut(&mut self) -> std::slice::ChunksExactMut<'_, u8> {
        let len = self.frame_len();
        self.data.chunks_exact_mut(len)
    }

    pub fn aline(&self, f: usize, a: usize) -> &[u8] {
        let start = (f * self.n_alines + a) * self.n_r;
        &self.data[start..start + self.n_r]
    }

    pub fn get(&self, f: usize, a: usize, r: usize) -> u8 {
        self.data[(f * self.n_alines + a) * self.n_r + r]
    }

    pub fn set(&mut self, f: usize, a: usize, r: usize, code: u8) {
        self.data[(f * self.n_alines + a) * self.n_r + r] = code;
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&c| c == label.code()).count()
    }

    pub fn slice(&self, start: usize, end: usize) -> LabelVolume {
        let len = self.frame_len();
        LabelVolume {
            n_frames: end - start + 1,
            n_alines: self.n_alines,
            n_r: self.n_r,
            data: self.data[start * len..(end + 1) * len].to_vec(),
        }
    }
}

/// Radial boundary position per A-line, in radial pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub radii: Vec<f64>,
    pub closed: bool,
}

impl Contour {
    pub fn closed(radii: Vec<f64>) -> Self {
        Self { radii, closed: true }
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Largest absolute step between consecutive A-lines, including wrap-around when closed.
    pub fn max_jump(&self) -> f64 {
        let n = self.radii.len();
        if n < 2 {
            return 0.0;
        }
        let steps = if self.closed { n } else { n - 1 };
        (0..steps)
            .map(|i| (self.radii[i] - self.radii[(i + 1) % n]).abs())
            .fold(0.0, f64::max)
    }

    /// Cartesian vertices in pixels about the catheter center.
    pub fn cartesian_points(&self) -> Vec<(f64, f64)> {
        let n = self.radii.len();
        self.radii
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let t = aline_angle(i, n);
                (r * t.cos(), r * t.sin())
            })
            .collect()
    }
}

/// Angle in radians of A-line `i` out of `n`.
#[inline]
pub fn aline_angle(i: usize, n: usize) -> f64 {
    i as f64 * TAU / n as f64
}

/// A-line index nearest to `deg` degrees.
pub fn aline_for_degrees(deg: f64, n: usize) -> usize {
    let a = (deg.rem_euclid(360.0) / 360.0 * n as f64).round() as usize;
    a % n
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianImage {
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl CartesianImage {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.size + x]
    }
}

/// Radial pixels per cartesian pixel when the full A-line fits the half width.
fn cartesian_scale(n_r: usize, out_size: usize) -> f64 {
    n_r as f64 / (out_size as f64 / 2.0)
}

/// Polar coordinates `(aline, r)` in fractional units for cartesian pixel `(x, y)`.
/// `y` grows upward in the physical frame, downward in the image.
fn cartesian_to_polar_coords(x: usize, y: usize, out_size: usize, scale: f64, n_alines: usize) -> (f64, f64) {
    let half = out_size as f64 / 2.0;
    let dx = (x as f64 + 0.5 - half) * scale;
    let dy = (half - (y as f64 + 0.5)) * scale;
    let r = dx.hypot(dy);
    let theta = dy.atan2(dx).rem_euclid(TAU);
    (theta / TAU * n_alines as f64, r)
}

fn sample_bilinear(grid: &Grid<f32>, a: f64, r: f64) -> f32 {
    let n_a = grid.rows();
    let n_r = grid.cols();
    if r > (n_r - 1) as f64 {
        return 0.0;
    }
    let a0f = a.floor();
    let fa = (a - a0f) as f32;
    let a0 = (a0f as i64).rem_euclid(n_a as i64) as usize;
    let a1 = (a0 + 1) % n_a;
    let r0 = r.floor() as usize;
    let r1 = (r0 + 1).min(n_r - 1);
    let fr = (r - r0 as f64) as f32;
    let v00 = grid.at(a0, r0);
    let v01 = grid.at(a0, r1);
    let v10 = grid.at(a1, r0);
    let v11 = grid.at(a1, r1);
    let near = v00 + (v01 - v00) * fr;
    let far = v10 + (v11 - v10) * fr;
    near + (far - near) * fa
}

/// Scan-convert a polar frame to a square cartesian image centered on the catheter.
///
/// The full radial extent maps onto half the output width, so `out_size = 2 * n_r`
/// gives one cartesian pixel per radial pixel. The pixel data is taken as already
/// z-offset corrected (see [`apply_z_offset`]).
pub fn polar_to_cartesian(frame: &PolarFrame, _cal: &Calibration, out_size: usize) -> CartesianImage {
    polar_grid_to_cartesian(&frame.to_f32(), out_size)
}

pub fn polar_grid_to_cartesian(grid: &Grid<f32>, out_size: usize) -> CartesianImage {
    let out_size = out_size.max(2);
    let scale = cartesian_scale(grid.cols(), out_size);
    let mut pixels = vec![0.0f32; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            let (a, r) = cartesian_to_polar_coords(x, y, out_size, scale, grid.rows());
            pixels[y * out_size + x] = sample_bilinear(grid, a, r);
        }
    }
    CartesianImage { size: out_size, pixels }
}

/// Nearest-neighbour scan conversion for categorical label frames.
pub fn labels_to_cartesian(labels: &[u8], n_alines: usize, n_r: usize, out_size: usize) -> Vec<u8> {
    let out_size = out_size.max(2);
    let scale = cartesian_scale(n_r, out_size);
    let mut out = vec![0u8; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            let (a, r) = cartesian_to_polar_coords(x, y, out_size, scale, n_alines);
            let ri = r.round() as usize;
            if ri >= n_r {
                continue;
            }
            let ai = (a.round() as usize) % n_alines;
            out[y * out_size + x] = labels[ai * n_r + ri];
        }
    }
    out
}

/// Resample a cartesian image back onto a polar grid (bilinear).
pub fn cartesian_to_polar(image: &CartesianImage, n_alines: usize, n_r: usize) -> Grid<f32> {
    let size = image.size;
    let scale = cartesian_scale(n_r, size);
    let half = size as f64 / 2.0;
    Grid::from_fn(n_alines, n_r, |a, r| {
        let t = aline_angle(a, n_alines);
        let rr = r as f64 / scale;
        // continuous image coordinates of the sample, pixel centers at k + 0.5
        let fx = half + rr * t.cos() - 0.5;
        let fy = half - rr * t.sin() - 0.5;
        if fx < 0.0 || fy < 0.0 || fx > (size - 1) as f64 || fy > (size - 1) as f64 {
            return 0.0;
        }
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(size - 1);
        let y1 = (y0 + 1).min(size - 1);
        let wx = (fx - x0 as f64) as f32;
        let wy = (fy - y0 as f64) as f32;
        let top = image.get(x0, y0) * (1.0 - wx) + image.get(x1, y0) * wx;
        let bottom = image.get(x0, y1) * (1.0 - wx) + image.get(x1, y1) * wx;
        top * (1.0 - wy) + bottom * wy
    })
}

/// Shift every A-line radially by `delta_px` (positive moves content outward),
/// zero-filling vacated samples and accumulating the shift in the calibration.
pub fn apply_z_offset(pullback: &Pullback, delta_px: i64) -> Result<Pullback, ModelError> {
    let n_r = pullback.n_r();
    if delta_px.unsigned_abs() as usize >= n_r {
        return Err(ModelError::OffsetOutOfRange { delta: delta_px, n_r });
    }
    let total = pullback.calibration.z_offset_px as i64 + delta_px;
    if total.unsigned_abs() as usize >= n_r {
        return Err(ModelError::OffsetOutOfRange { delta: total, n_r });
    }
    let frames = pullback
        .frames()
        .iter()
        .map(|f| {
            let mut out = Grid::<u16>::new(f.n_alines(), n_r);
            for a in 0..f.n_alines() {
                let src = f.pixels.row(a);
                let dst = out.row_mut(a);
                shift_row(src, dst, delta_px);
            }
            PolarFrame {
                index: f.index,
                pixels: out,
            }
        })
        .collect();
    let mut calibration = pullback.calibration;
    calibration.z_offset_px = total as i32;
    Ok(Pullback {
        id: pullback.id.clone(),
        calibration,
        n_alines: pullback.n_alines,
        n_r,
        frames,
    })
}

fn shift_row<T: Copy + Default>(src: &[T], dst: &mut [T], delta: i64) {
    let n = src.len() as i64;
    for (r, d) in dst.iter_mut().enumerate() {
        let s = r as i64 - delta;
        *d = if (0..n).contains(&s) { src[s as usize] } else { T::default() };
    }
}

/// Keep exactly `depth_px` radial columns of a pixel-shifted frame, zero-padding short A-lines.
pub fn crop_depth<T: Copy + Default>(shifted: &Grid<T>, depth_px: usize) -> Grid<T> {
    let keep = depth_px.min(shifted.cols());
    let mut out = Grid::new(shifted.rows(), depth_px);
    for a in 0..shifted.rows() {
        out.row_mut(a)[..keep].copy_from_slice(&shifted.row(a)[..keep]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from_fn(n_a: usize, n_r: usize, f: impl FnMut(usize, usize) -> u16) -> PolarFrame {
        PolarFrame {
            index: 0,
            pixels: Grid::from_fn(n_a, n_r, f),
        }
    }

    #[test]
    fn uniform_frame_gives_uniform_disk() {
        let frame = frame_from_fn(64, 300, |_, _| 1000);
        let img = polar_to_cartesian(&frame, &Calibration::default(), 120);
        let c = 60;
        assert!((img.get(c, c) - 1000.0).abs() < 1e-3);
        assert!((img.get(c + 40, c) - 1000.0).abs() < 1e-3);
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(119, 119), 0.0);
    }

    #[test]
    fn bright_aline_at_zero_is_ray_along_positive_x() {
        let frame = frame_from_fn(360, 300, |a, _| if a == 0 { 5000 } else { 0 });
        let img = polar_to_cartesian(&frame, &Calibration::default(), 600);
        let row = 299; // y just above center
        let right: f32 = (310..590).map(|x| img.get(x, row)).sum();
        let left: f32 = (10..290).map(|x| img.get(x, row)).sum();
        assert!(right > 1000.0);
        assert_eq!(left, 0.0);
        let up: f32 = (10..290).map(|y| img.get(300, y)).sum();
        assert!(up < right * 0.05);
    }

    #[test]
    fn z_offset_identity_and_near_inverse() {
        let frame = frame_from_fn(8, 300, |a, r| (a * 300 + r) as u16 + 1);
        let pb = Pullback::new("t", Calibration::default(), 8, 300, vec![frame]).unwrap();
        assert_eq!(apply_z_offset(&pb, 0).unwrap(), pb);
        let back = apply_z_offset(&apply_z_offset(&pb, 10).unwrap(), -10).unwrap();
        assert_eq!(back.calibration.z_offset_px, 0);
        for a in 0..8 {
            let orig = pb.frame(0).pixels.row(a);
            let got = back.frame(0).pixels.row(a);
            assert_eq!(&got[..290], &orig[..290]);
            assert!(got[290..].iter().all(|&v| v == 0));
        }
        assert!(matches!(
            apply_z_offset(&pb, 300),
            Err(ModelError::OffsetOutOfRange { .. })
        ));
        assert!(apply_z_offset(&pb, -299).is_ok());
    }

    #[test]
    fn crop_depth_pads_and_truncates() {
        let g = Grid::<u16>::filled(4, 976, 7);
        let c = crop_depth(&g, 300);
        assert_eq!(c.cols(), 300);
        assert!(c.as_slice().iter().all(|&v| v == 7));
        let short = Grid::<u16>::filled(4, 120, 3);
        let c = crop_depth(&short, 300);
        assert_eq!(c.cols(), 300);
        assert!(c.row(2)[..120].iter().all(|&v| v == 3));
        assert!(c.row(2)[120..].iter().all(|&v| v == 0));
        let zero = Grid::<f32>::new(4, 500);
        assert!(crop_depth(&zero, 300).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pullback_rejects_bad_dimensions() {
        let frame = frame_from_fn(4, 300, |_, _| 0);
        assert!(Pullback::new("x", Calibration::default(), 4, 300, vec![frame]).is_err());
        let frame = frame_from_fn(8, 300, |_, _| 0);
        assert!(Pullback::new("x", Calibration::default(), 8, 301, vec![frame]).is_err());
        assert!(Calibration::new(0.0, 0.2, 0).is_err());
        assert!(Calibration::new(5.0, -1.0, 0).is_err());
    }

    #[test]
    fn contour_jump_wraps() {
        let c = Contour::closed(vec![10.0, 12.0, 13.0, 4.0]);
        assert_eq!(c.max_jump(), 9.0);
        let open = Contour {
            radii: vec![10.0, 12.0, 13.0, 11.0],
            closed: false,
        };
        assert_eq!(open.max_jump(), 2.0);
    }
}
