//! Pullback container, label and probability files, CSV reports and PNG rendering.
//!
//! A container is a directory:
//!
//! | file         | content                                                     |
//! |--------------|-------------------------------------------------------------|
//! | `meta.json`  | id, dimensions, calibration, format version                 |
//! | `frames.raw` | `u16` little-endian, frame-major, then A-line, r fastest     |
//! | `labels.raw` | `u8` label codes, same layout (optional)                     |
//! | `probs.raw`  | `f32` little-endian calcium probabilities, same layout (optional) |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    labels_to_cartesian, polar_grid_to_cartesian, Calibration, Grid, Label, LabelVolume, ModelError, PolarFrame,
    Pullback,
};
use crate::phantom::{GroundTruth, StrutTruth};
use crate::quant::{EnFaceKind, EnFaceMaps, FrameQuant, LesionQuant, ENFACE_SENTINEL};
use crate::stent::StrutRecord;

pub const CONTAINER_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.raw";
pub const LABELS_FILE: &str = "labels.raw";
pub const PROBS_FILE: &str = "probs.raw";

pub const QUANT_HEADER: [&str; 10] = [
    "frame",
    "lumen_area_mm2",
    "diam_max_mm",
    "diam_min_mm",
    "diam_mean_mm",
    "calc_angle_deg",
    "calc_thick_mm",
    "calc_depth_mm",
    "gated",
    "flags",
];

pub const LESION_HEADER: [&str; 8] = [
    "lesion",
    "start_frame",
    "end_frame",
    "length_mm",
    "max_angle_deg",
    "max_thick_mm",
    "min_depth_mm",
    "calcium_score",
];

pub const STRUT_HEADER: [&str; 11] = [
    "frame",
    "aline",
    "angle_deg",
    "center_px",
    "lead_px",
    "extent_px",
    "score",
    "coverage",
    "coverage_um",
    "malapposition_um",
    "malapposed",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {file} at byte {offset}: {reason}")]
    Format { file: String, offset: u64, reason: String },
    #[error("unsupported container version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(file: &str, offset: u64, reason: impl Into<String>) -> Self {
        IoError::Format {
            file: file.to_string(),
            offset,
            reason: reason.into(),
        }
    }

    /// True for malformed or unsupported input, as opposed to I/O failures.
    pub fn is_format(&self) -> bool {
        matches!(self, IoError::Format { .. } | IoError::VersionMismatch { .. } | IoError::Model(_))
    }
}

fn default_version() -> u32 {
    CONTAINER_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerMeta {
    pub id: String,
    pub n_frames: usize,
    pub n_alines: usize,
    pub n_r: usize,
    pub r_pixel_um: f64,
    pub frame_spacing_mm: f64,
    pub z_offset_px: i32,
    #[serde(default = "default_version")]
    pub version: u32,
}

impl ContainerMeta {
    pub fn of(pullback: &Pullback) -> Self {
        Self {
            id: pullback.id.clone(),
            n_frames: pullback.n_frames(),
            n_alines: pullback.n_alines(),
            n_r: pullback.n_r(),
            r_pixel_um: pullback.calibration.r_pixel_um,
            frame_spacing_mm: pullback.calibration.frame_spacing_mm,
            z_offset_px: pullback.calibration.z_offset_px,
            version: CONTAINER_VERSION,
        }
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            r_pixel_um: self.r_pixel_um,
            frame_spacing_mm: self.frame_spacing_mm,
            z_offset_px: self.z_offset_px,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.n_alines * self.n_r
    }

    pub fn n_samples(&self) -> usize {
        self.n_frames * self.frame_len()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| IoError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| IoError::io(&tmp, e))?;
    f.sync_all().map_err(|e| IoError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Rejects files whose length does not match; the offset is the first missing
/// byte for short files and the first surplus byte for long ones.
fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<(), IoError> {
    if bytes.len() < expected {
        let offset = bytes.len();
        return Err(IoError::format(
            &file_name(path),
            offset as u64,
            format!("truncated: {} of {expected} bytes", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(IoError::format(
            &file_name(path),
            expected as u64,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<ContainerMeta, IoError> {
    let path = dir.join(META_FILE);
    let bytes = read(&path)?;
    let meta: ContainerMeta = serde_json::from_slice(&bytes).map_err(|e| {
        let offset = line_col_offset(&bytes, e.line(), e.column());
        IoError::format(META_FILE, offset, e.to_string())
    })?;
    if meta.version != CONTAINER_VERSION {
        return Err(IoError::VersionMismatch {
            found: meta.version,
            supported: CONTAINER_VERSION,
        });
    }
    meta.calibration().validate(Some(meta.n_r))?;
    Ok(meta)
}

/// Byte offset of a 1-based (line, column) position.
fn line_col_offset(bytes: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len() + 1;
    }
    bytes.len() as u64
}

pub fn write_meta(dir: &Path, meta: &ContainerMeta) -> Result<(), IoError> {
    let mut json = serde_json::to_vec_pretty(meta).expect("meta serializes");
    json.push(b'\n');
    write_atomic(&dir.join(META_FILE), &json)
}

pub fn encode_frames(pullback: &Pullback) -> Vec<u8> {
    let mut out = Vec::with_capacity(pullback.n_frames() * pullback.n_alines() * pullback.n_r() * 2);
    for f in pullback.frames() {
        for &v in f.pixels.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_frames(bytes: &[u8], meta: &ContainerMeta) -> Result<Pullback, IoError> {
    check_len(Path::new(FRAMES_FILE), bytes, meta.n_samples() * 2)?;
    let len = meta.frame_len();
    let frames = bytes
        .chunks_exact(len * 2)
        .enumerate()
        .map(|(index, chunk)| {
            let px: Vec<u16> = chunk.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
            Ok(PolarFrame {
                index,
                pixels: Grid::from_vec(meta.n_alines, meta.n_r, px)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Pullback::new(
        meta.id.clone(),
        meta.calibration(),
        meta.n_alines,
        meta.n_r,
        frames,
    )?)
}

/// Create `dir` if needed and write `meta.json` and `frames.raw`.
pub fn save_pullback(dir: &Path, pullback: &Pullback) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_meta(dir, &ContainerMeta::of(pullback))?;
    write_atomic(&dir.join(FRAMES_FILE), &encode_frames(pullback))
}

pub fn load_pullback(dir: &Path) -> Result<Pullback, IoError> {
    let meta = read_meta(dir)?;
    let path = dir.join(FRAMES_FILE);
    let bytes = read(&path)?;
    decode_frames(&bytes, &meta)
}

pub fn save_labels(path: &Path, labels: &LabelVolume) -> Result<(), IoError> {
    write_atomic(path, labels.as_bytes())
}

pub fn decode_labels(bytes: &[u8], file: &str, meta: &ContainerMeta) -> Result<LabelVolume, IoError> {
    check_len(Path::new(file), bytes, meta.n_samples())?;
    if let Some(pos) = bytes.iter().position(|&c| Label::from_code(c).is_none()) {
        return Err(IoError::format(file, pos as u64, format!("unknown label code {}", bytes[pos])));
    }
    Ok(LabelVolume::from_vec(meta.n_frames, meta.n_alines, meta.n_r, bytes.to_vec())?)
}

pub fn load_labels(path: &Path, meta: &ContainerMeta) -> Result<LabelVolume, IoError> {
    let bytes = read(path)?;
    decode_labels(&bytes, &file_name(path), meta)
}

pub fn save_probs(path: &Path, probs: &[f32]) -> Result<(), IoError> {
    let bytes: Vec<u8> = probs.iter().flat_map(|p| p.to_le_bytes()).collect();
    write_atomic(path, &bytes)
}

/// Probability maps in container layout; every value must be finite and in [0, 1].
pub fn load_probs(path: &Path, meta: &ContainerMeta) -> Result<Vec<f32>, IoError> {
    let bytes = read(path)?;
    let file = file_name(path);
    check_len(path, &bytes, meta.n_samples() * 4)?;
    let mut out = Vec::with_capacity(meta.n_samples());
    for (k, b) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !(0.0..=1.0).contains(&v) {
            return Err(IoError::format(&file, (k * 4) as u64, format!("probability {v} outside [0, 1]")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Ground truth written next to a phantom container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub struts: Vec<StrutTruth>,
    pub frames: Vec<FrameQuant>,
    pub lumen_px: Vec<Vec<f64>>,
    pub guidewire: Option<Vec<Option<(usize, usize)>>>,
    pub calcium_frames: Vec<bool>,
}

impl TruthDocument {
    pub fn of(truth: &GroundTruth) -> Self {
        Self {
            struts: truth.struts.clone(),
            frames: truth.frames.clone(),
            lumen_px: truth.lumen.iter().map(|c| c.radii.clone()).collect(),
            guidewire: truth
                .guidewire
                .as_ref()
                .map(|b| (0..b.n_frames()).map(|f| b.interval(f)).collect()),
            calcium_frames: truth.calcium_frames.clone(),
        }
    }
}

/// Container plus `truth.json` and the ground-truth `labels.raw`.
pub fn save_phantom(dir: &Path, pullback: &Pullback, truth: &GroundTruth) -> Result<(), IoError> {
    save_pullback(dir, pullback)?;
    save_labels(&dir.join(LABELS_FILE), &truth.labels)?;
    let mut json = serde_json::to_vec_pretty(&TruthDocument::of(truth)).expect("truth serializes");
    json.push(b'\n');
    write_atomic(&dir.join("truth.json"), &json)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Per-frame report. Missing values are empty cells.
pub fn quant_csv(frames: &[FrameQuant]) -> Vec<u8> {
    csv_bytes(
        &QUANT_HEADER,
        frames.iter().map(|q| {
            vec![
                q.frame.to_string(),
                fmt_opt(q.lumen_area_mm2),
                fmt_opt(q.diam_max_mm),
                fmt_opt(q.diam_min_mm),
                fmt_opt(q.diam_mean_mm),
                fmt_f(q.calc_angle_deg),
                fmt_opt(q.calc_max_thickness_mm),
                fmt_opt(q.calc_min_depth_mm),
                u8::from(q.gated).to_string(),
                q.flags.code(),
            ]
        }),
    )
}

pub fn lesion_csv(lesions: &[LesionQuant]) -> Vec<u8> {
    csv_bytes(
        &LESION_HEADER,
        lesions.iter().enumerate().map(|(k, l)| {
            vec![
                (k + 1).to_string(),
                l.start_frame.to_string(),
                l.end_frame.to_string(),
                fmt_f(l.length_mm),
                fmt_f(l.max_angle_deg),
                fmt_opt(l.max_thickness_mm),
                fmt_opt(l.min_depth_mm),
                l.score.to_string(),
            ]
        }),
    )
}

pub fn strut_csv(struts: &[StrutRecord]) -> Vec<u8> {
    csv_bytes(
        &STRUT_HEADER,
        struts.iter().map(|s| {
            vec![
                s.frame.to_string(),
                s.aline.to_string(),
                fmt_f(s.angle_deg),
                fmt_f(s.center_px),
                s.lead_px.to_string(),
                s.extent_px.to_string(),
                fmt_f(s.score),
                if s.covered() { "covered" } else { "uncovered" }.to_string(),
                fmt_f(s.coverage_um),
                fmt_f(s.malapposition_um),
                u8::from(s.malapposed).to_string(),
            ]
        }),
    )
}

fn parse_opt(field: &str, row: usize, s: &str) -> Result<Option<f64>, IoError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| IoError::format("quant.csv", row as u64, format!("bad number {s:?} in {field}")))
}

/// Parse a per-frame report back. Only the columns are restored, so flags come
/// back from their text codes.
pub fn parse_quant_csv(bytes: &[u8]) -> Result<Vec<FrameQuant>, IoError> {
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| IoError::format("quant.csv", 0, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != QUANT_HEADER {
        return Err(IoError::format("quant.csv", 0, "unexpected header"));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            IoError::format("quant.csv", offset, e.to_string())
        })?;
        let offset = rec.position().map_or(k as u64, |p| p.byte()) as usize;
        let flags = &rec[9];
        out.push(FrameQuant {
            frame: rec[0]
                .parse()
                .map_err(|_| IoError::format("quant.csv", offset as u64, "bad frame"))?,
            lumen_area_mm2: parse_opt("lumen_area_mm2", offset, &rec[1])?,
            diam_max_mm: parse_opt("diam_max_mm", offset, &rec[2])?,
            diam_min_mm: parse_opt("diam_min_mm", offset, &rec[3])?,
            diam_mean_mm: parse_opt("diam_mean_mm", offset, &rec[4])?,
            calc_angle_deg: parse_opt("calc_angle_deg", offset, &rec[5])?.unwrap_or(0.0),
            calc_max_thickness_mm: parse_opt("calc_thick_mm", offset, &rec[6])?,
            calc_min_depth_mm: parse_opt("calc_depth_mm", offset, &rec[7])?,
            gated: &rec[8] == "1",
            flags: crate::quant::FrameFlags {
                guidewire_interpolated: flags.split('|').any(|f| f == "gw"),
                segmentation_failed: flags.split('|').any(|f| f == "segfail"),
            },
        });
    }
    Ok(out)
}

/// Display mapping from 16-bit intensity to 8-bit gray (square-root companding).
pub fn display_gray(v: f32) -> u8 {
    (255.0 * (v.max(0.0) / 65535.0).sqrt()).round().clamp(0.0, 255.0) as u8
}

/// Overlay color of a label code, if it is drawn.
pub fn label_color(code: u8) -> Option<[u8; 3]> {
    match Label::from_code(code)? {
        Label::Lumen => Some([255, 255, 0]),
        Label::Calcium => Some([255, 0, 0]),
        Label::Lipid => Some([0, 200, 0]),
        Label::Other => Some([0, 160, 255]),
        _ => None,
    }
}

/// Alpha-blend a label color over a gray value.
pub fn blend(gray: u8, color: [u8; 3], alpha: f32) -> [u8; 3] {
    color.map(|c| (gray as f32 * (1.0 - alpha) + c as f32 * alpha).round() as u8)
}

const OVERLAY_ALPHA: f32 = 0.45;

fn encode_png(width: usize, height: usize, color: image::ExtendedColorType, data: &[u8]) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, color)
        .expect("in-memory png");
    out
}

pub fn png_gray(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, image::ExtendedColorType::L8, data)
}

pub fn png_rgb(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, image::ExtendedColorType::Rgb8, data)
}

/// Gray image plus optional label codes; 8-bit grayscale PNG without labels,
/// RGB with them.
fn render(width: usize, height: usize, gray: &[u8], labels: Option<&[u8]>) -> Vec<u8> {
    match labels {
        None => png_gray(width, height, gray),
        Some(codes) => {
            let rgb: Vec<u8> = gray
                .iter()
                .zip(codes)
                .flat_map(|(&g, &c)| label_color(c).map_or([g, g, g], |col| blend(g, col, OVERLAY_ALPHA)))
                .collect();
            png_rgb(width, height, &rgb)
        }
    }
}

/// (r, θ) view: one row per A-line, one column per radial sample.
pub fn frame_png_rtheta(frame: &PolarFrame, labels: Option<&[u8]>) -> Vec<u8> {
    let gray: Vec<u8> = frame.pixels.as_slice().iter().map(|&v| display_gray(v as f32)).collect();
    render(frame.n_r(), frame.n_alines(), &gray, labels)
}

/// (x, y) view of side `size`, catheter at the center.
pub fn frame_png_xy(frame: &PolarFrame, labels: Option<&[u8]>, size: usize) -> Vec<u8> {
    let img = polar_grid_to_cartesian(&frame.to_f32(), size);
    let gray: Vec<u8> = img.pixels.iter().map(|&v| display_gray(v)).collect();
    let codes = labels.map(|l| labels_to_cartesian(l, frame.n_alines(), frame.n_r(), img.size));
    render(img.size, img.size, &gray, codes.as_deref())
}

/// En face map as an 8-bit image: rows are frames, columns angular bins.
/// Presence is 0/255; thickness and depth scale linearly to the map maximum,
/// with sentinel cells black.
pub fn enface_png(maps: &EnFaceMaps, kind: EnFaceKind) -> Vec<u8> {
    let values = maps.values(kind);
    let max = values
        .as_slice()
        .iter()
        .filter(|&&v| v != ENFACE_SENTINEL)
        .fold(0.0f64, |m, &v| m.max(v));
    let data: Vec<u8> = values
        .as_slice()
        .iter()
        .map(|&v| {
            if v == ENFACE_SENTINEL || max <= 0.0 {
                0
            } else {
                (1.0 + 254.0 * v / max).round() as u8
            }
        })
        .collect();
    png_gray(values.cols(), values.rows(), &data)
}

/// Longitudinal cut as a PNG, optional label overlay.
pub fn longitudinal_png(view: &crate::quant::LongitudinalView, overlay: bool) -> Vec<u8> {
    let gray: Vec<u8> = view.pixels.as_slice().iter().map(|&v| display_gray(v as f32)).collect();
    let labels = overlay.then(|| view.labels.as_slice());
    render(view.pixels.cols(), view.pixels.rows(), &gray, labels)
}
