//! Pullback registry and per-pullback editable analysis state.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use octopus_core::config::Roi;
use octopus_core::io::{self, ContainerMeta, IoError};
use octopus_core::model::{LabelVolume, Pullback};
use octopus_core::pipeline::{ReportMeta, ANALYSIS_DIR};
use octopus_core::quant::{manual_measure, quantify, FrameQuant, Measurement};
use octopus_core::stent::StentAnalysis;

use crate::raster::{GeometryError, Stroke};

pub const EDITS_FILE: &str = "edits.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    Stroke(Stroke),
    /// Whole-frame write, stored as the pixels that changed: `[index, code]`.
    Replace { changes: Vec<(u32, u8)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    /// Revision produced by this edit.
    pub revision: u64,
    pub frame: usize,
    pub edit: Edit,
    pub timestamp_ms: u64,
}

/// Ordered edits on top of the automated labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditTranscript {
    /// Revision of the automated labels the edits start from.
    pub base_revision: u64,
    pub edits: Vec<EditRecord>,
}

impl EditTranscript {
    pub fn revision(&self) -> u64 {
        self.edits.last().map_or(self.base_revision, |e| e.revision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub measurement: Measurement,
    /// Degrees for angles, millimeters otherwise.
    pub value: f64,
    pub unit: String,
    pub timestamp_ms: u64,
}

/// Labels and per-frame flags of the last completed analysis, with edits.
pub struct Analysis {
    pub roi: Roi,
    /// Automated labels, full pullback size (frames outside the ROI are background).
    pub auto: LabelVolume,
    pub labels: LabelVolume,
    pub gated: Vec<bool>,
    pub failed: Vec<bool>,
    pub transcript: EditTranscript,
    pub stent: Option<StentAnalysis>,
    last_put: Option<(u64, [u8; 32], u64)>,
}

#[derive(Debug)]
pub enum EditError {
    Stale { current: u64 },
    Geometry(GeometryError),
    BadFrame(String),
    Io(IoError),
}

pub enum EditOutcome {
    Applied { revision: u64, pixels: usize },
    /// Same request as the last applied one; nothing was changed.
    Replayed { revision: u64 },
}

impl EditOutcome {
    pub fn revision(&self) -> u64 {
        match self {
            EditOutcome::Applied { revision, .. } | EditOutcome::Replayed { revision } => *revision,
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn apply_edit(labels: &mut LabelVolume, frame: usize, edit: &Edit) -> Result<usize, GeometryError> {
    let (n_a, n_r) = (labels.n_alines(), labels.n_r());
    let data = labels.frame_mut(frame);
    match edit {
        Edit::Stroke(s) => s.apply(data, n_a, n_r),
        Edit::Replace { changes } => {
            for &(i, c) in changes {
                data[i as usize] = c;
            }
            Ok(changes.len())
        }
    }
}

/// Replay a transcript over automated labels.
pub fn replay(auto: &LabelVolume, transcript: &EditTranscript) -> Result<LabelVolume, GeometryError> {
    let mut labels = auto.clone();
    for e in &transcript.edits {
        apply_edit(&mut labels, e.frame, &e.edit)?;
    }
    Ok(labels)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, IoError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| IoError::Format {
            file: path.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(IoError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

impl Analysis {
    /// Read `<dir>/analysis`; `Ok(None)` when the pullback was never analyzed.
    pub fn load(dir: &Path, meta: &ContainerMeta) -> Result<Option<Analysis>, IoError> {
        let out = dir.join(ANALYSIS_DIR);
        let Some(report) = read_json::<ReportMeta>(&out.join("report.json"))? else {
            return Ok(None);
        };
        let roi = report.roi;
        let roi_meta = ContainerMeta {
            n_frames: roi.len(),
            ..meta.clone()
        };
        let part = io::load_labels(&out.join(io::LABELS_FILE), &roi_meta)?;
        let mut auto = LabelVolume::new(meta.n_frames, meta.n_alines, meta.n_r);
        for k in 0..roi.len() {
            auto.frame_mut(roi.start + k).copy_from_slice(part.frame(k));
        }
        let rows = io::parse_quant_csv(&fs::read(out.join("quant.csv")).map_err(|source| IoError::Io {
            path: out.join("quant.csv"),
            source,
        })?)?;
        let mut gated = vec![false; meta.n_frames];
        let mut failed = vec![false; meta.n_frames];
        for q in &rows {
            if q.frame < meta.n_frames {
                gated[q.frame] = q.gated;
                failed[q.frame] = report.failed_frames.contains(&q.frame);
            }
        }
        let stent = read_json::<StentAnalysis>(&out.join("stent.json"))?;
        let transcript = read_json::<EditTranscript>(&out.join(EDITS_FILE))?.unwrap_or_default();
        let labels = replay(&auto, &transcript).map_err(|e| IoError::Format {
            file: EDITS_FILE.into(),
            offset: 0,
            reason: e.to_string(),
        })?;
        Ok(Some(Analysis {
            roi,
            auto,
            labels,
            gated,
            failed,
            transcript,
            stent,
            last_put: None,
        }))
    }

    pub fn revision(&self) -> u64 {
        self.transcript.revision()
    }

    pub fn in_roi(&self, frame: usize) -> bool {
        (self.roi.start..=self.roi.end).contains(&frame)
    }

    /// Per-frame quantities recomputed from the current labels of the ROI.
    pub fn quant(&self, meta: &ContainerMeta) -> Vec<FrameQuant> {
        let (s, e) = (self.roi.start, self.roi.end);
        let mut rows = quantify(
            &self.labels.slice(s, e),
            &meta.calibration(),
            &self.gated[s..=e],
            &self.failed[s..=e],
        );
        for q in &mut rows {
            q.frame += s;
        }
        rows
    }

    /// Apply one edit under the revision protocol and persist the transcript.
    pub fn edit(&mut self, dir: &Path, expected: u64, frame: usize, edit: Edit) -> Result<EditOutcome, EditError> {
        let digest: [u8; 32] = Sha256::digest(serde_json::to_vec(&(frame, &edit)).expect("serializes")).into();
        if let Some((base, d, result)) = self.last_put {
            if base == expected && d == digest && result == self.revision() {
                return Ok(EditOutcome::Replayed { revision: result });
            }
        }
        let current = self.revision();
        if expected != current {
            return Err(EditError::Stale { current });
        }
        if !self.in_roi(frame) {
            return Err(EditError::BadFrame(format!("frame {frame} outside analyzed range")));
        }
        let mut scratch = self.labels.frame(frame).to_vec();
        let (n_a, n_r) = (self.labels.n_alines(), self.labels.n_r());
        let pixels = match &edit {
            Edit::Stroke(s) => s.apply(&mut scratch, n_a, n_r).map_err(EditError::Geometry)?,
            Edit::Replace { changes } => changes.len(),
        };
        let revision = current + 1;
        self.transcript.edits.push(EditRecord {
            revision,
            frame,
            edit,
            timestamp_ms: now_ms(),
        });
        if let Err(e) = write_json(&dir.join(ANALYSIS_DIR).join(EDITS_FILE), &self.transcript) {
            self.transcript.edits.pop();
            return Err(EditError::Io(e));
        }
        let record = self.transcript.edits.last().expect("just pushed");
        apply_edit(&mut self.labels, frame, &record.edit).expect("validated above");
        self.last_put = Some((expected, digest, revision));
        Ok(EditOutcome::Applied { revision, pixels })
    }

    /// Whole-frame replacement as a diff against the current frame.
    pub fn replace_frame(
        &mut self,
        dir: &Path,
        expected: u64,
        frame: usize,
        bytes: &[u8],
    ) -> Result<EditOutcome, EditError> {
        if !self.in_roi(frame) {
            return Err(EditError::BadFrame(format!("frame {frame} outside analyzed range")));
        }
        if bytes.len() != self.labels.frame_len() {
            return Err(EditError::BadFrame(format!(
                "{} bytes, frame holds {}",
                bytes.len(),
                self.labels.frame_len()
            )));
        }
        if let Some(pos) = bytes.iter().position(|&c| octopus_core::model::Label::from_code(c).is_none()) {
            return Err(EditError::BadFrame(format!("unknown label code {} at byte {pos}", bytes[pos])));
        }
        let changes = self
            .labels
            .frame(frame)
            .iter()
            .zip(bytes)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (_, &b))| (i as u32, b))
            .collect();
        self.edit(dir, expected, frame, Edit::Replace { changes })
    }
}

pub struct Entry {
    pub id: String,
    pub dir: PathBuf,
    pub meta: ContainerMeta,
    pixels: Mutex<Option<Arc<Pullback>>>,
    pub analysis: RwLock<Option<Analysis>>,
    pub annotations: Mutex<BTreeMap<usize, Vec<Annotation>>>,
}

impl Entry {
    pub fn open(dir: &Path) -> Result<Entry, IoError> {
        let meta = io::read_meta(dir)?;
        let analysis = Analysis::load(dir, &meta)?;
        let annotations = read_json(&dir.join(ANALYSIS_DIR).join(ANNOTATIONS_FILE))?.unwrap_or_default();
        Ok(Entry {
            id: meta.id.clone(),
            dir: dir.to_path_buf(),
            meta,
            pixels: Mutex::new(None),
            analysis: RwLock::new(analysis),
            annotations: Mutex::new(annotations),
        })
    }

    /// Pixel data, loaded on first use.
    pub fn pullback(&self) -> Result<Arc<Pullback>, IoError> {
        let mut slot = self.pixels.lock().expect("pixels lock");
        if let Some(p) = &*slot {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(io::load_pullback(&self.dir)?);
        *slot = Some(Arc::clone(&p));
        Ok(p)
    }

    /// Pick up a fresh analysis. Edits made against the previous labels are
    /// dropped and the revision moves past every revision handed out before.
    pub fn reload_analysis(&self) -> Result<(), IoError> {
        let mut slot = self.analysis.write().expect("analysis lock");
        let previous = slot.as_ref().map_or(0, Analysis::revision);
        let out = self.dir.join(ANALYSIS_DIR);
        let transcript = EditTranscript {
            base_revision: previous + 1,
            edits: Vec::new(),
        };
        write_json(&out.join(EDITS_FILE), &transcript)?;
        *slot = Analysis::load(&self.dir, &self.meta)?;
        Ok(())
    }

    pub fn annotate(&self, frame: usize, measurement: Measurement) -> Result<Option<Annotation>, IoError> {
        let Some(value) = manual_measure(&measurement, &self.meta.calibration()) else {
            return Ok(None);
        };
        let unit = match measurement {
            Measurement::Angle { .. } => "deg",
            _ => "mm",
        };
        let a = Annotation {
            measurement,
            value,
            unit: unit.to_string(),
            timestamp_ms: now_ms(),
        };
        let mut all = self.annotations.lock().expect("annotations lock");
        all.entry(frame).or_default().push(a.clone());
        let out = self.dir.join(ANALYSIS_DIR);
        fs::create_dir_all(&out).map_err(|source| IoError::Io {
            path: out.clone(),
            source,
        })?;
        write_json(&out.join(ANNOTATIONS_FILE), &*all)?;
        Ok(Some(a))
    }
}

/// All pullbacks the service knows, by id.
#[derive(Default)]
pub struct Registry {
    entries: RwLock<BTreeMap<String, Arc<Entry>>>,
}

impl Registry {
    /// Every immediate subdirectory of `root` holding a `meta.json`.
    pub fn scan(root: &Path) -> Result<Registry, IoError> {
        let reg = Registry::default();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|source| IoError::Io {
                path: root.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(io::META_FILE).is_file())
            .collect();
        if root.join(io::META_FILE).is_file() {
            dirs.push(root.to_path_buf());
        }
        dirs.sort();
        for d in dirs {
            match Entry::open(&d) {
                Ok(_) => {
                    reg.add(&d)?;
                }
                Err(e) => log::warn!("skipping {}: {e}", d.display()),
            }
        }
        Ok(reg)
    }

    pub fn add(&self, dir: &Path) -> Result<Arc<Entry>, IoError> {
        let entry = Arc::new(Entry::open(dir)?);
        self.entries
            .write()
            .expect("registry lock")
            .insert(entry.id.clone(), Arc::clone(&entry));
        Ok(entry)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Entry>> {
        self.entries.read().expect("registry lock").get(id).cloned()
    }

    pub fn by_dir(&self, dir: &Path) -> Option<Arc<Entry>> {
        self.entries
            .read()
            .expect("registry lock")
            .values()
            .find(|e| e.dir == dir)
            .cloned()
    }

    pub fn list(&self) -> Vec<Arc<Entry>> {
        self.entries.read().expect("registry lock").values().cloned().collect()
    }
}
