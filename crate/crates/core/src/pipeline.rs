//! End-to-end analysis of one pullback and a sequential job queue.
//!
//! Stages run in order: guidewire, lumen, plaque, stent (stent mode only),
//! quant, export. Frames are processed data-parallel inside a stage. A frame
//! whose lumen cannot be found is flagged and skipped by later stages; it never
//! aborts the pullback.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Mode, PipelineConfig, Roi};
use crate::io::{self, IoError, PROBS_FILE};
use crate::model::{Contour, Grid, Label, LabelVolume, Pullback, ANALYSIS_DEPTH_PX};
use crate::plaque::{
    gate_frames, gate_score, postprocess_labels, ExternalSegmenter, FrameGate, ReferenceSegmenter, Segmenter,
    SegmenterInput,
};
use crate::preprocess::{
    accumulate_intensity, detect_guidewire, mask_guidewire_in_place, model_input_patch, segment_lumen_dp,
    GuidewireBand, ShiftRecord,
};
use crate::quant::{enface_maps, lesion_quant, quantify, EnFaceKind, EnFaceMaps, FrameQuant, LesionQuant};
use crate::registration::{thickness_signal, ThicknessSignal};
use crate::stent::corpus::default_models;
use crate::stent::model::TrainedModel;
use crate::stent::{analyze_stent, StentAnalysis, StentError, StentModels};

/// Output directory inside a container.
pub const ANALYSIS_DIR: &str = "analysis";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Stent(#[from] StentError),
    #[error("roi {start}:{end} outside pullback of {n_frames} frames")]
    RoiOutOfRange { start: usize, end: usize, n_frames: usize },
    #[error("pullback has no frames")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Guidewire,
    Lumen,
    Plaque,
    Stent,
    Quant,
    Export,
}

impl Stage {
    pub fn plan(mode: Mode) -> Vec<Stage> {
        let mut s = vec![Stage::Guidewire, Stage::Lumen, Stage::Plaque];
        if mode == Mode::StentAnalysis {
            s.push(Stage::Stent);
        }
        s.extend([Stage::Quant, Stage::Export]);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub stage: Stage,
    /// False when the stage starts, true when it ends.
    pub finished: bool,
    /// Completed fraction of the whole run.
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Everything one analysis run produces for its ROI. Frame numbers in `frames`,
/// `lesions` and `stent` are pullback frame numbers; arrays are indexed from the
/// ROI start.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub pullback_id: String,
    pub mode: Mode,
    pub roi: Roi,
    pub labels: LabelVolume,
    pub band: Option<GuidewireBand>,
    pub borders: Vec<Option<Contour>>,
    pub failed: Vec<bool>,
    pub gate: FrameGate,
    pub frames: Vec<FrameQuant>,
    pub lesions: Vec<LesionQuant>,
    pub enface: EnFaceMaps,
    pub stent: Option<StentAnalysis>,
    pub thickness: Option<ThicknessSignal>,
    pub provider: ProviderInfo,
    pub warnings: Vec<String>,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub version: String,
}

/// Deterministic run summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub pullback_id: String,
    pub mode: Mode,
    pub roi: Roi,
    pub n_frames: usize,
    pub failed_frames: Vec<usize>,
    pub gated_frames: usize,
    pub guidewire_found: bool,
    pub segmenter: ProviderInfo,
    pub config_sha256: String,
    pub engine_version: String,
    pub warnings: Vec<String>,
    pub stent: Option<crate::stent::StentReport>,
}

struct Clock<'a> {
    plan: Vec<Stage>,
    done: usize,
    timings: Vec<StageTiming>,
    progress: &'a mut dyn FnMut(ProgressEvent),
}

impl Clock<'_> {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let n = self.plan.len() as f64;
        (self.progress)(ProgressEvent {
            stage,
            finished: false,
            fraction: self.done as f64 / n,
        });
        let t0 = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage,
            seconds: t0.elapsed().as_secs_f64(),
        });
        self.done += 1;
        (self.progress)(ProgressEvent {
            stage,
            finished: true,
            fraction: self.done as f64 / n,
        });
        out
    }
}

fn resolve_roi(roi: Option<Roi>, n_frames: usize) -> Result<Roi, PipelineError> {
    if n_frames == 0 {
        return Err(PipelineError::Empty);
    }
    let roi = roi.unwrap_or(Roi {
        start: 0,
        end: n_frames - 1,
    });
    if roi.start > roi.end || roi.end >= n_frames {
        return Err(PipelineError::RoiOutOfRange {
            start: roi.start,
            end: roi.end,
            n_frames,
        });
    }
    Ok(roi)
}

/// Strut classifiers named in the config, if any.
pub fn configured_models(cfg: &PipelineConfig) -> Result<Option<StentModels>, PipelineError> {
    match (&cfg.models.detector, &cfg.models.coverage) {
        (Some(d), Some(c)) => Ok(Some(StentModels::new(TrainedModel::load(d)?, TrainedModel::load(c)?)?)),
        _ => Ok(None),
    }
}

/// Lumen below the border, guidewire A-lines, background elsewhere.
fn base_labels(n_a: usize, n_r: usize, borders: &[Option<Contour>], band: Option<&GuidewireBand>) -> LabelVolume {
    let mut labels = LabelVolume::new(borders.len(), n_a, n_r);
    let lumen = Label::Lumen.code();
    for (frame, border) in labels.frames_mut().zip(borders) {
        let Some(border) = border else { continue };
        for (aline, &r) in frame.chunks_exact_mut(n_r).zip(&border.radii) {
            let edge = (r.round().max(0.0) as usize).min(n_r);
            aline[..edge].fill(lumen);
        }
    }
    if let Some(b) = band {
        mask_guidewire_in_place(&mut labels, b);
    }
    labels
}

/// Run the analysis on an in-memory pullback.
///
/// `external_probs` replaces the reference segmenter with probability maps in
/// container layout covering the whole pullback.
pub fn analyze(
    pullback: &Pullback,
    cfg: &PipelineConfig,
    external_probs: Option<(&str, &[f32])>,
    models: Option<&StentModels>,
    progress: &mut dyn FnMut(ProgressEvent),
) -> Result<AnalysisOutput, PipelineError> {
    cfg.validate()?;
    let roi = resolve_roi(cfg.roi, pullback.n_frames())?;
    let full = roi.start == 0 && roi.end + 1 == pullback.n_frames();
    let sliced;
    let pb = if full {
        pullback
    } else {
        sliced = pullback.slice(roi.start, roi.end);
        &sliced
    };
    let (n_f, n_a, n_r) = (pb.n_frames(), pb.n_alines(), pb.n_r());
    let cal = pb.calibration;
    let mut warnings = Vec::new();
    let mut clock = Clock {
        plan: Stage::plan(cfg.mode),
        done: 0,
        timings: Vec::new(),
        progress,
    };

    let band = clock.run(Stage::Guidewire, || detect_guidewire(&accumulate_intensity(pb), &cfg.guidewire));
    let band = match band {
        Ok(b) => Some(b),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };

    let borders: Vec<Option<Contour>> = clock.run(Stage::Lumen, || {
        segment_lumen_dp(pb, band.as_ref(), &cfg.lumen)
            .into_iter()
            .map(Result::ok)
            .collect()
    });
    let failed: Vec<bool> = borders.iter().map(Option::is_none).collect();
    for (k, _) in failed.iter().enumerate().filter(|(_, &f)| f) {
        warnings.push(format!("lumen segmentation failed on frame {}", roi.start + k));
    }

    let external = external_probs.map(|(name, probs)| {
        let len = n_a * n_r;
        ExternalSegmenter {
            provider: name.to_string(),
            probs: probs[roi.start * len..(roi.end + 1) * len].to_vec(),
            n_alines: n_a,
            n_r,
        }
    });
    let reference = ReferenceSegmenter::new(cfg.plaque.segmenter.clone());
    let segmenter: &dyn Segmenter = match &external {
        Some(e) => e,
        None => &reference,
    };
    let provider = ProviderInfo {
        name: segmenter.name().to_string(),
        version: segmenter.version().to_string(),
    };

    let (labels, gate) = clock.run(Stage::Plaque, || {
        let per_frame: Vec<(Grid<f32>, ShiftRecord, Vec<bool>, f64)> = (0..n_f)
            .into_par_iter()
            .map(|f| {
                let excluded = band.as_ref().map_or_else(|| vec![false; n_a], |b| b.mask(f));
                let Some(border) = &borders[f] else {
                    let shift = ShiftRecord { shifts: vec![0; n_a] };
                    return (Grid::new(n_a, ANALYSIS_DEPTH_PX), shift, excluded, 0.0);
                };
                let shift = ShiftRecord::from_contour(border, n_r);
                let patch = model_input_patch(pb.frame(f), &shift, cfg.plaque.patch_sigma);
                let probs = segmenter.segment(&SegmenterInput {
                    patch: &patch,
                    frame: f,
                    shift: &shift,
                    excluded: &excluded,
                });
                let score = gate_score(&probs);
                (probs, shift, excluded, score)
            })
            .collect();
        let scores: Vec<f64> = per_frame.iter().map(|p| p.3).collect();
        let gate = gate_frames(&scores, cfg.plaque.gate_threshold);
        let mut labels = base_labels(n_a, n_r, &borders, band.as_ref());
        let (mut probs, mut shifts, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
        for (p, s, e, _) in per_frame {
            probs.push(p);
            shifts.push(s);
            excluded.push(e);
        }
        postprocess_labels(&mut labels, &probs, &shifts, &excluded, &gate, &cfg.plaque.postprocess);
        (labels, gate)
    });

    let stent = if cfg.mode == Mode::StentAnalysis {
        let owned = if models.is_none() { configured_models(cfg)? } else { None };
        let models = models.or(owned.as_ref()).unwrap_or_else(|| default_models());
        let mut analysis = clock.run(Stage::Stent, || analyze_stent(pb, &borders, band.as_ref(), models, &cfg.stent))?;
        for r in &mut analysis.records {
            r.frame += roi.start;
        }
        for seg in analysis
            .report
            .malapposed_segments
            .iter_mut()
            .chain(analysis.report.uncovered_segments.iter_mut())
        {
            seg.start_frame += roi.start;
            seg.end_frame += roi.start;
        }
        for s in &mut analysis.report.frames {
            s.frame += roi.start;
        }
        Some(analysis)
    } else {
        None
    };

    let (frames, lesions, enface, thickness) = clock.run(Stage::Quant, || {
        let mut frames = quantify(&labels, &cal, &gate.gated, &failed);
        let mut lesions = lesion_quant(&frames, &gate.gated, &cal, &cfg.quant.score);
        for q in &mut frames {
            q.frame += roi.start;
        }
        for l in &mut lesions {
            l.start_frame += roi.start;
            l.end_frame += roi.start;
        }
        let enface = enface_maps(&labels, &cal, cfg.quant.enface_bins);
        let thickness = (cfg.mode == Mode::FollowUp).then(|| thickness_signal(&labels, &cal, &pb.id));
        (frames, lesions, enface, thickness)
    });

    let timings = clock.timings;
    Ok(AnalysisOutput {
        pullback_id: pb.id.clone(),
        mode: cfg.mode,
        roi,
        labels,
        band,
        borders,
        failed,
        gate,
        frames,
        lesions,
        enface,
        stent,
        thickness,
        provider,
        warnings,
        timings,
    })
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl AnalysisOutput {
    pub fn report_meta(&self, cfg: &PipelineConfig) -> ReportMeta {
        ReportMeta {
            pullback_id: self.pullback_id.clone(),
            mode: self.mode,
            roi: self.roi,
            n_frames: self.labels.n_frames(),
            failed_frames: self
                .failed
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(k, _)| self.roi.start + k)
                .collect(),
            gated_frames: self.gate.gated.iter().filter(|&&g| g).count(),
            guidewire_found: self.band.is_some(),
            segmenter: self.provider.clone(),
            config_sha256: config_hash(cfg),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            warnings: self.warnings.clone(),
            stent: self.stent.as_ref().map(|s| s.report.clone()),
        }
    }

    /// Every deterministic artifact as (file name, bytes).
    pub fn artifacts(&self, cfg: &PipelineConfig) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![
            ("labels.raw".to_string(), self.labels.as_bytes().to_vec()),
            ("quant.csv".to_string(), io::quant_csv(&self.frames)),
            ("lesions.csv".to_string(), io::lesion_csv(&self.lesions)),
            ("report.json".to_string(), pretty(&self.report_meta(cfg))),
        ];
        for kind in [EnFaceKind::Angle, EnFaceKind::Thickness, EnFaceKind::Depth] {
            let name = serde_json::to_value(kind).expect("kind serializes");
            out.push((
                format!("enface_{}.png", name.as_str().expect("string kind")),
                io::enface_png(&self.enface, kind),
            ));
        }
        if let Some(s) = &self.stent {
            out.push(("struts.csv".to_string(), io::strut_csv(&s.records)));
            out.push(("stent.json".to_string(), pretty(s)));
        }
        if let Some(t) = &self.thickness {
            out.push(("thickness.json".to_string(), pretty(t)));
        }
        out
    }

    /// Write the artifacts into `dir`.
    pub fn export(&self, dir: &Path, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, IoError> {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        for (name, bytes) in self.artifacts(cfg) {
            written.push(write_file(&dir.join(name), &bytes)?);
        }
        Ok(written)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf, IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializes");
    out.push(b'\n');
    out
}

/// Load a container, run the analysis with its config and write the results to
/// `<dir>/analysis`.
pub fn run_pipeline(
    dir: &Path,
    cfg: &PipelineConfig,
    progress: &mut dyn FnMut(ProgressEvent),
) -> Result<AnalysisOutput, PipelineError> {
    cfg.validate()?;
    let pullback = io::load_pullback(dir)?;
    let probs_path = cfg.plaque.external_probs.as_ref().map(|p| {
        if p.is_absolute() {
            p.clone()
        } else {
            dir.join(p)
        }
    });
    let probs = match &probs_path {
        Some(p) => Some(io::load_probs(p, &io::ContainerMeta::of(&pullback))?),
        None => None,
    };
    let provider = cfg
        .plaque
        .external_provider
        .clone()
        .unwrap_or_else(|| PROBS_FILE.to_string());
    let mut out = analyze(
        &pullback,
        cfg,
        probs.as_deref().map(|p| (provider.as_str(), p)),
        None,
        progress,
    )?;
    let stages = Stage::plan(cfg.mode);
    progress(ProgressEvent {
        stage: Stage::Export,
        finished: false,
        fraction: (stages.len() - 1) as f64 / stages.len() as f64,
    });
    let t0 = Instant::now();
    let out_dir = dir.join(ANALYSIS_DIR);
    out.export(&out_dir, cfg)?;
    out.timings.push(StageTiming {
        stage: Stage::Export,
        seconds: t0.elapsed().as_secs_f64(),
    });
    write_file(&out_dir.join("timings.json"), &pretty(&out.timings))?;
    progress(ProgressEvent {
        stage: Stage::Export,
        finished: true,
        fraction: 1.0,
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisJob {
    pub id: u64,
    pub path: PathBuf,
    pub config: PipelineConfig,
    pub status: JobStatus,
    pub stage: Option<Stage>,
    pub progress: f64,
    pub timings: Vec<StageTiming>,
    pub error: Option<String>,
    /// Whether the failure was a container format problem.
    pub format_error: bool,
}

pub type JobHook = Arc<dyn Fn(&AnalysisJob, Option<&AnalysisOutput>) + Send + Sync>;

#[derive(Default)]
struct QueueState {
    jobs: BTreeMap<u64, AnalysisJob>,
    pending: VecDeque<u64>,
    log: Vec<(u64, JobStatus)>,
    next_id: u64,
    shutdown: bool,
}

struct Shared {
    state: Mutex<QueueState>,
    changed: Condvar,
    hook: Option<JobHook>,
}

/// Jobs run one at a time, in submission order, on a worker thread.
pub struct JobQueue {
    shared: Arc<Shared>,
    worker: Option<std::thread::JoinHandle<()>>,
}

impl JobQueue {
    pub fn start() -> Self {
        Self::with_hook(None)
    }

    /// `hook` runs on the worker after each job finishes, before `get` and
    /// `wait` report it as terminal.
    pub fn with_hook(hook: Option<JobHook>) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(QueueState {
                next_id: 1,
                ..Default::default()
            }),
            changed: Condvar::new(),
            hook,
        });
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("octopus-jobs".into())
            .spawn(move || worker_loop(&worker_shared))
            .expect("spawn job worker");
        Self {
            shared,
            worker: Some(worker),
        }
    }

    pub fn submit(&self, path: impl Into<PathBuf>, config: PipelineConfig) -> u64 {
        let mut st = self.shared.state.lock().expect("queue lock");
        let id = st.next_id;
        st.next_id += 1;
        st.jobs.insert(
            id,
            AnalysisJob {
                id,
                path: path.into(),
                config,
                status: JobStatus::Queued,
                stage: None,
                progress: 0.0,
                timings: Vec::new(),
                error: None,
                format_error: false,
            },
        );
        st.pending.push_back(id);
        st.log.push((id, JobStatus::Queued));
        self.shared.changed.notify_all();
        id
    }

    pub fn get(&self, id: u64) -> Option<AnalysisJob> {
        self.shared.state.lock().expect("queue lock").jobs.get(&id).cloned()
    }

    /// Block until the job is done or failed.
    pub fn wait(&self, id: u64) -> Option<AnalysisJob> {
        let mut st = self.shared.state.lock().expect("queue lock");
        loop {
            match st.jobs.get(&id) {
                None => return None,
                Some(j) if j.status.is_terminal() => return Some(j.clone()),
                Some(_) => st = self.shared.changed.wait(st).expect("queue lock"),
            }
        }
    }

    /// Every status transition in the order it happened.
    pub fn log(&self) -> Vec<(u64, JobStatus)> {
        self.shared.state.lock().expect("queue lock").log.clone()
    }

    /// True while a queued or running job targets `path`.
    pub fn is_busy(&self, path: &Path) -> bool {
        self.shared
            .state
            .lock()
            .expect("queue lock")
            .jobs
            .values()
            .any(|j| !j.status.is_terminal() && j.path == path)
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shared.state.lock().expect("queue lock").shutdown = true;
        self.shared.changed.notify_all();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn worker_loop(shared: &Shared) {
    loop {
        let (id, path, config) = {
            let mut st = shared.state.lock().expect("queue lock");
            loop {
                if let Some(id) = st.pending.pop_front() {
                    let job = st.jobs.get_mut(&id).expect("pending job exists");
                    job.status = JobStatus::Running;
                    let picked = (id, job.path.clone(), job.config.clone());
                    st.log.push((id, JobStatus::Running));
                    shared.changed.notify_all();
                    break picked;
                }
                if st.shutdown {
                    return;
                }
                st = shared.changed.wait(st).expect("queue lock");
            }
        };
        let mut on_progress = |e: ProgressEvent| {
            let mut st = shared.state.lock().expect("queue lock");
            if let Some(j) = st.jobs.get_mut(&id) {
                j.stage = Some(e.stage);
                j.progress = e.fraction;
            }
            shared.changed.notify_all();
        };
        let result = run_pipeline(&path, &config, &mut on_progress);
        let mut snapshot = shared.state.lock().expect("queue lock").jobs[&id].clone();
        match &result {
            Ok(out) => {
                snapshot.status = JobStatus::Done;
                snapshot.progress = 1.0;
                snapshot.timings = out.timings.clone();
            }
            Err(e) => {
                snapshot.status = JobStatus::Failed;
                snapshot.error = Some(e.to_string());
                snapshot.format_error = matches!(e, PipelineError::Io(io) if io.is_format());
            }
        }
        if let Some(hook) = &shared.hook {
            hook(&snapshot, result.as_ref().ok());
        }
        let mut st = shared.state.lock().expect("queue lock");
        st.log.push((id, snapshot.status));
        st.jobs.insert(id, snapshot);
        shared.changed.notify_all();
    }
}
