//! Phantom training corpora for the strut classifiers and held-out evaluation.
//!
//! A corpus is a random-phantom recipe plus seeds, so the shipped models can
//! be rebuilt bit for bit from a small JSON description.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{train, ModelKind, TrainOptions, TrainingSet};
use super::{
    analyze_frame, detect_candidates, extract_features, StentConfig, StentError, StentModels, StrutCandidate,
    StrutRecord,
};
use crate::model::{Contour, Pullback};
use crate::phantom::{generate, random_spec, GroundTruth, RandomPhantomOptions, StrutTruth};
use crate::preprocess::{
    accumulate_intensity, detect_guidewire, segment_lumen_dp, GuidewireBand, GuidewireConfig, LumenConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seeds: Vec<u64>,
    pub phantom: RandomPhantomOptions,
    pub model_seed: u64,
    pub train: TrainOptions,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seeds: (101..=106).collect(),
            phantom: RandomPhantomOptions {
                n_frames: 16,
                struts_per_frame: 8,
                lesions: 3,
                noise: 1.0,
                ..Default::default()
            },
            model_seed: 42,
            train: TrainOptions::default(),
        }
    }
}

impl CorpusSpec {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("corpus spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A rendered phantom with the automatically detected guidewire and lumen.
pub struct PreparedPhantom {
    pub pullback: Pullback,
    pub truth: GroundTruth,
    pub band: Option<GuidewireBand>,
    pub borders: Vec<Option<Contour>>,
}

pub fn prepare(seed: u64, opts: &RandomPhantomOptions) -> PreparedPhantom {
    let spec = random_spec(seed, opts);
    let (pullback, truth) = generate(&spec, seed).expect("random specs are valid");
    let band = detect_guidewire(&accumulate_intensity(&pullback), &GuidewireConfig::default()).ok();
    let borders = segment_lumen_dp(&pullback, band.as_ref(), &LumenConfig::default())
        .into_iter()
        .map(Result::ok)
        .collect();
    PreparedPhantom { pullback, truth, band, borders }
}

fn circular_gap(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

/// Index of the truth strut a detection at `(aline, center)` corresponds to.
/// Greedy: nearest unclaimed truth within 2 A-lines and 4 px.
fn match_one(aline: usize, center: f64, truths: &[&StrutTruth], claimed: &mut [bool], n: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, t) in truths.iter().enumerate() {
        let da = circular_gap(aline, t.aline, n);
        let dr = (center - t.center_px).abs();
        if claimed[k] || da > 2 || dr > 4.0 {
            continue;
        }
        let cost = da as f64 + dr;
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((k, cost));
        }
    }
    if let Some((k, _)) = best {
        claimed[k] = true;
    }
    best.map(|(k, _)| k)
}

fn frame_truth(truth: &GroundTruth, f: usize) -> Vec<&StrutTruth> {
    truth.struts.iter().filter(|s| s.frame == f).collect()
}

/// Detector and coverage training sets drawn from one prepared phantom.
pub fn collect(p: &PreparedPhantom, cfg: &StentConfig, det: &mut TrainingSet, cov: &mut TrainingSet) {
    let n_a = p.pullback.n_alines();
    for (f, frame) in p.pullback.frames().iter().enumerate() {
        let Some(border) = &p.borders[f] else { continue };
        let excluded = p.band.as_ref().map_or_else(|| vec![false; n_a], |b| b.mask(f));
        let candidates: Vec<StrutCandidate> = detect_candidates(frame, border, &excluded, cfg);
        let truths = frame_truth(&p.truth, f);
        let mut claimed = vec![false; truths.len()];
        for c in &candidates {
            let feats = extract_features(c, frame, cfg);
            let hit = match_one(c.aline, c.center_px, &truths, &mut claimed, n_a);
            det.push(feats.detector().to_vec(), hit.is_some());
            if let Some(k) = hit {
                cov.push(feats.coverage().to_vec(), truths[k].covered);
            }
        }
    }
}

/// Render the corpus and fit both classifiers.
pub fn train_models(spec: &CorpusSpec, cfg: &StentConfig) -> Result<StentModels, StentError> {
    let mut det = TrainingSet::default();
    let mut cov = TrainingSet::default();
    for &seed in &spec.seeds {
        collect(&prepare(seed, &spec.phantom), cfg, &mut det, &mut cov);
    }
    let hash = spec.hash();
    let mut detector = train(&det, ModelKind::StrutDetector, spec.model_seed, &spec.train)?;
    detector.metadata.spec_hash = Some(hash.clone());
    let mut coverage = train(&cov, ModelKind::CoverageClassifier, spec.model_seed, &spec.train)?;
    coverage.metadata.spec_hash = Some(hash);
    StentModels::new(detector, coverage)
}

/// Models trained once per process from the default corpus.
pub fn default_models() -> &'static StentModels {
    static MODELS: OnceLock<StentModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        train_models(&CorpusSpec::default(), &StentConfig::default()).expect("default corpus trains")
    })
}

/// Counts and errors of the stent pipeline against phantom truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StentEvaluation {
    pub truth_struts: usize,
    pub detected: usize,
    pub true_positives: usize,
    pub covered_hits: usize,
    pub covered_total: usize,
    pub uncovered_hits: usize,
    pub uncovered_total: usize,
    /// Measured minus true coverage on struts both call covered, µm.
    pub coverage_errors: Vec<f64>,
    /// Measured minus true malapposition on truly malapposed struts, µm.
    pub malapposition_errors: Vec<f64>,
}

impl StentEvaluation {
    pub fn sensitivity(&self) -> f64 {
        self.true_positives as f64 / self.truth_struts.max(1) as f64
    }

    pub fn precision(&self) -> f64 {
        self.true_positives as f64 / self.detected.max(1) as f64
    }

    pub fn coverage_sensitivity(&self) -> f64 {
        self.covered_hits as f64 / self.covered_total.max(1) as f64
    }

    pub fn coverage_specificity(&self) -> f64 {
        self.uncovered_hits as f64 / self.uncovered_total.max(1) as f64
    }

    pub fn mean_coverage_error(&self) -> f64 {
        self.coverage_errors.iter().sum::<f64>() / self.coverage_errors.len().max(1) as f64
    }

    pub fn max_abs_malapposition_error(&self) -> f64 {
        self.malapposition_errors.iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

/// Score detections of one phantom against its truth. Truth struts inside the
/// detected guidewire band are not expected to be found.
pub fn evaluate(p: &PreparedPhantom, models: &StentModels, cfg: &StentConfig, acc: &mut StentEvaluation) {
    let n_a = p.pullback.n_alines();
    let cal = p.pullback.calibration;
    for (f, frame) in p.pullback.frames().iter().enumerate() {
        let excluded = p.band.as_ref().map_or_else(|| vec![false; n_a], |b| b.mask(f));
        let truths: Vec<&StrutTruth> = frame_truth(&p.truth, f)
            .into_iter()
            .filter(|t| !excluded[t.aline])
            .collect();
        acc.truth_struts += truths.len();
        let Some(border) = &p.borders[f] else { continue };
        let records: Vec<StrutRecord> =
            analyze_frame(frame, border, &excluded, models, &cal, cfg).expect("model kinds checked");
        acc.detected += records.len();
        let mut claimed = vec![false; truths.len()];
        for r in &records {
            let Some(k) = match_one(r.aline, r.center_px, &truths, &mut claimed, n_a) else {
                continue;
            };
            acc.true_positives += 1;
            let t = truths[k];
            if t.covered {
                acc.covered_total += 1;
                if r.covered() {
                    acc.covered_hits += 1;
                    acc.coverage_errors.push(r.coverage_um - t.coverage_um);
                }
            } else {
                acc.uncovered_total += 1;
                if !r.covered() {
                    acc.uncovered_hits += 1;
                }
            }
            if t.malapposition_um > 0.0 {
                acc.malapposition_errors.push(r.malapposition_um - t.malapposition_um);
            }
        }
    }
}
