//! Trained strut classifiers and the `OCTM` model file format.
//!
//! Layout: `"OCTM"`, kind byte, blob length (u64 LE), parameter blob, metadata
//! length (u32 LE), metadata JSON.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::svm::{LinearSvm, SvmParams};
use super::tree::{BaggedTrees, TreeParams};
use super::{StentError, FEATURE_VERSION};

pub const MAGIC: &[u8; 4] = b"OCTM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    StrutDetector,
    CoverageClassifier,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::StrutDetector => 1,
            ModelKind::CoverageClassifier => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ModelKind::StrutDetector),
            2 => Some(ModelKind::CoverageClassifier),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Trees(BaggedTrees),
    Svm(LinearSvm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub feature_version: u32,
    pub n_features: usize,
    pub seed: u64,
    /// SHA-256 of the training corpus description, when trained from phantoms.
    pub spec_hash: Option<String>,
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    pub metadata: ModelMetadata,
}

/// Labelled feature vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl TrainingSet {
    pub fn push(&mut self, x: Vec<f64>, y: bool) {
        self.features.push(x);
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    /// Fraction of samples held out for the reported accuracy.
    pub holdout_fraction: f64,
    pub trees: TreeParams,
    pub svm: SvmParams,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            trees: TreeParams::default(),
            svm: SvmParams::default(),
        }
    }
}

fn accuracy(model: &TrainedModel, set: &TrainingSet) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    let hits = set
        .features
        .iter()
        .zip(&set.labels)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    Some(hits as f64 / set.len() as f64)
}

/// Fit a model of `kind`. A seeded shuffle holds out `holdout_fraction` of the
/// samples; the model is fit on the rest and its accuracy on the held-out part
/// is recorded in the metadata.
pub fn train(set: &TrainingSet, kind: ModelKind, seed: u64, opts: &TrainOptions) -> Result<TrainedModel, StentError> {
    let classes = |s: &TrainingSet| (s.labels.iter().any(|&y| y), s.labels.iter().any(|&y| !y));
    if classes(set) != (true, true) {
        return Err(StentError::DegenerateTraining("both classes must be present".into()));
    }
    let n_features = set.features[0].len();
    if set.features.iter().any(|x| x.len() != n_features || x.iter().any(|v| !v.is_finite())) {
        return Err(StentError::DegenerateTraining("ragged or non-finite feature vectors".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_holdout = ((set.len() as f64) * opts.holdout_fraction.clamp(0.0, 0.9)).floor() as usize;
    let (held, fit) = order.split_at(n_holdout);
    let mut fit = fit.to_vec();
    fit.sort_unstable();
    let fit_set = set.subset(&fit);
    if classes(&fit_set) != (true, true) {
        return Err(StentError::DegenerateTraining("training split lost a class".into()));
    }
    let params = match kind {
        ModelKind::StrutDetector => ModelParams::Trees(BaggedTrees::fit(
            &fit_set.features,
            &fit_set.labels,
            &opts.trees,
            seed,
        )),
        ModelKind::CoverageClassifier => {
            ModelParams::Svm(LinearSvm::fit(&fit_set.features, &fit_set.labels, &opts.svm, seed))
        }
    };
    let mut model = TrainedModel {
        kind,
        params,
        metadata: ModelMetadata {
            format_version: FORMAT_VERSION,
            feature_version: FEATURE_VERSION,
            n_features,
            seed,
            spec_hash: None,
            n_train: fit_set.len(),
            n_holdout,
            train_accuracy: 0.0,
            holdout_accuracy: None,
        },
    };
    model.metadata.train_accuracy = accuracy(&model, &fit_set).unwrap_or(0.0);
    model.metadata.holdout_accuracy = accuracy(&model, &set.subset(held));
    Ok(model)
}

impl TrainedModel {
    /// Detector: mean tree vote in [0, 1]. Coverage: signed margin.
    pub fn score(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Trees(t) => t.predict(x),
            ModelParams::Svm(s) => s.decision(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        match &self.params {
            ModelParams::Trees(_) => self.score(x) >= 0.5,
            ModelParams::Svm(_) => self.score(x) > 0.0,
        }
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), StentError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(StentError::ModelKindMismatch { expected: kind, found: self.kind })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Writer::default();
        match &self.params {
            ModelParams::Trees(t) => t.encode(&mut blob),
            ModelParams::Svm(s) => s.encode(&mut blob),
        }
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(self.kind.code());
        w.u64(blob.buf.len() as u64);
        w.bytes(&blob.buf);
        w.u32(meta.len() as u32);
        w.bytes(&meta);
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, StentError> {
        let mut r = Reader::new(data);
        if r.take(4)? != MAGIC {
            return Err(StentError::ModelFormat("bad magic bytes".into()));
        }
        let code = r.u8()?;
        let kind = ModelKind::from_code(code)
            .ok_or_else(|| StentError::ModelFormat(format!("unknown model kind {code}")))?;
        let blob_len = r.u64()?;
        let blob_len = usize::try_from(blob_len)
            .ok()
            .filter(|&n| n <= r.remaining())
            .ok_or_else(|| StentError::ModelFormat(format!("blob length {blob_len} exceeds file")))?;
        let blob = r.take(blob_len)?;
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        if r.remaining() != 0 {
            return Err(StentError::ModelFormat(format!("trailing bytes at {}", r.position())));
        }
        let metadata: ModelMetadata =
            serde_json::from_slice(meta).map_err(|e| StentError::ModelFormat(format!("metadata: {e}")))?;
        if metadata.format_version != FORMAT_VERSION {
            return Err(StentError::ModelFormat(format!(
                "format version {} not supported",
                metadata.format_version
            )));
        }
        let mut br = Reader::new(blob);
        let params = match kind {
            ModelKind::StrutDetector => ModelParams::Trees(BaggedTrees::decode(&mut br)?),
            ModelKind::CoverageClassifier => ModelParams::Svm(LinearSvm::decode(&mut br)?),
        };
        if br.remaining() != 0 {
            return Err(StentError::ModelFormat("parameter blob has trailing bytes".into()));
        }
        Ok(Self { kind, params, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), StentError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| StentError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StentError> {
        let data = std::fs::read(path).map_err(|e| StentError::Io(e.to_string()))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = TrainingSet::default();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            s.push(vec![a, b, rng.random()], a + b > 0.0);
        }
        s
    }

    #[test]
    fn separable_set_reaches_full_training_accuracy() {
        let s = toy(300, 1);
        for kind in [ModelKind::StrutDetector, ModelKind::CoverageClassifier] {
            let opts = TrainOptions {
                svm: SvmParams { c: 100.0, ..Default::default() },
                ..Default::default()
            };
            let m = train(&s, kind, 7, &opts).unwrap();
            assert_eq!(m.metadata.train_accuracy, 1.0, "{kind:?}");
            assert!(m.metadata.holdout_accuracy.unwrap() > 0.9);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let mut s = TrainingSet::default();
        s.push(vec![1.0], true);
        s.push(vec![2.0], true);
        assert!(matches!(
            train(&s, ModelKind::StrutDetector, 0, &TrainOptions::default()),
            Err(StentError::DegenerateTraining(_))
        ));
    }

    #[test]
    fn permuted_labels_hold_out_near_chance() {
        let mut s = toy(1000, 2);
        let mut labels = s.labels.clone();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        s.labels = labels;
        for kind in [ModelKind::StrutDetector, ModelKind::CoverageClassifier] {
            let m = train(&s, kind, 5, &TrainOptions::default()).unwrap();
            let acc = m.metadata.holdout_accuracy.unwrap();
            assert!((acc - 0.5).abs() <= 0.1, "{kind:?} held-out {acc}");
        }
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let s = toy(200, 3);
        for kind in [ModelKind::StrutDetector, ModelKind::CoverageClassifier] {
            let mut m = train(&s, kind, 11, &TrainOptions::default()).unwrap();
            m.metadata.spec_hash = Some("abc".into());
            let bytes = m.to_bytes();
            assert_eq!(&bytes[..4], b"OCTM");
            assert_eq!(bytes[4], kind.code());
            let back = TrainedModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), bytes);
            for x in &s.features {
                assert_eq!(back.score(x).to_bits(), m.score(x).to_bits());
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = train(&toy(100, 4), ModelKind::CoverageClassifier, 1, &TrainOptions::default()).unwrap();
        let bytes = m.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TrainedModel::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(TrainedModel::from_bytes(&bad).is_err());
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(TrainedModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let s = toy(300, 6);
        let a = train(&s, ModelKind::StrutDetector, 2, &TrainOptions::default()).unwrap();
        let b = train(&s, ModelKind::StrutDetector, 2, &TrainOptions::default()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
