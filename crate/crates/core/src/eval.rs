//! Speaker-independent evaluation: z-score normalization fitted on training
//! folds, leave-one-speaker-out detection, the 81-fold severity protocol,
//! and metric aggregation.
//!
//! Detection reports pooled ACC/SE/SP/F1 from the summed confusion matrix as
//! well as the mean per-fold accuracy; a single-speaker test fold only holds
//! one class, so SE and SP are not defined per fold.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Health, Manifest, Severity, SpeakerRecord};
use crate::dsp::{FeatureKind, FeatureVector};
use crate::svm::{self, KernelParams, SolverOptions, SvmError};

/// Lower bound on per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} samples to fit normalization, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("need at least 2 speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("severity classes must hold exactly 3 speakers each after exclusions, found {0}")]
    UnbalancedClasses(String),
    #[error("excluded speaker `{0}` is not a dysarthric speaker in the manifest")]
    UnknownExclusion(String),
    #[error("no `{kind}` features for utterance `{utterance_id}`")]
    MissingFeatures {
        utterance_id: String,
        kind: FeatureKind,
    },
    #[error("feature dimension {found} for utterance `{utterance_id}`, expected {expected}")]
    DimensionMismatch {
        utterance_id: String,
        expected: usize,
        found: usize,
    },
    #[error("fold {fold_id}: speaker `{speaker_id}` is in both train and test sets")]
    Leakage { fold_id: usize, speaker_id: String },
    #[error("fold {fold_id} has no training utterances")]
    EmptyTrainingSet { fold_id: usize },
    #[error("fold {fold_id}: {cause}")]
    Svm { fold_id: usize, cause: SvmError },
    #[error("failed to build worker pool: {0}")]
    WorkerPool(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Per-dimension standardization fitted on training vectors only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScaler {
    /// Population mean and standard deviation per dimension.
    pub fn fit<V: AsRef<[f64]>>(train: &[V]) -> Result<Self> {
        if train.len() < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                found: train.len(),
            });
        }
        let d = train[0].as_ref().len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for v in train {
            for (m, x) in mean.iter_mut().zip(v.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in train {
            for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

pub fn zscore_fit(train: &[FeatureVector]) -> Result<ZScaler> {
    let rows: Vec<&[f64]> = train.iter().map(|v| v.values.as_slice()).collect();
    ZScaler::fit(&rows)
}

pub fn zscore_apply(scaler: &ZScaler, v: &FeatureVector) -> FeatureVector {
    FeatureVector {
        values: scaler.apply(&v.values),
        kind: v.kind,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_id: usize,
    pub train_speaker_ids: Vec<String>,
    pub test_speaker_ids: Vec<String>,
}

/// One fold per speaker, in manifest order.
pub fn loso_splits(speakers: &[SpeakerRecord]) -> Result<Vec<FoldPlan>> {
    if speakers.len() < 2 {
        return Err(EvalError::TooFewSpeakers(speakers.len()));
    }
    Ok(speakers
        .iter()
        .enumerate()
        .map(|(i, test)| FoldPlan {
            fold_id: i,
            train_speaker_ids: speakers
                .iter()
                .filter(|s| s.speaker_id != test.speaker_id)
                .map(|s| s.speaker_id.clone())
                .collect(),
            test_speaker_ids: vec![test.speaker_id.clone()],
        })
        .collect())
}

/// Dysarthric speakers remaining per severity class after exclusions, in manifest order.
pub fn severity_groups(
    speakers: &[SpeakerRecord],
    exclusions: &[String],
) -> Result<[Vec<String>; 4]> {
    for ex in exclusions {
        let known = speakers
            .iter()
            .any(|s| &s.speaker_id == ex && s.health == Health::Dysarthric);
        if !known {
            return Err(EvalError::UnknownExclusion(ex.clone()));
        }
    }
    let excluded: HashSet<&str> = exclusions.iter().map(String::as_str).collect();
    let mut groups: [Vec<String>; 4] = Default::default();
    for s in speakers {
        if let Some(sev) = s.severity {
            if !excluded.contains(s.speaker_id.as_str()) {
                groups[sev.index()].push(s.speaker_id.clone());
            }
        }
    }
    Ok(groups)
}

/// Cartesian product of one test speaker per severity class: 3^4 = 81 folds.
pub fn severity_splits(speakers: &[SpeakerRecord], exclusions: &[String]) -> Result<Vec<FoldPlan>> {
    let groups = severity_groups(speakers, exclusions)?;
    if groups.iter().any(|g| g.len() != 3) {
        let counts = Severity::ALL
            .iter()
            .zip(&groups)
            .map(|(sev, g)| format!("{sev}={}", g.len()))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(EvalError::UnbalancedClasses(counts));
    }
    let all: Vec<&String> = groups.iter().flatten().collect();
    let mut plans = Vec::with_capacity(81);
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let test = [&groups[0][a], &groups[1][b], &groups[2][c], &groups[3][d]];
                    plans.push(FoldPlan {
                        fold_id: plans.len(),
                        train_speaker_ids: all
                            .iter()
                            .filter(|s| !test.contains(s))
                            .map(|s| (*s).clone())
                            .collect(),
                        test_speaker_ids: test.iter().map(|s| (*s).clone()).collect(),
                    });
                }
            }
        }
    }
    Ok(plans)
}

/// k x k counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Self {
        Self { counts }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct(), self.total())
    }

    /// Each row scaled to percentages of its total (undefined rows stay `None`).
    pub fn row_percentages(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| {
                    row.iter()
                        .map(|&c| 100.0 * c as f64 / total as f64)
                        .collect()
                })
            })
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Detection metrics; `None` marks a 0/0 quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub acc: Option<f64>,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// Metrics of a 2 x 2 matrix whose class 1 (dysarthric) is positive.
pub fn binary_metrics(cm: &ConfusionMatrix) -> BinaryMetrics {
    assert_eq!(cm.k(), 2, "binary metrics need a 2 x 2 matrix");
    let tn = cm.counts[0][0];
    let fp = cm.counts[0][1];
    let fn_ = cm.counts[1][0];
    let tp = cm.counts[1][1];
    let se = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, se) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    BinaryMetrics {
        acc: ratio(tp + tn, cm.total()),
        se,
        sp: ratio(tn, tn + fp),
        precision,
        f1,
    }
}

/// Per-class recall in percent; empty rows are `None`.
pub fn classwise_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.counts
        .iter()
        .enumerate()
        .map(|(i, row)| ratio(row[i], row.iter().sum()).map(|r| 100.0 * r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Detect,
    Severity,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Detect => "detect",
            Protocol::Severity => "severity",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Protocol::Detect => vec!["healthy".into(), "dysarthric".into()],
            Protocol::Severity => Severity::ALL.iter().map(|s| s.as_str().into()).collect(),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "detect" => Ok(Protocol::Detect),
            "severity" => Ok(Protocol::Severity),
            other => Err(format!(
                "unknown protocol `{other}` (expected detect or severity)"
            )),
        }
    }
}

/// Utterance-level vectors of one feature kind, keyed by utterance id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub kind: Option<FeatureKind>,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(kind: FeatureKind) -> Self {
        Self {
            kind: Some(kind),
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, utterance_id: impl Into<String>, values: Vec<f64>) {
        self.vectors.insert(utterance_id.into(), values);
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind.expect("feature table has a kind")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// SVM regularization.
    pub c: f64,
    pub solver: SolverOptions,
    /// Folds evaluated concurrently; never affects results.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            solver: SolverOptions::default(),
            workers: 1,
        }
    }
}

/// Normalized training and test data of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub plan: FoldPlan,
    pub scaler: ZScaler,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub train_utterances: Vec<String>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub test_utterances: Vec<String>,
}

/// Class index of a speaker under a protocol, or `None` if the speaker does not take part.
pub fn class_of(protocol: Protocol, speaker: &SpeakerRecord) -> Option<usize> {
    match protocol {
        Protocol::Detect => Some(match speaker.health {
            Health::Healthy => 0,
            Health::Dysarthric => 1,
        }),
        Protocol::Severity => speaker.severity.map(Severity::index),
    }
}

/// Gathers a fold's utterances, fits the scaler on the training side only and
/// normalizes both sides.
pub fn prepare_fold(
    manifest: &Manifest,
    features: &FeatureTable,
    plan: &FoldPlan,
    protocol: Protocol,
) -> Result<FoldData> {
    let train_ids: HashSet<&str> = plan.train_speaker_ids.iter().map(String::as_str).collect();
    let test_ids: HashSet<&str> = plan.test_speaker_ids.iter().map(String::as_str).collect();
    if let Some(shared) = plan
        .test_speaker_ids
        .iter()
        .find(|s| train_ids.contains(s.as_str()))
    {
        return Err(EvalError::Leakage {
            fold_id: plan.fold_id,
            speaker_id: shared.clone(),
        });
    }
    let speakers = manifest.speaker_index();
    let kind = features.kind();

    let mut raw_train: Vec<&[f64]> = Vec::new();
    let mut data = FoldData {
        plan: plan.clone(),
        scaler: ZScaler {
            mean: Vec::new(),
            std: Vec::new(),
        },
        train_x: Vec::new(),
        train_y: Vec::new(),
        train_utterances: Vec::new(),
        test_x: Vec::new(),
        test_y: Vec::new(),
        test_utterances: Vec::new(),
    };
    let mut raw_test: Vec<&[f64]> = Vec::new();
    for utt in &manifest.utterances {
        let sid = utt.speaker_id.as_str();
        let (in_train, in_test) = (train_ids.contains(sid), test_ids.contains(sid));
        if !in_train && !in_test {
            continue;
        }
        let Some(class) = speakers.get(sid).and_then(|s| class_of(protocol, s)) else {
            continue;
        };
        let v =
            features
                .vectors
                .get(&utt.utterance_id)
                .ok_or_else(|| EvalError::MissingFeatures {
                    utterance_id: utt.utterance_id.clone(),
                    kind,
                })?;
        if v.len() != kind.dim() {
            return Err(EvalError::DimensionMismatch {
                utterance_id: utt.utterance_id.clone(),
                expected: kind.dim(),
                found: v.len(),
            });
        }
        if in_train {
            raw_train.push(v);
            data.train_y.push(class);
            data.train_utterances.push(utt.utterance_id.clone());
        } else {
            raw_test.push(v);
            data.test_y.push(class);
            data.test_utterances.push(utt.utterance_id.clone());
        }
    }
    if raw_train.is_empty() {
        return Err(EvalError::EmptyTrainingSet {
            fold_id: plan.fold_id,
        });
    }
    data.scaler = ZScaler::fit(&raw_train)?;
    data.train_x = raw_train.iter().map(|v| data.scaler.apply(v)).collect();
    data.test_x = raw_test.iter().map(|v| data.scaler.apply(v)).collect();
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub train_speaker_ids: Vec<String>,
    pub test_speaker_ids: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub gamma: f64,
    pub n_support_vectors: usize,
    pub converged: bool,
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    /// Predicted class index for each test utterance, in manifest order.
    pub predictions: Vec<usize>,
}

/// Fold-level outcome of the trained classifier on one fold's data.
pub fn run_fold(data: &FoldData, protocol: Protocol, params: &EvalParams) -> Result<FoldResult> {
    let fold_id = data.plan.fold_id;
    let svm_err = |cause| EvalError::Svm { fold_id, cause };
    let kernel = KernelParams::scaled(params.c, &data.train_x).map_err(svm_err)?;
    let k = protocol.class_names().len();
    let mut confusion = ConfusionMatrix::new(k);
    let mut predictions = Vec::with_capacity(data.test_x.len());
    let (n_support_vectors, converged) = match protocol {
        Protocol::Detect => {
            let y: Vec<i32> = data
                .train_y
                .iter()
                .map(|&c| if c == 1 { 1 } else { -1 })
                .collect();
            let model =
                svm::train_binary(&data.train_x, &y, kernel, &params.solver).map_err(svm_err)?;
            for x in &data.test_x {
                let label = model.predict_label(x).map_err(svm_err)?;
                predictions.push(usize::from(label == 1));
            }
            (model.support_vectors.len(), model.converged)
        }
        Protocol::Severity => {
            let model = svm::train_ovo(&data.train_x, &data.train_y, kernel, &params.solver)
                .map_err(svm_err)?;
            for x in &data.test_x {
                predictions.push(*model.predict(x).map_err(svm_err)?);
            }
            (
                model
                    .pairwise_models
                    .iter()
                    .map(|m| m.support_vectors.len())
                    .sum(),
                model.pairwise_models.iter().all(|m| m.converged),
            )
        }
    };
    for (&truth, &pred) in data.test_y.iter().zip(&predictions) {
        confusion.record(truth, pred);
    }
    Ok(FoldResult {
        fold_id,
        train_speaker_ids: data.plan.train_speaker_ids.clone(),
        test_speaker_ids: data.plan.test_speaker_ids.clone(),
        n_train: data.train_x.len(),
        n_test: data.test_x.len(),
        gamma: kernel.gamma,
        n_support_vectors,
        converged,
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub feature_kind: FeatureKind,
    pub class_names: Vec<String>,
    pub per_fold: Vec<FoldResult>,
    /// Element-wise sum of the per-fold matrices.
    pub pooled: ConfusionMatrix,
    /// Pooled matrix as row percentages.
    pub pooled_row_percent: Vec<Option<Vec<f64>>>,
    pub pooled_accuracy: Option<f64>,
    /// Mean over folds with at least one test utterance.
    pub mean_fold_accuracy: Option<f64>,
    /// Detection only: metrics of the pooled matrix.
    pub binary: Option<BinaryMetrics>,
    /// Severity only: class-wise accuracy (%) averaged over folds.
    pub classwise_mean: Option<Vec<Option<f64>>>,
    /// Class-wise accuracy (%) of the pooled matrix.
    pub classwise_pooled: Vec<Option<f64>>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn run_plans(
    manifest: &Manifest,
    features: &FeatureTable,
    plans: &[FoldPlan],
    protocol: Protocol,
    params: &EvalParams,
) -> Result<EvalReport> {
    let run_one = |plan: &FoldPlan| -> Result<FoldResult> {
        let data = prepare_fold(manifest, features, plan, protocol)?;
        run_fold(&data, protocol, params)
    };
    let outcomes: Vec<Result<FoldResult>> = if params.workers <= 1 {
        plans.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(params.workers)
            .build()
            .map_err(|e| EvalError::WorkerPool(e.to_string()))?;
        pool.install(|| plans.par_iter().map(run_one).collect())
    };
    // first failure in fold order, independent of scheduling
    let per_fold = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let k = protocol.class_names().len();
    let mut pooled = ConfusionMatrix::new(k);
    for f in &per_fold {
        pooled += &f.confusion;
    }
    let mean_fold_accuracy = mean_of(per_fold.iter().map(|f| f.accuracy));
    let classwise_mean = (protocol == Protocol::Severity).then(|| {
        let per_fold_cw: Vec<Vec<Option<f64>>> = per_fold
            .iter()
            .map(|f| classwise_accuracy(&f.confusion))
            .collect();
        (0..k)
            .map(|c| mean_of(per_fold_cw.iter().map(|cw| cw[c])))
            .collect()
    });
    Ok(EvalReport {
        protocol,
        feature_kind: features.kind(),
        class_names: protocol.class_names(),
        binary: (protocol == Protocol::Detect).then(|| binary_metrics(&pooled)),
        pooled_row_percent: pooled.row_percentages(),
        pooled_accuracy: pooled.accuracy(),
        classwise_pooled: classwise_accuracy(&pooled),
        classwise_mean,
        mean_fold_accuracy,
        pooled,
        per_fold,
    })
}

/// Leave-one-speaker-out healthy vs. dysarthric evaluation over all manifest speakers.
pub fn run_detection_eval(
    manifest: &Manifest,
    features: &FeatureTable,
    params: &EvalParams,
) -> Result<EvalReport> {
    let plans = loso_splits(&manifest.speakers)?;
    run_plans(manifest, features, &plans, Protocol::Detect, params)
}

/// 81-fold four-class severity evaluation over the balanced dysarthric speakers.
pub fn run_severity_eval(
    manifest: &Manifest,
    features: &FeatureTable,
    params: &EvalParams,
    exclusions: &[String],
) -> Result<EvalReport> {
    let plans = severity_splits(&manifest.speakers, exclusions)?;
    run_plans(manifest, features, &plans, Protocol::Severity, params)
}

pub fn run_eval(
    protocol: Protocol,
    manifest: &Manifest,
    features: &FeatureTable,
    params: &EvalParams,
    exclusions: &[String],
) -> Result<EvalReport> {
    match protocol {
        Protocol::Detect => run_detection_eval(manifest, features, params),
        Protocol::Severity => run_severity_eval(manifest, features, params, exclusions),
    }
}

/// Counts how many fold test sets each speaker appears in.
pub fn test_appearances(plans: &[FoldPlan]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for p in plans {
        for s in &p.test_speaker_ids {
            *counts.entry(s.clone()).or_insert(0) += 1;
        }
    }
    counts
}
