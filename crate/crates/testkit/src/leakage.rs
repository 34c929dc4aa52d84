//! Sentinel check: test-speaker vectors are set to a huge constant, so any use
//! of them in normalization statistics or training data is visible.

use std::collections::HashSet;

use dysbench_core::corpus::Manifest;
use dysbench_core::dsp::FeatureKind;
use dysbench_core::eval::{self, EvalError, FeatureTable, FoldPlan, Protocol, ZScaler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SENTINEL: f64 = 1e12;

fn sentinel_table(manifest: &Manifest, plan: &FoldPlan, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test: HashSet<&str> = plan.test_speaker_ids.iter().map(String::as_str).collect();
    let mut table = FeatureTable::new(FeatureKind::Mfcc);
    for u in &manifest.utterances {
        let v = if test.contains(u.speaker_id.as_str()) {
            vec![SENTINEL; 39]
        } else {
            (0..39).map(|_| rng.random_range(-5.0..5.0)).collect()
        };
        table.insert(u.utterance_id.clone(), v);
    }
    table
}

/// Checks every fold of the protocol; returns the number of folds inspected.
pub fn check(
    manifest: &Manifest,
    protocol: Protocol,
    exclusions: &[String],
    seed: u64,
) -> Result<usize, String> {
    let plans = match protocol {
        Protocol::Detect => eval::loso_splits(&manifest.speakers),
        Protocol::Severity => eval::severity_splits(&manifest.speakers, exclusions),
    }
    .map_err(|e| e.to_string())?;
    let speaker_of = |utt: &str| {
        manifest
            .utterances
            .iter()
            .find(|u| u.utterance_id == utt)
            .map(|u| u.speaker_id.clone())
            .expect("utterance in manifest")
    };
    let mut inspected = 0;
    for plan in &plans {
        let fail = |msg: String| Err(format!("fold {}: {msg}", plan.fold_id));
        let train: HashSet<&str> = plan.train_speaker_ids.iter().map(String::as_str).collect();
        let test: HashSet<&str> = plan.test_speaker_ids.iter().map(String::as_str).collect();
        if train.intersection(&test).next().is_some() {
            return fail("train and test speaker sets overlap".into());
        }
        let table = sentinel_table(manifest, plan, seed ^ plan.fold_id as u64);
        let data = match eval::prepare_fold(manifest, &table, plan, protocol) {
            Ok(d) => d,
            Err(EvalError::TooFewSamples { .. } | EvalError::EmptyTrainingSet { .. }) => continue,
            Err(e) => return fail(e.to_string()),
        };
        inspected += 1;
        if data
            .train_utterances
            .iter()
            .any(|u| !train.contains(speaker_of(u).as_str()))
        {
            return fail("training set holds a non-training speaker".into());
        }
        if data
            .test_utterances
            .iter()
            .any(|u| !test.contains(speaker_of(u).as_str()))
        {
            return fail("test set holds a non-test speaker".into());
        }
        // reference statistics from training vectors gathered independently
        let reference: Vec<&Vec<f64>> = manifest
            .utterances
            .iter()
            .filter(|u| train.contains(u.speaker_id.as_str()))
            .filter(|u| {
                let s = manifest.speaker(&u.speaker_id).expect("declared speaker");
                eval::class_of(protocol, s).is_some()
            })
            .map(|u| &table.vectors[&u.utterance_id])
            .collect();
        let expected = ZScaler::fit(&reference).map_err(|e| e.to_string())?;
        if expected != data.scaler {
            return fail("normalization statistics differ from training-only statistics".into());
        }
        if data
            .scaler
            .mean
            .iter()
            .chain(&data.scaler.std)
            .any(|v| v.abs() > 1e3)
        {
            return fail("sentinel reached normalization statistics".into());
        }
        if data.train_x.iter().flatten().any(|v| v.abs() > 1e3) {
            return fail("sentinel reached training data".into());
        }
    }
    Ok(inspected)
}
