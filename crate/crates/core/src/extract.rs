//! Utterance-level feature extraction over a manifest, with optional reuse of
//! cached vectors.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::cache::{CacheError, CachedKind, FeatureCache};
use crate::corpus::{self, Manifest, UtteranceRecord};
use crate::dsp::{FeatureExtractor, FeatureKind};
use crate::embeddings::{self, LayerSelector};
use crate::eval::FeatureTable;

#[derive(Debug, Clone, Default)]
pub struct ExtractionOptions {
    /// Utterances processed concurrently; never affects results.
    pub workers: usize,
    pub cache: Option<FeatureCache>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceFailure {
    pub utterance_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionOutcome {
    pub tables: BTreeMap<FeatureKind, FeatureTable>,
    /// (utterance, kind) pairs computed from audio or embeddings.
    pub computed: usize,
    /// (utterance, kind) pairs taken from an up-to-date cache.
    pub reused: usize,
    /// In manifest order.
    pub failures: Vec<UtteranceFailure>,
    /// In manifest order.
    pub warnings: Vec<String>,
}

struct UtteranceOutput {
    values: Vec<(FeatureKind, Vec<f64>, bool)>,
    warnings: Vec<String>,
}

fn source_path(utt: &UtteranceRecord, kind: FeatureKind) -> Option<&Path> {
    if kind.is_baseline() {
        Some(&utt.audio_path)
    } else {
        utt.embedding_path.as_deref()
    }
}

fn extract_one(
    utt: &UtteranceRecord,
    kinds: &[FeatureKind],
    cached: &BTreeMap<FeatureKind, CachedKind>,
    extractor: &FeatureExtractor,
) -> Result<UtteranceOutput, String> {
    let mut out = UtteranceOutput {
        values: Vec::with_capacity(kinds.len()),
        warnings: Vec::new(),
    };
    let mut missing = Vec::new();
    for &kind in kinds {
        let hit = source_path(utt, kind).and_then(|src| {
            cached
                .get(&kind)
                .and_then(|c| c.fresh_entry(&utt.utterance_id, &[src]))
        });
        match hit {
            Some(v) => out.values.push((kind, v.clone(), false)),
            None => missing.push(kind),
        }
    }

    if missing.iter().any(|k| k.is_baseline()) {
        let audio = corpus::read_audio(&utt.audio_path).map_err(|e| e.to_string())?;
        let vectors = extractor
            .baseline_vectors(&audio)
            .map_err(|e| e.to_string())?;
        for v in vectors {
            if missing.contains(&v.kind) {
                out.values.push((v.kind, v.values, true));
            }
        }
    }

    let layers: Vec<u8> = missing.iter().filter_map(|k| k.layer()).collect();
    if !layers.is_empty() {
        let path = utt
            .embedding_path
            .as_ref()
            .ok_or_else(|| "manifest row has no embedding_path".to_string())?;
        let set = embeddings::read_embedding_file(path).map_err(|e| e.to_string())?;
        if let Ok(n_samples) = corpus::audio_sample_count(&utt.audio_path) {
            if let Some(w) = embeddings::frame_count_warning(set.n_frames(), n_samples) {
                out.warnings.push(format!("{}: {w}", utt.utterance_id));
            }
        }
        for layer in layers {
            let sel = LayerSelector::new(layer).map_err(|e| e.to_string())?;
            let v = embeddings::pool_layer(&set, sel);
            out.values.push((v.kind, v.values, true));
        }
    }
    Ok(out)
}

/// Extracts every requested kind for every manifest utterance.
///
/// Per-utterance failures are collected rather than aborting; cache files are
/// rewritten only for kinds with newly computed entries.
pub fn extract_features(
    manifest: &Manifest,
    kinds: &[FeatureKind],
    opts: &ExtractionOptions,
) -> Result<ExtractionOutcome, CacheError> {
    let mut cached = BTreeMap::new();
    if let Some(cache) = &opts.cache {
        for &kind in kinds {
            if let Some(c) = cache.load(kind)? {
                cached.insert(kind, c);
            }
        }
    }
    let extractor = FeatureExtractor::new();
    let run = |utt: &UtteranceRecord| extract_one(utt, kinds, &cached, &extractor);
    let results: Vec<Result<UtteranceOutput, String>> = if opts.workers <= 1 {
        manifest.utterances.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
        {
            Ok(pool) => pool.install(|| manifest.utterances.par_iter().map(run).collect()),
            Err(_) => manifest.utterances.iter().map(run).collect(),
        }
    };

    let mut outcome = ExtractionOutcome::default();
    for &kind in kinds {
        outcome.tables.insert(kind, FeatureTable::new(kind));
    }
    let mut fresh: BTreeMap<FeatureKind, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (utt, result) in manifest.utterances.iter().zip(results) {
        match result {
            Ok(out) => {
                outcome.warnings.extend(out.warnings);
                for (kind, values, computed) in out.values {
                    if computed {
                        outcome.computed += 1;
                        fresh
                            .entry(kind)
                            .or_default()
                            .insert(utt.utterance_id.clone(), values.clone());
                    } else {
                        outcome.reused += 1;
                    }
                    outcome
                        .tables
                        .get_mut(&kind)
                        .expect("table per kind")
                        .insert(utt.utterance_id.clone(), values);
                }
            }
            Err(message) => outcome.failures.push(UtteranceFailure {
                utterance_id: utt.utterance_id.clone(),
                message,
            }),
        }
    }

    if let Some(cache) = &opts.cache {
        for (kind, new_entries) in fresh {
            let mut merged = cached.remove(&kind).map(|c| c.entries).unwrap_or_default();
            merged.extend(new_entries);
            cache.store(kind, &merged)?;
        }
    }
    Ok(outcome)
}
