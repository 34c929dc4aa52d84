use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dysbench_core::cache::FeatureCache;
use dysbench_core::corpus::{self, Manifest};
use dysbench_core::dsp::FeatureKind;
use dysbench_core::embeddings;
use dysbench_core::eval::{self, EvalParams, Protocol};
use dysbench_core::extract::{self, ExtractionOptions, ExtractionOutcome};

use crate::config::{ConfigEcho, RunConfig};
use crate::report::{self, ReportFile};

/// Embedding layers extracted together; bounds memory on large corpora.
const LAYERS_PER_GROUP: usize = 4;

/// Baselines share one STFT pass; embedding layers share one file read.
pub fn kind_groups(kinds: &[FeatureKind]) -> Vec<Vec<FeatureKind>> {
    let baselines: Vec<FeatureKind> = kinds.iter().copied().filter(|k| k.is_baseline()).collect();
    let layers: Vec<FeatureKind> = kinds.iter().copied().filter(|k| !k.is_baseline()).collect();
    let mut groups = Vec::new();
    if !baselines.is_empty() {
        groups.push(baselines);
    }
    groups.extend(layers.chunks(LAYERS_PER_GROUP).map(<[FeatureKind]>::to_vec));
    groups
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.manifest()?;
    corpus::load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn extraction_options(cfg: &RunConfig) -> ExtractionOptions {
    ExtractionOptions {
        workers: cfg.workers,
        cache: cfg.cache.then(|| FeatureCache::new(&cfg.cache_dir)),
    }
}

fn extract_group(
    manifest: &Manifest,
    group: &[FeatureKind],
    cfg: &RunConfig,
) -> Result<ExtractionOutcome> {
    let outcome = extract::extract_features(manifest, group, &extraction_options(cfg))?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    Ok(outcome)
}

/// Returns `Ok(true)` when every utterance was processed.
pub fn cmd_features(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    if !cfg.cache {
        bail!("`features` fills the feature cache; it cannot run with caching disabled");
    }
    let manifest = load_manifest(cfg)?;
    let (mut computed, mut reused) = (0, 0);
    let mut failures = Vec::new();
    for group in kind_groups(&cfg.feature_kinds) {
        let outcome = extract_group(&manifest, &group, cfg)?;
        computed += outcome.computed;
        reused += outcome.reused;
        let tags: Vec<String> = group.iter().map(|k| k.tag()).collect();
        for f in outcome.failures {
            failures.push(format!(
                "{} [{}]: {}",
                f.utterance_id,
                tags.join(","),
                f.message
            ));
        }
    }
    writeln!(
        out,
        "features: {} utterances x {} kinds -> computed {computed}, reused {reused}, failed {}",
        manifest.utterances.len(),
        cfg.feature_kinds.len(),
        failures.len()
    )?;
    writeln!(out, "cache: {}", cfg.cache_dir.display())?;
    if !failures.is_empty() {
        writeln!(out, "errors:")?;
        for f in &failures {
            writeln!(out, "  {f}")?;
        }
    }
    Ok(failures.is_empty())
}

/// Returns `Ok(true)` when no embedding file is invalid; frame-count mismatches only warn.
pub fn cmd_validate_embeddings(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let manifest = load_manifest(cfg)?;
    let mut invalid = Vec::new();
    let mut warnings = Vec::new();
    for utt in &manifest.utterances {
        let Some(path) = &utt.embedding_path else {
            invalid.push(format!("{}: no embedding_path", utt.utterance_id));
            continue;
        };
        match embeddings::read_embedding_file(path) {
            Err(e) => invalid.push(format!("{}: {e}", utt.utterance_id)),
            Ok(set) => match corpus::audio_sample_count(&utt.audio_path) {
                Ok(n) => {
                    if let Some(w) = embeddings::frame_count_warning(set.n_frames(), n) {
                        warnings.push(format!("{}: {w}", utt.utterance_id));
                    }
                }
                Err(e) => warnings.push(format!("{}: duration unavailable: {e}", utt.utterance_id)),
            },
        }
    }
    for line in &invalid {
        writeln!(out, "INVALID  {line}")?;
    }
    for line in &warnings {
        writeln!(out, "WARNING  {line}")?;
    }
    writeln!(
        out,
        "{} files, {} invalid, {} warnings",
        manifest.utterances.len(),
        invalid.len(),
        warnings.len()
    )?;
    Ok(invalid.is_empty())
}

fn config_echo(cfg: &RunConfig, params: &EvalParams) -> ConfigEcho {
    ConfigEcho {
        manifest_path: cfg
            .manifest_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        protocol: cfg.protocol,
        feature_kinds: cfg.feature_kinds.clone(),
        exclusions: cfg.exclusions.clone(),
        svm_c: params.c,
        smo_tolerance: params.solver.tol,
    }
}

fn evaluate_all(cfg: &RunConfig, manifest: &Manifest) -> Result<Vec<ReportFile>> {
    let params = EvalParams {
        workers: cfg.workers,
        ..EvalParams::default()
    };
    // fail on protocol preconditions before any extraction work
    match cfg.protocol {
        Protocol::Detect => {
            eval::loso_splits(&manifest.speakers)?;
        }
        Protocol::Severity => {
            eval::severity_splits(&manifest.speakers, &cfg.exclusions)?;
        }
    }
    let echo = config_echo(cfg, &params);
    let mut reports = Vec::new();
    for group in kind_groups(&cfg.feature_kinds) {
        let mut outcome = extract_group(manifest, &group, cfg)?;
        if !outcome.failures.is_empty() {
            let listed: Vec<String> = outcome
                .failures
                .iter()
                .take(10)
                .map(|f| format!("  {}: {}", f.utterance_id, f.message))
                .collect();
            bail!(
                "feature extraction failed for {} utterances:\n{}",
                outcome.failures.len(),
                listed.join("\n")
            );
        }
        for kind in group {
            let table = outcome
                .tables
                .remove(&kind)
                .expect("table per requested kind");
            log::info!("evaluating {kind} ({})", cfg.protocol);
            let report = eval::run_eval(cfg.protocol, manifest, &table, &params, &cfg.exclusions)
                .with_context(|| format!("evaluating {kind}"))?;
            reports.push(ReportFile {
                config: echo.clone(),
                report,
            });
        }
    }
    Ok(reports)
}

fn replace_dir(from: &Path, to: &Path) -> Result<()> {
    if to.exists() {
        fs::remove_dir_all(to).with_context(|| format!("removing {}", to.display()))?;
    }
    fs::rename(from, to).with_context(|| format!("moving reports into {}", to.display()))
}

/// Writes `<out>/<protocol>/` atomically; nothing is left behind on failure.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let manifest = load_manifest(cfg)?;
    let final_dir = cfg.protocol_dir();
    let partial = cfg.output_dir.join(format!(".{}.partial", cfg.protocol));
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }
    let result = evaluate_all(cfg, &manifest).and_then(|reports| {
        report::write_all(&partial, cfg.protocol, &reports)?;
        replace_dir(&partial, &final_dir)?;
        Ok(reports)
    });
    let reports = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            return Err(e);
        }
    };
    out.write_all(report::summary_table(cfg.protocol, &reports).as_bytes())?;
    writeln!(out, "reports: {}", final_dir.display())?;
    Ok(true)
}

/// Regenerates the summary CSVs and table from existing report JSON files.
pub fn cmd_report(cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let dir = cfg.protocol_dir();
    let reports = report::load_all(&dir)?;
    if reports.is_empty() {
        bail!("no reports in {}", dir.display());
    }
    if let Some(r) = reports.iter().find(|r| r.report.protocol != cfg.protocol) {
        bail!(
            "{} holds a `{}` report, expected `{}`",
            dir.display(),
            r.report.protocol,
            cfg.protocol
        );
    }
    report::write_summaries(&dir, cfg.protocol, &reports)?;
    out.write_all(report::summary_table(cfg.protocol, &reports).as_bytes())?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_split_baselines_and_layers() {
        let groups = kind_groups(&FeatureKind::all());
        assert_eq!(groups.len(), 5);
        assert_eq!(groups[0], FeatureKind::BASELINES.to_vec());
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), 16);
        assert_eq!(kind_groups(&[FeatureKind::Wav2VecLayer(3)]).len(), 1);
    }
}
