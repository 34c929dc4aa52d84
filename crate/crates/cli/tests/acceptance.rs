//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use dysbench_core::corpus::{AudioUtterance, Manifest};
use dysbench_core::dsp::{FeatureExtractor, FeatureKind, FrameMatrix};
use dysbench_core::eval::{self, ConfusionMatrix, EvalParams, FeatureTable, Protocol};
use dysbench_core::extract::{self, ExtractionOptions};
use dysbench_core::svm::{self, KernelParams, SolverOptions};
use dysbench_testkit::{dsp_oracle, leakage, qp_oracle, svm_data, synth};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("runtime {:.1} s exceeds {limit_s} s", elapsed.as_secs_f64())
    })
}

fn max_abs_diff(a: &FrameMatrix, b: &[Vec<f64>], cols: usize) -> f64 {
    assert_eq!(a.n_frames(), b.len());
    a.values
        .outer_iter()
        .zip(b)
        .flat_map(|(row, e)| (0..cols).map(move |c| (row[c] - e[c]).abs()))
        .fold(0.0, f64::max)
}

fn dsp_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let fx = FeatureExtractor::new();
    let mut worst = 0.0f64;
    for (name, signal) in synth::oracle_signals(2024, 16_000) {
        let oracle = dsp_oracle::compute(&signal);
        let b = fx
            .baselines(&AudioUtterance::new(signal))
            .map_err(|e| e.to_string())?;
        let diffs = [
            max_abs_diff(&b.spectrogram, &oracle.log_spec, 513),
            max_abs_diff(&b.mel_spectrogram, &oracle.log_mel, 80),
            max_abs_diff(&b.mfcc, &oracle.mfcc, 13),
        ];
        let d = diffs.iter().copied().fold(0.0, f64::max);
        ensure(d <= 1e-4, || format!("{name}: max deviation {d:.3e}"))?;
        worst = worst.max(d);
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "5 signals, max deviation {worst:.2e}, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn dimensionality() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = synth::detection_spec(2, 1, 5);
    spec.embeddings = true;
    let corpus = synth::write_corpus(dir.path(), &spec);
    let kinds = FeatureKind::all();
    let opts = ExtractionOptions {
        workers: 1,
        cache: None,
    };
    let outcome =
        extract::extract_features(&corpus.manifest, &kinds, &opts).map_err(|e| e.to_string())?;
    ensure(outcome.failures.is_empty(), || {
        format!("{:?}", outcome.failures)
    })?;
    for (kind, table) in &outcome.tables {
        let expected = match kind {
            FeatureKind::Spectrogram => 513,
            FeatureKind::MelSpectrogram => 80,
            FeatureKind::Mfcc => 39,
            _ => 768,
        };
        for (id, v) in &table.vectors {
            ensure(v.len() == expected, || {
                format!("{kind} {id}: D = {}, want {expected}", v.len())
            })?;
        }
    }
    ensure(outcome.tables.len() == 16, || {
        format!("{} kinds extracted", outcome.tables.len())
    })?;
    Ok("513 / 80 / 39 / 768 over 16 kinds".into())
}

fn svm_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let grid = svm_data::grid();
    let (mut agree, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..20 {
        let d = svm_data::dataset(seed);
        let params = KernelParams::rbf(d.c, d.gamma).map_err(|e| e.to_string())?;
        let opts = SolverOptions::default();
        let dual = svm::solve_dual(&d.x, &d.y, params, &opts).map_err(|e| e.to_string())?;
        let balance: f64 = dual
            .alpha
            .iter()
            .zip(&d.y)
            .map(|(a, y)| a * f64::from(*y))
            .sum();
        ensure(balance.abs() <= 1e-6, || {
            format!("seed {seed}: |sum a y| = {:.2e}", balance.abs())
        })?;
        ensure(dual.alpha.iter().all(|&a| (0.0..=d.c).contains(&a)), || {
            format!("seed {seed}: multiplier outside [0, C]")
        })?;
        let model = svm::train_binary(&d.x, &d.y, params, &opts).map_err(|e| e.to_string())?;
        let oracle = qp_oracle::solve(&d.x, &d.y, d.c, d.gamma);
        for p in d.x.iter().chain(&grid) {
            let f = model.predict_decision(p).map_err(|e| e.to_string())?;
            worst = worst.max((f - oracle.decision(p)).abs());
        }
        for p in &grid {
            let f = model.predict_decision(p).map_err(|e| e.to_string())?;
            agree += usize::from((f > 0.0) == (oracle.decision(p) > 0.0));
            total += 1;
        }
    }
    ensure(worst <= 1e-3, || {
        format!("max decision deviation {worst:.3e}")
    })?;
    let rate = agree as f64 / total as f64;
    ensure(rate >= 0.99, || format!("grid agreement {rate:.4}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "20 datasets, max deviation {worst:.2e}, grid agreement {:.2}%, {:.1} s",
        100.0 * rate,
        start.elapsed().as_secs_f64()
    ))
}

fn gamma_rule() -> Outcome {
    let unit: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            (0..39)
                .map(|j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let g = svm::compute_gamma(&unit).map_err(|e| e.to_string())?;
    ensure(g == 1.0 / 39.0, || format!("D=39, Var=1: {g}"))?;
    let small = vec![vec![0.0, 2.0], vec![4.0, 6.0]];
    let g = svm::compute_gamma(&small).map_err(|e| e.to_string())?;
    ensure(g == 1.0 / 10.0, || format!("D=2, Var=5: {g}"))?;
    let quarter: Vec<Vec<f64>> = (0..4)
        .map(|i| vec![if i < 2 { 0.5 } else { -0.5 }; 8])
        .collect();
    let g = svm::compute_gamma(&quarter).map_err(|e| e.to_string())?;
    ensure(g == 1.0 / 2.0, || format!("D=8, Var=0.25: {g}"))?;
    Ok("1/39, 1/10, 1/2".into())
}

fn manifest_of(spec: &synth::CorpusSpec) -> Manifest {
    Manifest {
        speakers: spec.speakers.iter().map(|s| s.record.clone()).collect(),
        ..Manifest::default()
    }
}

fn cardinalities() -> Outcome {
    let detect = manifest_of(&synth::detection_spec(28, 1, 0));
    let loso = eval::loso_splits(&detect.speakers).map_err(|e| e.to_string())?;
    ensure(loso.len() == 28, || format!("{} LOSO folds", loso.len()))?;
    let severity = manifest_of(&synth::severity_spec(&[3, 3, 3, 3], 1, 0));
    let plans = eval::severity_splits(&severity.speakers, &[]).map_err(|e| e.to_string())?;
    ensure(plans.len() == 81, || {
        format!("{} severity folds", plans.len())
    })?;
    let appearances = eval::test_appearances(&plans);
    ensure(
        appearances.len() == 12 && appearances.values().all(|&n| n == 27),
        || format!("test appearances {appearances:?}"),
    )?;
    Ok("28 / 81 / 27".into())
}

fn leakage_property() -> Outcome {
    let mut folds = 0;
    for seed in 0..100u64 {
        let manifest = synth::random_manifest(seed);
        folds += leakage::check(&manifest, Protocol::Detect, &[], seed)
            .map_err(|e| format!("detect seed {seed}: {e}"))?;
        let (manifest, exclusions) = synth::random_balanced_manifest(seed);
        let n = leakage::check(&manifest, Protocol::Severity, &exclusions, seed)
            .map_err(|e| format!("severity seed {seed}: {e}"))?;
        ensure(n == 81, || {
            format!("severity seed {seed}: {n} folds inspected")
        })?;
        folds += n;
    }
    Ok(format!(
        "100 detection + 100 severity manifests, {folds} folds inspected"
    ))
}

fn metric_arithmetic() -> Outcome {
    // rows: truth (healthy, dysarthric); columns: prediction
    let cm = ConfusionMatrix::from_rows(vec![vec![9, 1], vec![2, 8]]);
    let m = eval::binary_metrics(&cm);
    ensure(
        m.acc == Some(0.85) && m.se == Some(0.8) && m.sp == Some(0.9),
        || format!("{m:?}"),
    )?;
    let f1 = m.f1.ok_or("F1 undefined")?;
    let expected = 16.0 / 19.0;
    ensure((f1 - expected).abs() <= 1e-12, || {
        format!("F1 = {f1}, want {expected}")
    })?;

    let crafted = [
        (
            vec![
                vec![5, 0, 0, 0],
                vec![1, 3, 0, 0],
                vec![0, 0, 0, 0],
                vec![2, 2, 2, 2],
            ],
            vec![Some(100.0), Some(75.0), None, Some(25.0)],
        ),
        (
            vec![
                vec![0, 4, 0, 0],
                vec![0, 8, 0, 0],
                vec![1, 1, 2, 0],
                vec![0, 0, 0, 16],
            ],
            vec![Some(0.0), Some(100.0), Some(50.0), Some(100.0)],
        ),
        (
            vec![
                vec![3, 1, 0, 0],
                vec![0, 7, 1, 0],
                vec![0, 0, 1, 1],
                vec![1, 0, 0, 3],
            ],
            vec![Some(75.0), Some(87.5), Some(50.0), Some(75.0)],
        ),
    ];
    for (rows, want) in crafted {
        let got = eval::classwise_accuracy(&ConfusionMatrix::from_rows(rows));
        ensure(got == want, || format!("classwise {got:?}, want {want:?}"))?;
    }
    let literal = expected * 1.6 / (expected + 0.8);
    Ok(format!(
        "ACC 0.85, SE 0.8, SP 0.9, F1 {f1:.12} = 16/19 (P = 8/9); note: 16/19*1.6/(16/19+0.8) = {literal:.6} is the harmonic mean of F1 and SE, not F1"
    ))
}

fn baseline_tables(manifest: &Manifest, workers: usize) -> Result<Vec<FeatureTable>, String> {
    let opts = ExtractionOptions {
        workers,
        cache: None,
    };
    let outcome = extract::extract_features(manifest, &FeatureKind::BASELINES, &opts)
        .map_err(|e| e.to_string())?;
    ensure(outcome.failures.is_empty(), || {
        format!("{:?}", outcome.failures)
    })?;
    Ok(outcome.tables.into_values().collect())
}

fn synthetic_detection() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = synth::write_corpus(dir.path(), &synth::detection_spec(16, 20, 42));
    let start = Instant::now();
    let params = EvalParams::default();
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for table in baseline_tables(&corpus.manifest, 1)? {
        let report = eval::run_detection_eval(&corpus.manifest, &table, &params)
            .map_err(|e| e.to_string())?;
        ensure(
            report.per_fold.len() == 16 && report.pooled.total() == 320,
            || {
                format!(
                    "{} folds, {} scored",
                    report.per_fold.len(),
                    report.pooled.total()
                )
            },
        )?;
        let acc = report.pooled_accuracy.unwrap_or(0.0);
        parts.push(format!("{} {:.2}%", table.kind(), 100.0 * acc));
        if acc < 0.95 {
            failures.push(format!(
                "{} pooled ACC {:.2}% < 95%",
                table.kind(),
                100.0 * acc
            ));
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "{}, {:.1} s single-threaded",
        parts.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

fn shuffled(table: &FeatureTable, manifest: &Manifest, seed: u64) -> FeatureTable {
    let ids: Vec<&str> = manifest
        .utterances
        .iter()
        .map(|u| u.utterance_id.as_str())
        .collect();
    let mut values: Vec<Vec<f64>> = ids.iter().map(|id| table.vectors[*id].clone()).collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = FeatureTable::new(table.kind());
    for (id, v) in ids.into_iter().zip(values) {
        out.insert(id, v);
    }
    out
}

fn synthetic_severity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = synth::write_corpus(dir.path(), &synth::severity_spec(&[3, 3, 3, 3], 20, 7));
    let start = Instant::now();
    let params = EvalParams::default();
    let tables = baseline_tables(&corpus.manifest, 1)?;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for table in &tables {
        let report = eval::run_severity_eval(&corpus.manifest, table, &params, &[])
            .map_err(|e| e.to_string())?;
        ensure(report.per_fold.len() == 81, || {
            format!("{} folds", report.per_fold.len())
        })?;
        let acc = report.mean_fold_accuracy.unwrap_or(0.0);
        parts.push(format!("{} {:.2}%", table.kind(), 100.0 * acc));
        if acc < 0.90 {
            failures.push(format!(
                "{} mean ACC {:.2}% < 90%",
                table.kind(),
                100.0 * acc
            ));
        }
    }
    let mfcc = tables
        .iter()
        .find(|t| t.kind() == FeatureKind::Mfcc)
        .ok_or("no mfcc table")?;
    let mut control = Vec::new();
    for seed in 0..10 {
        let table = shuffled(mfcc, &corpus.manifest, seed);
        let report = eval::run_severity_eval(&corpus.manifest, &table, &params, &[])
            .map_err(|e| e.to_string())?;
        control.push(100.0 * report.mean_fold_accuracy.unwrap_or(0.0));
    }
    let chance = control.iter().sum::<f64>() / control.len() as f64;
    if (chance - 25.0).abs() > 5.0 {
        failures.push(format!("shuffled control {chance:.2}% outside 25 +- 5"));
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "{}, shuffled control {chance:.2}% (shuffles: {}), {:.1} s",
        parts.join(", "),
        control
            .iter()
            .map(|c| format!("{c:.1}"))
            .collect::<Vec<_>>()
            .join(" "),
        start.elapsed().as_secs_f64()
    ))
}

fn collect_files(
    root: &Path,
    dir: &Path,
    into: &mut BTreeMap<String, Vec<u8>>,
) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, into)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .into_owned();
            into.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

fn eval_outputs(
    manifest: &Path,
    protocol: &str,
    kinds: &str,
    workers: &str,
    out: &Path,
) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let argv = [
        "dysbench",
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--protocol",
        protocol,
        "--kinds",
        kinds,
        "--workers",
        workers,
        "--no-cache",
        "--out",
        out.to_str().unwrap(),
    ];
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let code = dysbench_cli::run(argv, None, &mut stdout, &mut stderr);
    ensure(code == 0, || {
        format!("eval exited {code}: {}", String::from_utf8_lossy(&stderr))
    })?;
    let mut files = BTreeMap::new();
    collect_files(out, out, &mut files).map_err(|e| e.to_string())?;
    ensure(!files.is_empty(), || "no report files".into())?;
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut detect = synth::detection_spec(4, 3, 9);
    detect.embeddings = true;
    let detect = synth::write_corpus(&dir.path().join("detect"), &detect);
    let mut severity = synth::severity_spec(&[3, 3, 3, 3], 2, 9);
    severity.embeddings = true;
    let severity = synth::write_corpus(&dir.path().join("severity"), &severity);
    let mut compared = 0;
    for (corpus, protocol, kinds) in [
        (&detect, "detect", "all"),
        (
            &severity,
            "severity",
            "spectrogram,mel_spectrogram,mfcc,w2v_7",
        ),
    ] {
        let one = eval_outputs(
            &corpus.manifest_path,
            protocol,
            kinds,
            "1",
            &dir.path().join(format!("{protocol}-1")),
        )?;
        let many = eval_outputs(
            &corpus.manifest_path,
            protocol,
            kinds,
            "8",
            &dir.path().join(format!("{protocol}-8")),
        )?;
        ensure(one.keys().eq(many.keys()), || {
            format!("{protocol}: file sets differ")
        })?;
        for (name, bytes) in &one {
            ensure(many[name] == *bytes, || {
                format!("{protocol}: {name} differs")
            })?;
        }
        compared += one.len();
    }
    Ok(format!(
        "{compared} report files byte-identical for workers 1 and 8"
    ))
}

fn main() {
    let checks: [Check; 10] = [
        ("dsp oracle equivalence", dsp_oracle_equivalence),
        ("dimensionality contract", dimensionality),
        ("svm oracle equivalence", svm_oracle_equivalence),
        ("gamma rule", gamma_rule),
        ("protocol cardinalities", cardinalities),
        ("leakage property", leakage_property),
        ("metric arithmetic", metric_arithmetic),
        ("synthetic detection", synthetic_detection),
        ("synthetic severity", synthetic_severity),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
