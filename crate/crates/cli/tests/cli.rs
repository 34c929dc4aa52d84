use std::fs;
use std::path::{Path, PathBuf};

use dysbench_core::cache::{read_cache_file, FeatureCache};
use dysbench_core::dsp::FeatureKind;
use dysbench_testkit::synth::{self, SynthCorpus};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn dysbench(args: &[&str]) -> Outcome {
    dysbench_env(args, None)
}

fn dysbench_env(args: &[&str], cache_dir: Option<PathBuf>) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dysbench").chain(args.iter().copied());
    let code = dysbench_cli::run(argv, cache_dir, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn detection_corpus(root: &Path, speakers: usize, utts: usize) -> SynthCorpus {
    let mut spec = synth::detection_spec(speakers, utts, 17);
    spec.embeddings = true;
    synth::write_corpus(root, &spec)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn features_fill_cache_and_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 2, 5);
    let out = tmp.path().join("out");
    let args = [
        "features",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "mfcc",
        "--out",
        s(&out),
    ];

    let first = dysbench(&args);
    assert_eq!(first.code, 0, "{}{}", first.stdout, first.stderr);
    assert!(
        first.stdout.contains("computed 10, reused 0, failed 0"),
        "{}",
        first.stdout
    );
    let records =
        read_cache_file(&FeatureCache::new(out.join("cache")).path_for(FeatureKind::Mfcc)).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records
        .iter()
        .all(|r| r.values.len() == 39 && r.kind_tag == "mfcc"));

    let second = dysbench(&args);
    assert_eq!(second.code, 0);
    assert!(
        second.stdout.contains("computed 0, reused 10"),
        "{}",
        second.stdout
    );
}

#[test]
fn cache_dir_from_environment_and_stale_entries_recomputed() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 2, 2);
    let cache = tmp.path().join("elsewhere");
    let out = tmp.path().join("o");
    let args = [
        "features",
        "--manifest",
        s(&corpus.manifest_path),
        "--out",
        s(&out),
    ];
    let first = dysbench_env(&args, Some(cache.clone()));
    assert_eq!(first.code, 0);
    assert!(first.stdout.contains("computed 12"), "{}", first.stdout);
    assert!(cache.join("spectrogram.featcache").exists());

    // touch one source after the cache was written
    let wav = &corpus.manifest.utterances[0].audio_path;
    let later = std::time::SystemTime::now() + std::time::Duration::from_secs(60);
    fs::File::options()
        .write(true)
        .open(wav)
        .unwrap()
        .set_modified(later)
        .unwrap();
    let second = dysbench_env(&args, Some(cache));
    assert!(
        second.stdout.contains("computed 3, reused 9"),
        "{}",
        second.stdout
    );
}

#[test]
fn missing_wav_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 2, 3);
    let victim = corpus.manifest.utterances[1].clone();
    fs::remove_file(&victim.audio_path).unwrap();
    let r = dysbench(&[
        "features",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "mfcc",
        "--out",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("failed 1"), "{}", r.stdout);
    assert!(r.stdout.contains(&victim.utterance_id));
}

#[test]
fn validate_embeddings_flags_bad_headers_and_warns_on_duration() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 2, 3);
    let manifest = s(&corpus.manifest_path).to_string();

    let ok = dysbench(&["validate-embeddings", "--manifest", &manifest]);
    assert_eq!(ok.code, 0, "{}", ok.stdout);
    assert!(
        ok.stdout.contains("6 files, 0 invalid, 0 warnings"),
        "{}",
        ok.stdout
    );

    // frame count far from the audio duration: warning only
    let utts = &corpus.manifest.utterances;
    let long = synth::synthetic_embeddings(&[0.0; 768], &[0.0; 768], 200, &mut rand::rng());
    dysbench_core::embeddings::write_embedding_file(
        &long,
        utts[0].embedding_path.as_ref().unwrap(),
    )
    .unwrap();
    let warn = dysbench(&["validate-embeddings", "--manifest", &manifest]);
    assert_eq!(warn.code, 0);
    assert!(
        warn.stdout.contains("0 invalid, 1 warnings"),
        "{}",
        warn.stdout
    );

    // header dim 512
    let path = utts[1].embedding_path.as_ref().unwrap();
    let mut bytes = fs::read(path).unwrap();
    bytes[12..16].copy_from_slice(&512u32.to_le_bytes());
    fs::write(path, bytes).unwrap();
    let bad = dysbench(&["validate-embeddings", "--manifest", &manifest]);
    assert_eq!(bad.code, 1);
    assert!(bad.stdout.contains("1 invalid"), "{}", bad.stdout);
    assert!(bad
        .stdout
        .contains(&format!("INVALID  {}", utts[1].utterance_id)));
    assert!(bad.stdout.contains("dim = 512"));
}

#[test]
fn eval_all_kinds_writes_sixteen_reports_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 4, 4);
    let out = tmp.path().join("out");
    let r = dysbench(&[
        "eval",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "all",
        "--protocol",
        "detect",
        "--out",
        s(&out),
        "--workers",
        "2",
    ]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let dir = out.join("detect");
    let jsons = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "json")
        })
        .count();
    assert_eq!(jsons, 16);
    let sweep = fs::read_to_string(dir.join("layer_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 17);
    assert!(sweep.starts_with("feature_kind,layer,mean_acc,pooled_acc\n"));
    assert!(sweep.contains("\nw2v_13,13,"));
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("feature_kind,protocol,ACC,SE,SP,F1\n"));
    assert_eq!(summary.lines().count(), 17);
    assert!(r.stdout.contains("mel_spectrogram"));
    assert!(!out.join(".detect.partial").exists());

    // report regenerates identical summaries
    fs::remove_file(dir.join("summary.csv")).unwrap();
    let rep = dysbench(&["report", "--out", s(&out), "--protocol", "detect"]);
    assert_eq!(rep.code, 0, "{}", rep.stderr);
    assert_eq!(
        fs::read_to_string(dir.join("summary.csv")).unwrap(),
        summary
    );
}

#[test]
fn eval_is_byte_identical_across_runs_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 4, 4);
    let run = |name: &str, workers: &str| {
        let out = tmp.path().join(name);
        let r = dysbench(&[
            "eval",
            "--manifest",
            s(&corpus.manifest_path),
            "--kinds",
            "spectrogram,mfcc,w2v_7",
            "--out",
            s(&out),
            "--workers",
            workers,
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        read_dir_sorted(&out.join("detect"))
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "8");
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn severity_on_unbalanced_manifest_names_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = synth::severity_spec(&[3, 3, 2, 4], 2, 5);
    let corpus = synth::write_corpus(&tmp.path().join("corpus"), &spec);
    let out = tmp.path().join("out");
    let r = dysbench(&[
        "eval",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "mfcc",
        "--protocol",
        "severity",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 1);
    assert!(
        r.stderr.contains("medium=2") && r.stderr.contains("high=4"),
        "{}",
        r.stderr
    );
    assert!(!out.join("severity").exists());
    assert!(!out.join(".severity.partial").exists());

    let fixed = dysbench(&[
        "eval",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "mfcc",
        "--protocol",
        "severity",
        "--exclude",
        "HIGH3",
        "--out",
        s(&out),
    ]);
    assert!(fixed.stderr.contains("medium=2"), "{}", fixed.stderr);
}

#[test]
fn failed_eval_leaves_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 4, 3);
    // embeddings missing for one utterance: the w2v group fails after the baselines succeed
    fs::remove_file(
        corpus.manifest.utterances[5]
            .embedding_path
            .as_ref()
            .unwrap(),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let r = dysbench(&[
        "eval",
        "--manifest",
        s(&corpus.manifest_path),
        "--kinds",
        "mfcc,w2v_1",
        "--out",
        s(&out),
        "--no-cache",
    ]);
    assert_eq!(r.code, 1);
    assert!(
        r.stderr
            .contains(&corpus.manifest.utterances[5].utterance_id),
        "{}",
        r.stderr
    );
    assert!(!out.join("detect").exists());
    assert!(!out.join(".detect.partial").exists());
    assert!(!out.join("cache").exists());
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = detection_corpus(&tmp.path().join("corpus"), 4, 3);
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"manifest_path": "{}", "feature_kinds": ["spectrogram"], "output_dir": "from_config", "workers": 2}}"#,
            s(&corpus.manifest_path)
        ),
    )
    .unwrap();
    let r = dysbench(&["eval", "--config", s(&cfg), "--kinds", "mfcc"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let dir = tmp.path().join("from_config").join("detect");
    assert!(dir.join("mfcc.json").exists());
    assert!(!dir.join("spectrogram.json").exists());
    let json = fs::read_to_string(dir.join("mfcc.json")).unwrap();
    assert!(!json.contains("workers") && !json.contains("from_config"));
}

#[test]
fn usage_errors() {
    assert_ne!(dysbench(&["eval", "--protocol", "nope"]).code, 0);
    let r = dysbench(&["eval", "--kinds", "mfcc", "--out", "/nonexistent/x"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no manifest"));
    let r = dysbench(&["eval", "--manifest", "m.csv"]);
    assert!(r.stderr.contains("no feature kinds"), "{}", r.stderr);
    assert_eq!(dysbench(&["--help"]).code, 0);
}
