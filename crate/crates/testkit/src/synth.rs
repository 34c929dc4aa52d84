//! Synthetic corpora: harmonic tone families whose fundamental and spectral
//! tilt depend on the class, with per-speaker and per-utterance jitter, plus
//! matching synthetic layer embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use dysbench_core::corpus::{
    self, Block, Health, Manifest, Severity, Sex, SpeakerRecord, UtteranceRecord, SAMPLE_RATE_HZ,
};
use dysbench_core::embeddings::{self, EmbeddingSet, SAMPLES_PER_FRAME};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub record: SpeakerRecord,
    /// Acoustic class driving the generated signals.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speakers: Vec<SynthSpeaker>,
    pub n_classes: usize,
    pub utterances_per_speaker: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub embeddings: bool,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

fn speaker(id: String, severity: Option<Severity>, class: usize, i: usize) -> SynthSpeaker {
    SynthSpeaker {
        record: SpeakerRecord {
            speaker_id: id,
            health: if severity.is_some() {
                Health::Dysarthric
            } else {
                Health::Healthy
            },
            severity,
            sex: if i.is_multiple_of(2) { Sex::M } else { Sex::F },
        },
        class,
    }
}

/// Half healthy (class 0), half dysarthric (class 1) speakers, interleaved.
pub fn detection_spec(n_speakers: usize, utterances_per_speaker: usize, seed: u64) -> CorpusSpec {
    let speakers = (0..n_speakers)
        .map(|i| {
            if i % 2 == 0 {
                speaker(format!("C{:02}", i / 2), None, 0, i)
            } else {
                let sev = Severity::ALL[(i / 2) % 4];
                speaker(format!("D{:02}", i / 2), Some(sev), 1, i)
            }
        })
        .collect();
    CorpusSpec {
        speakers,
        n_classes: 2,
        utterances_per_speaker,
        duration_s: 0.5,
        seed,
        embeddings: false,
    }
}

/// `per_class` dysarthric speakers per severity class, acoustic class = severity index.
pub fn severity_spec(
    per_class: &[usize; 4],
    utterances_per_speaker: usize,
    seed: u64,
) -> CorpusSpec {
    let mut speakers = Vec::new();
    for (c, &count) in per_class.iter().enumerate() {
        let sev = Severity::ALL[c];
        for j in 0..count {
            let i = speakers.len();
            speakers.push(speaker(
                format!("{}{j}", sev.as_str().to_uppercase()),
                Some(sev),
                c,
                i,
            ));
        }
    }
    CorpusSpec {
        speakers,
        n_classes: 4,
        utterances_per_speaker,
        duration_s: 0.5,
        seed,
        embeddings: false,
    }
}

/// Formant centre per acoustic class.
const FORMANT_HZ: [f64; 4] = [500.0, 1500.0, 2500.0, 3500.0];

/// Harmonic tone of the given class: fundamental, spectral tilt and one
/// formant-like envelope peak all depend on the class. `speaker_shift` scales
/// the fundamental.
pub fn tone_utterance(
    class: usize,
    speaker_shift: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE_HZ);
    let f0 = 110.0 * 1.3f64.powi(class as i32) * speaker_shift * rng.random_range(0.99..1.01);
    let tilt = 0.3 + 0.2 * class as f64;
    let formant = FORMANT_HZ[class % FORMANT_HZ.len()] * speaker_shift;
    let amp = rng.random_range(0.2..0.5);
    let noise = Normal::new(0.0, 0.005).expect("valid deviation");
    let partials: Vec<(f64, f64, f64)> = (1..)
        .map(|h| h as f64)
        .take_while(|h| h * f0 < 7000.0)
        .map(|h| {
            let f = h * f0;
            let envelope = 0.05 + (-((f - formant) / 300.0).powi(2)).exp();
            (
                f,
                h.powf(-tilt) * envelope,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    let band = resonant_noise(formant, 250.0, n_samples, rng);
    (0..n_samples)
        .map(|n| {
            let t = n as f64 / sr;
            let tone: f64 = partials
                .iter()
                .map(|&(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                .sum();
            amp * (0.5 * tone / norm + 0.3 * band[n]) + noise.sample(rng)
        })
        .collect()
}

/// White noise through a two-pole resonator, scaled to unit RMS.
fn resonant_noise(
    centre_hz: f64,
    bandwidth_hz: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE_HZ);
    let r = (-std::f64::consts::PI * bandwidth_hz / sr).exp();
    let a1 = 2.0 * r * (std::f64::consts::TAU * centre_hz / sr).cos();
    let a2 = -r * r;
    let white = Normal::new(0.0, 1.0).expect("valid deviation");
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out: Vec<f64> = (0..n_samples)
        .map(|_| {
            let y = white.sample(rng) + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n_samples.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Class prototypes whose separation grows with layer depth.
pub fn synthetic_embeddings(
    prototype: &[f32],
    speaker_offset: &[f32],
    n_frames: usize,
    rng: &mut impl Rng,
) -> EmbeddingSet {
    let noise = Normal::new(0.0f32, 1.0).expect("valid deviation");
    let layers = (1..=embeddings_layers())
        .map(|l| {
            let scale = l as f32 / embeddings_layers() as f32;
            Array2::from_shape_fn((n_frames, prototype.len()), |(_, d)| {
                scale * prototype[d] + speaker_offset[d] + noise.sample(rng)
            })
        })
        .collect();
    EmbeddingSet::new(layers).expect("well-formed synthetic embeddings")
}

fn embeddings_layers() -> usize {
    dysbench_core::dsp::N_LAYERS
}

/// Writes WAVs (and embeddings if requested) under `root` plus `root/manifest.csv`.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = dysbench_core::dsp::EMBEDDING_DIM;
    let std_normal = Normal::new(0.0f32, 1.0).expect("valid deviation");
    let prototypes: Vec<Vec<f32>> = (0..spec.n_classes)
        .map(|_| {
            (0..dim)
                .map(|_| 1.5 * std_normal.sample(&mut rng))
                .collect()
        })
        .collect();

    fs::create_dir_all(root.join("wav")).expect("create wav dir");
    if spec.embeddings {
        fs::create_dir_all(root.join("emb")).expect("create embedding dir");
    }
    let n_samples = (spec.duration_s * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let mut manifest = Manifest {
        provenance: vec![format!("synthetic corpus, seed {}", spec.seed)],
        speakers: spec.speakers.iter().map(|s| s.record.clone()).collect(),
        utterances: Vec::new(),
    };
    for s in &spec.speakers {
        let shift = rng.random_range(0.97..1.03);
        let offset: Vec<f32> = (0..dim)
            .map(|_| 0.3 * std_normal.sample(&mut rng))
            .collect();
        let sid = &s.record.speaker_id;
        for j in 0..spec.utterances_per_speaker {
            let uid = format!("{sid}_B{}_W{j:03}", j % 3 + 1);
            let wav_rel = PathBuf::from("wav").join(format!("{uid}.wav"));
            let samples = tone_utterance(s.class, shift, n_samples, &mut rng);
            corpus::write_audio(root.join(&wav_rel), &samples, SAMPLE_RATE_HZ).expect("write wav");
            let embedding_path = spec.embeddings.then(|| {
                let rel = PathBuf::from("emb").join(format!("{uid}.w2v"));
                let set = synthetic_embeddings(
                    &prototypes[s.class],
                    &offset,
                    (n_samples / SAMPLES_PER_FRAME).max(1),
                    &mut rng,
                );
                embeddings::write_embedding_file(&set, root.join(&rel)).expect("write embeddings");
                rel
            });
            manifest.utterances.push(UtteranceRecord {
                utterance_id: uid,
                speaker_id: sid.clone(),
                block: [Block::B1, Block::B2, Block::B3][j % 3],
                word_id: format!("W{j:03}"),
                audio_path: wav_rel,
                embedding_path,
            });
        }
    }
    let manifest_path = root.join("manifest.csv");
    // paths are written relative to the manifest so the corpus can be relocated
    corpus::write_manifest(&manifest, &manifest_path).expect("write manifest");
    SynthCorpus {
        root: root.to_path_buf(),
        manifest: corpus::load_manifest(&manifest_path).expect("reload manifest"),
        manifest_path,
    }
}

/// Five fixed-seed test signals: noise, pure tone, two tones, chirp, tone in noise.
pub fn oracle_signals(seed: u64, n_samples: usize) -> Vec<(&'static str, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = f64::from(SAMPLE_RATE_HZ);
    let tau = std::f64::consts::TAU;
    let noise = Normal::new(0.0, 0.3).expect("valid deviation");
    let t = |n: usize| n as f64 / sr;
    let white: Vec<f64> = (0..n_samples).map(|_| noise.sample(&mut rng)).collect();
    let tone: Vec<f64> = (0..n_samples)
        .map(|n| 0.5 * (tau * 1000.0 * t(n)).sin())
        .collect();
    let two: Vec<f64> = (0..n_samples)
        .map(|n| 0.4 * (tau * 440.0 * t(n)).sin() + 0.2 * (tau * 3150.0 * t(n) + 0.3).sin())
        .collect();
    let dur = n_samples as f64 / sr;
    let (f_lo, f_hi) = (100.0, 7000.0);
    let chirp: Vec<f64> = (0..n_samples)
        .map(|n| {
            let tt = t(n);
            0.5 * (tau * (f_lo * tt + 0.5 * (f_hi - f_lo) / dur * tt * tt)).sin()
        })
        .collect();
    let noisy: Vec<f64> = (0..n_samples)
        .map(|n| 0.3 * (tau * 250.0 * t(n)).sin() + 0.1 * noise.sample(&mut rng))
        .collect();
    vec![
        ("white_noise", white),
        ("tone_1khz", tone),
        ("two_tones", two),
        ("chirp", chirp),
        ("tone_in_noise", noisy),
    ]
}

/// Random manifest shape without audio: 2-14 speakers of random health and
/// severity, 0-6 utterances each. Paths are placeholders.
pub fn random_manifest(seed: u64) -> Manifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_speakers = rng.random_range(2..=14);
    let mut manifest = Manifest::default();
    for i in 0..n_speakers {
        let severity = rng
            .random_bool(0.6)
            .then(|| Severity::ALL[rng.random_range(0..4)]);
        let id = format!("S{i:02}");
        manifest
            .speakers
            .push(speaker(id.clone(), severity, 0, i).record);
        for j in 0..rng.random_range(0..=6) {
            manifest.utterances.push(UtteranceRecord {
                utterance_id: format!("{id}_U{j}"),
                speaker_id: id.clone(),
                block: Block::B1,
                word_id: format!("W{j}"),
                audio_path: PathBuf::from(format!("{id}_{j}.wav")),
                embedding_path: None,
            });
        }
    }
    manifest
}

/// Balanced severity manifest (3 speakers per class) with random utterance counts
/// and up to three extra speakers that must be excluded.
pub fn random_balanced_manifest(seed: u64) -> (Manifest, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::default();
    let mut exclusions = Vec::new();
    let extra: Vec<usize> = (0..rng.random_range(0..=3))
        .map(|_| rng.random_range(0..4))
        .collect();
    for c in 0..4 {
        let count = 3 + extra.iter().filter(|&&e| e == c).count();
        for k in 0..count {
            let i = manifest.speakers.len();
            let id = format!("P{i:02}");
            if k >= 3 {
                exclusions.push(id.clone());
            }
            manifest
                .speakers
                .push(speaker(id.clone(), Some(Severity::ALL[c]), c, i).record);
            for j in 0..rng.random_range(1..=4) {
                manifest.utterances.push(UtteranceRecord {
                    utterance_id: format!("{id}_U{j}"),
                    speaker_id: id.clone(),
                    block: Block::B2,
                    word_id: format!("W{j}"),
                    audio_path: PathBuf::from(format!("{id}_{j}.wav")),
                    embedding_path: None,
                });
            }
        }
    }
    if rng.random_bool(0.5) {
        manifest
            .speakers
            .push(speaker("CTRL".into(), None, 0, 99).record);
    }
    (manifest, exclusions)
}
