//! Corpus data model: speakers, utterances, the manifest CSV, and PCM16 WAV input.
//!
//! The manifest is a single CSV table. Every row names a speaker; rows with a
//! non-empty `utterance_id` also describe one utterance. Speaker attributes
//! (`health`, `severity`, `sex`) only need to be filled in once per speaker,
//! either on a speaker-only row (empty `utterance_id`) or on any utterance row.
//! Comment lines starting with `#` before the header are kept as provenance.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The only sample rate the feature pipeline is calibrated for.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

pub const MANIFEST_COLUMNS: [&str; 9] = [
    "utterance_id",
    "speaker_id",
    "health",
    "severity",
    "sex",
    "block",
    "word_id",
    "audio_path",
    "embedding_path",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("utterance `{0}` references an undeclared speaker")]
    UnknownSpeakerReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("sample rate {found} Hz in {path}, expected {SAMPLE_RATE_HZ} Hz")]
    SampleRateMismatch { path: PathBuf, found: u32 },
    #[error("audio file {0} holds no samples")]
    EmptyAudio(PathBuf),
    #[error("i/o error on {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    Dysarthric,
}

/// Intelligibility group of a dysarthric speaker, ordered from least to most intelligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    VeryLow,
    Low,
    Medium,
    High,
}

impl Severity {
    pub const ALL: [Severity; 4] = [
        Severity::VeryLow,
        Severity::Low,
        Severity::Medium,
        Severity::High,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::VeryLow => "very_low",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    B1,
    B2,
    B3,
}

impl Health {
    pub fn as_str(self) -> &'static str {
        match self {
            Health::Healthy => "healthy",
            Health::Dysarthric => "dysarthric",
        }
    }
}

impl fmt::Display for Health {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Health {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "healthy" => Ok(Health::Healthy),
            "dysarthric" => Ok(Health::Dysarthric),
            other => Err(format!("unknown health value `{other}`")),
        }
    }
}

impl FromStr for Severity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Severity::ALL
            .into_iter()
            .find(|sev| sev.as_str() == s)
            .ok_or_else(|| format!("unknown severity value `{s}`"))
    }
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(format!("unknown sex value `{other}`")),
        }
    }
}

impl FromStr for Block {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "B1" => Ok(Block::B1),
            "B2" => Ok(Block::B2),
            "B3" => Ok(Block::B3),
            other => Err(format!("unknown block `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub health: Health,
    /// Present exactly when `health` is `Dysarthric`.
    pub severity: Option<Severity>,
    pub sex: Sex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub block: Block,
    pub word_id: String,
    /// Resolved against the manifest's directory when relative.
    pub audio_path: PathBuf,
    pub embedding_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    /// `#` comment lines preceding the header, with the marker stripped.
    pub provenance: Vec<String>,
    pub speakers: Vec<SpeakerRecord>,
    pub utterances: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn speaker(&self, speaker_id: &str) -> Option<&SpeakerRecord> {
        self.speakers.iter().find(|s| s.speaker_id == speaker_id)
    }

    /// Map from speaker id to its record.
    pub fn speaker_index(&self) -> HashMap<&str, &SpeakerRecord> {
        self.speakers
            .iter()
            .map(|s| (s.speaker_id.as_str(), s))
            .collect()
    }
}

/// Raw CSV row; every column is read as text so empty cells are explicit.
#[derive(Debug, Deserialize)]
struct Row {
    utterance_id: String,
    speaker_id: String,
    health: String,
    severity: String,
    sex: String,
    block: String,
    word_id: String,
    audio_path: String,
    embedding_path: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::MissingFile(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            cause: e,
        },
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

/// Parses manifest text; relative paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut provenance = Vec::new();
    let mut header_offset: u64 = 0;
    let mut rest = text;
    while let Some(line) = rest.lines().next() {
        let trimmed = line.trim_start();
        if trimmed.starts_with('#') {
            provenance.push(trimmed.trim_start_matches('#').trim().to_string());
        } else if !trimmed.is_empty() {
            break;
        }
        header_offset += 1;
        rest = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => "",
        };
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRow {
            line: header_offset + 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_COLUMNS {
        return Err(CorpusError::MalformedRow {
            line: header_offset + 1,
            reason: format!(
                "header must be `{}`, found `{}`",
                MANIFEST_COLUMNS.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut speakers: Vec<SpeakerRecord> = Vec::new();
    let mut speaker_pos: HashMap<String, usize> = HashMap::new();
    let mut speaker_only_rows: HashMap<String, u64> = HashMap::new();
    let mut pending: Vec<(u64, UtteranceRecord)> = Vec::new();
    let mut utterance_ids: HashMap<String, u64> = HashMap::new();

    for result in reader.records() {
        let record = result.map_err(|e| CorpusError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0) + header_offset,
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + header_offset;
        let row: Row =
            record
                .deserialize(Some(&headers))
                .map_err(|e| CorpusError::MalformedRow {
                    line,
                    reason: e.to_string(),
                })?;
        let malformed = |reason: String| CorpusError::MalformedRow { line, reason };

        if row.speaker_id.is_empty() {
            return Err(malformed("empty speaker_id".into()));
        }

        if !row.health.is_empty() {
            let health: Health = row.health.parse().map_err(malformed)?;
            let severity = match (health, row.severity.as_str()) {
                (Health::Healthy, "") => None,
                (Health::Healthy, s) => {
                    return Err(malformed(format!(
                        "healthy speaker `{}` must not carry severity `{s}`",
                        row.speaker_id
                    )))
                }
                (Health::Dysarthric, "") => {
                    return Err(malformed(format!(
                        "dysarthric speaker `{}` needs a severity",
                        row.speaker_id
                    )))
                }
                (Health::Dysarthric, s) => Some(s.parse::<Severity>().map_err(malformed)?),
            };
            let sex: Sex = row.sex.parse().map_err(malformed)?;
            let record = SpeakerRecord {
                speaker_id: row.speaker_id.clone(),
                health,
                severity,
                sex,
            };
            match speaker_pos.get(&row.speaker_id) {
                Some(&pos) if speakers[pos] != record => {
                    return Err(malformed(format!(
                        "conflicting attributes for speaker `{}`",
                        row.speaker_id
                    )))
                }
                Some(_) => {}
                None => {
                    speaker_pos.insert(row.speaker_id.clone(), speakers.len());
                    speakers.push(record);
                }
            }
        } else if !row.severity.is_empty() || !row.sex.is_empty() {
            return Err(malformed("severity/sex given without health".to_string()));
        }

        if row.utterance_id.is_empty() {
            if row.health.is_empty() {
                return Err(malformed(
                    "row declares neither an utterance nor speaker attributes".into(),
                ));
            }
            if speaker_only_rows
                .insert(row.speaker_id.clone(), line)
                .is_some()
            {
                return Err(CorpusError::DuplicateId(row.speaker_id));
            }
            continue;
        }

        if utterance_ids
            .insert(row.utterance_id.clone(), line)
            .is_some()
        {
            return Err(CorpusError::DuplicateId(row.utterance_id));
        }
        let block: Block = row.block.parse().map_err(malformed)?;
        if row.audio_path.is_empty() {
            return Err(malformed("empty audio_path".into()));
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        pending.push((
            line,
            UtteranceRecord {
                utterance_id: row.utterance_id,
                speaker_id: row.speaker_id,
                block,
                word_id: row.word_id,
                audio_path: resolve(&row.audio_path),
                embedding_path: (!row.embedding_path.is_empty())
                    .then(|| resolve(&row.embedding_path)),
            },
        ));
    }

    let mut utterances = Vec::with_capacity(pending.len());
    for (_, utt) in pending {
        if !speaker_pos.contains_key(&utt.speaker_id) {
            return Err(CorpusError::UnknownSpeakerReference(utt.utterance_id));
        }
        utterances.push(utt);
    }
    if utterances.is_empty() {
        log::warn!(
            "manifest declares {} speakers but no utterances",
            speakers.len()
        );
    }

    Ok(Manifest {
        provenance,
        speakers,
        utterances,
    })
}

/// Serializes a manifest back to CSV. Speaker attributes are written on a
/// speaker-only row per speaker, followed by all utterance rows.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.to_path_buf(),
        cause: e,
    };
    let mut out = String::new();
    for line in &manifest.provenance {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| io_err(std::io::Error::other(e));
    writer.write_record(MANIFEST_COLUMNS).map_err(csv_err)?;
    for s in &manifest.speakers {
        let sex = match s.sex {
            Sex::F => "F",
            Sex::M => "M",
        };
        writer
            .write_record([
                "",
                &s.speaker_id,
                s.health.as_str(),
                s.severity.map(Severity::as_str).unwrap_or(""),
                sex,
                "",
                "",
                "",
                "",
            ])
            .map_err(csv_err)?;
    }
    for u in &manifest.utterances {
        let block = format!("{:?}", u.block);
        let audio = u.audio_path.to_string_lossy();
        let emb = u
            .embedding_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        writer
            .write_record([
                u.utterance_id.as_str(),
                &u.speaker_id,
                "",
                "",
                "",
                &block,
                &u.word_id,
                &audio,
                &emb,
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| io_err(std::io::Error::other(e.to_string())))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    fs::write(path, out).map_err(io_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioUtterance {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioUtterance {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

fn open_wav(path: &Path) -> Result<hound::WavReader<std::io::BufReader<fs::File>>> {
    hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CorpusError::MissingFile(path.to_path_buf())
        }
        hound::Error::IoError(io) => CorpusError::Io {
            path: path.to_path_buf(),
            cause: io,
        },
        other => CorpusError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

fn check_spec(path: &Path, spec: hound::WavSpec) -> Result<()> {
    let unsupported = |reason: String| CorpusError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported("floating-point samples, expected PCM".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{} bits per sample, expected 16",
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(CorpusError::SampleRateMismatch {
            path: path.to_path_buf(),
            found: spec.sample_rate,
        });
    }
    Ok(())
}

/// Reads a mono PCM16 16 kHz WAV file, scaling samples by 1/32768.
pub fn read_audio(path: impl AsRef<Path>) -> Result<AudioUtterance> {
    let path = path.as_ref();
    let mut reader = open_wav(path)?;
    let spec = reader.spec();
    check_spec(path, spec)?;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CorpusError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if samples.is_empty() {
        return Err(CorpusError::EmptyAudio(path.to_path_buf()));
    }
    Ok(AudioUtterance {
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

/// Number of samples in a WAV file, read from the header only.
pub fn audio_sample_count(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let reader = open_wav(path)?;
    check_spec(path, reader.spec())?;
    Ok(reader.len() as usize)
}

/// Writes samples in [-1, 1] as mono PCM16, rounding to the nearest step and clamping.
pub fn write_audio(path: impl AsRef<Path>, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| CorpusError::Io {
        path: path.to_path_buf(),
        cause: match e {
            hound::Error::IoError(io) => io,
            other => std::io::Error::other(other.to_string()),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "utterance_id,speaker_id,health,severity,sex,block,word_id,audio_path,embedding_path\n";

    fn parse(body: &str) -> Result<Manifest> {
        parse_manifest(&format!("{HEADER}{body}"), Path::new("/data"))
    }

    #[test]
    fn speakers_declared_on_utterance_rows() {
        let m = parse(
            "u1,S1,healthy,,F,B1,w1,a/u1.wav,\n\
             u2,S1,,,,B2,w2,a/u2.wav,e/u2.emb\n\
             u3,S2,dysarthric,high,M,B3,w1,/abs/u3.wav,\n",
        )
        .unwrap();
        assert_eq!(m.speakers.len(), 2);
        assert_eq!(m.speakers[1].severity, Some(Severity::High));
        assert_eq!(m.utterances[0].audio_path, Path::new("/data/a/u1.wav"));
        assert_eq!(m.utterances[2].audio_path, Path::new("/abs/u3.wav"));
        assert_eq!(
            m.utterances[1].embedding_path.as_deref(),
            Some(Path::new("/data/e/u2.emb"))
        );
        assert_eq!(m.utterances[0].embedding_path, None);
    }

    #[test]
    fn provenance_comments_are_kept() {
        let text =
            format!("# UA-Speech, microphone 6\n#  prepared 2024\n{HEADER},S1,healthy,,M,,,,\n");
        let m = parse_manifest(&text, Path::new("")).unwrap();
        assert_eq!(
            m.provenance,
            vec!["UA-Speech, microphone 6", "prepared 2024"]
        );
        assert_eq!(m.speakers.len(), 1);
        assert!(m.utterances.is_empty());
    }

    #[test]
    fn undeclared_speaker_is_rejected() {
        let err = parse(",S1,healthy,,M,,,,\nu1,X99,,,,B1,w,a.wav,\n").unwrap_err();
        assert!(matches!(err, CorpusError::UnknownSpeakerReference(id) if id == "u1"));
    }

    #[test]
    fn severity_must_match_health() {
        assert!(matches!(
            parse(",S1,healthy,low,M,,,,\n"),
            Err(CorpusError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            parse(",S1,dysarthric,,M,,,,\n"),
            Err(CorpusError::MalformedRow { .. })
        ));
    }

    #[test]
    fn duplicate_ids() {
        let err =
            parse(",S1,healthy,,M,,,,\nu1,S1,,,,B1,w,a.wav,\nu1,S1,,,,B1,w,b.wav,\n").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "u1"));
        let err = parse(",S1,healthy,,M,,,,\n,S1,healthy,,M,,,,\n").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "S1"));
    }

    #[test]
    fn conflicting_speaker_attributes() {
        let err =
            parse("u1,S1,healthy,,M,B1,w,a.wav,\nu2,S1,healthy,,F,B1,w,b.wav,\n").unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRow { line: 3, .. }));
    }

    #[test]
    fn bad_values_report_line_numbers() {
        let err = parse(",S1,healthy,,M,,,,\nu1,S1,,,,B4,w,a.wav,\n").unwrap_err();
        assert!(
            matches!(err, CorpusError::MalformedRow { line: 3, .. }),
            "{err}"
        );
        let err = parse_manifest("a,b,c\n", Path::new("")).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn missing_manifest_file() {
        let err = load_manifest("/nonexistent/manifest.csv").unwrap_err();
        assert!(matches!(err, CorpusError::MissingFile(_)));
    }

    #[test]
    fn wav_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..16000)
            .map(|i| ((i as f64) * 0.01).sin() * 0.5)
            .collect();
        write_audio(&p, &samples, SAMPLE_RATE_HZ).unwrap();
        let audio = read_audio(&p).unwrap();
        assert_eq!(audio.sample_rate_hz, 16000);
        assert_eq!(audio.samples.len(), 16000);
        for (a, b) in audio.samples.iter().zip(&samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-15);
        }
        assert_eq!(audio_sample_count(&p).unwrap(), 16000);

        let z = dir.path().join("z.wav");
        write_audio(&z, &[0.0; 100], SAMPLE_RATE_HZ).unwrap();
        assert!(read_audio(&z).unwrap().samples.iter().all(|&s| s == 0.0));

        let hi = dir.path().join("hi.wav");
        write_audio(&hi, &[0.0; 100], 44_100).unwrap();
        assert!(matches!(
            read_audio(&hi),
            Err(CorpusError::SampleRateMismatch { found: 44_100, .. })
        ));

        let st = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&st, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(
            read_audio(&st),
            Err(CorpusError::UnsupportedFormat { .. })
        ));

        let b8 = dir.path().join("b8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&b8, spec).unwrap();
        w.write_sample(0i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_audio(&b8),
            Err(CorpusError::UnsupportedFormat { .. })
        ));

        let empty = dir.path().join("e.wav");
        write_audio(&empty, &[], SAMPLE_RATE_HZ).unwrap();
        assert!(matches!(
            read_audio(&empty),
            Err(CorpusError::EmptyAudio(_))
        ));
    }

    #[test]
    fn write_then_load_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            provenance: vec!["mic 6".into()],
            speakers: vec![
                SpeakerRecord {
                    speaker_id: "F02".into(),
                    health: Health::Dysarthric,
                    severity: Some(Severity::Low),
                    sex: Sex::F,
                },
                SpeakerRecord {
                    speaker_id: "CM01".into(),
                    health: Health::Healthy,
                    severity: None,
                    sex: Sex::M,
                },
            ],
            utterances: vec![UtteranceRecord {
                utterance_id: "F02_B1_W1".into(),
                speaker_id: "F02".into(),
                block: Block::B1,
                word_id: "W1".into(),
                audio_path: dir.path().join("a.wav"),
                embedding_path: None,
            }],
        };
        let p = dir.path().join("m.csv");
        write_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }
}
