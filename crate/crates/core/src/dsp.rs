//! Baseline spectral features: log-spectrogram, log mel-spectrogram and
//! MFCC with delta and double-delta, plus utterance-level time averaging.
//!
//! Frame geometry is 25 ms windows with a 5 ms shift at 16 kHz (400/80
//! samples). Each frame is Hamming-windowed, zero-padded to 1024 points and
//! transformed; only the 513 non-negative frequency bins are kept. Frames are
//! neither centred nor padded, and no pre-emphasis is applied.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AudioUtterance;

pub const FRAME_LEN: usize = 400;
pub const HOP: usize = 80;
pub const N_FFT: usize = 1024;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 80;
pub const N_MFCC: usize = 13;
pub const MFCC_DIM: usize = 3 * N_MFCC;
pub const EMBEDDING_DIM: usize = 768;
pub const N_LAYERS: usize = 13;
pub const DELTA_HALF_WIDTH: usize = 4;
pub const MAG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than one frame of {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("{frames} frames is too few for a {needed}-frame delta window")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("invalid framing parameters: frame_len={frame_len}, hop={hop}")]
    InvalidFraming { frame_len: usize, hop: usize },
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Which representation a feature vector was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Spectrogram,
    MelSpectrogram,
    Mfcc,
    /// Embedding layer 1..=13 (1 = context-network input, 2..=13 = block outputs).
    Wav2VecLayer(u8),
}

impl FeatureKind {
    pub const BASELINES: [FeatureKind; 3] = [
        FeatureKind::Spectrogram,
        FeatureKind::MelSpectrogram,
        FeatureKind::Mfcc,
    ];

    /// All 16 feature conditions in report order.
    pub fn all() -> Vec<FeatureKind> {
        let mut kinds = Self::BASELINES.to_vec();
        kinds.extend((1..=N_LAYERS as u8).map(FeatureKind::Wav2VecLayer));
        kinds
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Spectrogram => N_BINS,
            FeatureKind::MelSpectrogram => N_MELS,
            FeatureKind::Mfcc => MFCC_DIM,
            FeatureKind::Wav2VecLayer(_) => EMBEDDING_DIM,
        }
    }

    pub fn is_baseline(self) -> bool {
        !matches!(self, FeatureKind::Wav2VecLayer(_))
    }

    pub fn layer(self) -> Option<u8> {
        match self {
            FeatureKind::Wav2VecLayer(n) => Some(n),
            _ => None,
        }
    }

    pub fn tag(self) -> String {
        match self {
            FeatureKind::Spectrogram => "spectrogram".into(),
            FeatureKind::MelSpectrogram => "mel_spectrogram".into(),
            FeatureKind::Mfcc => "mfcc".into(),
            FeatureKind::Wav2VecLayer(n) => format!("w2v_{n}"),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spectrogram" => Ok(FeatureKind::Spectrogram),
            "mel_spectrogram" => Ok(FeatureKind::MelSpectrogram),
            "mfcc" => Ok(FeatureKind::Mfcc),
            _ => s
                .strip_prefix("w2v_")
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|n| (1..=N_LAYERS as u8).contains(n))
                .map(FeatureKind::Wav2VecLayer)
                .ok_or_else(|| format!("unknown feature kind `{s}`")),
        }
    }
}

impl Serialize for FeatureKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for FeatureKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// T x D matrix of per-frame values, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub values: Array2<f64>,
    pub frame_shift_s: f64,
    pub frame_length_s: f64,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

/// Returns frame `t` as `samples[t*hop .. t*hop + frame_len]`; the tail past the last full frame is dropped.
pub fn frame_signal(samples: &[f64], frame_len: usize, hop: usize) -> Result<Vec<&[f64]>> {
    if frame_len == 0 || hop == 0 {
        return Err(DspError::InvalidFraming { frame_len, hop });
    }
    if samples.len() < frame_len {
        return Err(DspError::SignalTooShort {
            len: samples.len(),
            frame_len,
        });
    }
    let n_frames = (samples.len() - frame_len) / hop + 1;
    Ok((0..n_frames)
        .map(|t| &samples[t * hop..t * hop + frame_len])
        .collect())
}

/// Periodic Hamming window, `0.54 - 0.46 cos(2 pi n / len)`.
pub fn hamming_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// 80 x 513 triangular filterbank over 0-8000 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// The `n_mels + 2` break-points in Hz; filter `i` spans `edges[i]..edges[i+2]`.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub const F_MIN_HZ: f64 = 0.0;
    pub const F_MAX_HZ: f64 = 8000.0;

    pub fn n_filters(&self) -> usize {
        self.weights.nrows()
    }

    /// Centre frequency of each filter in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }

    /// Applies the filterbank to one amplitude spectrum of 513 bins.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.weights
            .outer_iter()
            .map(|row| row.iter().zip(spectrum).map(|(w, s)| w * s).sum())
            .collect()
    }
}

pub fn build_mel_filterbank() -> MelFilterbank {
    mel_filterbank(
        N_MELS,
        N_FFT,
        16_000.0,
        MelFilterbank::F_MIN_HZ,
        MelFilterbank::F_MAX_HZ,
    )
}

/// Area-normalized triangular filters with centres uniform on the mel scale.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
) -> MelFilterbank {
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate / n_fft as f64)
        .collect();

    let mut weights = Array2::<f64>::zeros((n_mels, n_bins));
    for (i, mut row) in weights.outer_iter_mut().enumerate() {
        let (lower, center, upper) = (edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]);
        let enorm = 2.0 / (upper - lower);
        for (w, &f) in row.iter_mut().zip(&bin_hz) {
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            *w = rising.min(falling).max(0.0) * enorm;
        }
    }
    MelFilterbank { weights, edges_hz }
}

/// Orthonormal DCT-II basis: row `k` holds `s_k cos(pi k (2n+1) / 2N)`.
pub fn dct2_ortho_matrix(n: usize, n_coeffs: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_coeffs, n), |(k, i)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}

/// Regression-slope deltas over a `2*half_width+1` window, edge frames replicated.
///
/// `delta[t] = sum_{k=1..K} k (c[t+k] - c[t-k]) / (2 sum_{k=1..K} k^2)`
pub fn deltas(m: &Array2<f64>, half_width: usize) -> Array2<f64> {
    let t_len = m.nrows();
    let denom = 2.0 * (1..=half_width).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Array2::<f64>::zeros(m.raw_dim());
    if t_len == 0 {
        return out;
    }
    let last = t_len as isize - 1;
    let at = |t: isize| m.row(t.clamp(0, last) as usize);
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for k in 1..=half_width {
            let fwd = at(t as isize + k as isize);
            let back = at(t as isize - k as isize);
            for ((o, f), b) in row.iter_mut().zip(fwd.iter()).zip(back.iter()) {
                *o += k as f64 * (f - b);
            }
        }
        row.mapv_inplace(|v| v / denom);
    }
    out
}

fn to_db(x: f64) -> f64 {
    20.0 * x.max(MAG_FLOOR).log10()
}

/// Reusable extractor holding the FFT plan, window, filterbank and DCT basis.
pub struct FeatureExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Array2<f64>,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor").finish_non_exhaustive()
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

/// All three baseline representations of one utterance.
#[derive(Debug, Clone)]
pub struct BaselineFeatures {
    pub spectrogram: FrameMatrix,
    pub mel_spectrogram: FrameMatrix,
    pub mfcc: FrameMatrix,
}

impl BaselineFeatures {
    pub fn get(&self, kind: FeatureKind) -> Option<&FrameMatrix> {
        match kind {
            FeatureKind::Spectrogram => Some(&self.spectrogram),
            FeatureKind::MelSpectrogram => Some(&self.mel_spectrogram),
            FeatureKind::Mfcc => Some(&self.mfcc),
            FeatureKind::Wav2VecLayer(_) => None,
        }
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window: hamming_periodic(FRAME_LEN),
            filterbank: build_mel_filterbank(),
            dct: dct2_ortho_matrix(N_MELS, N_MFCC),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn frame_matrix(&self, values: Array2<f64>) -> FrameMatrix {
        FrameMatrix {
            values,
            frame_shift_s: HOP as f64 / 16_000.0,
            frame_length_s: FRAME_LEN as f64 / 16_000.0,
        }
    }

    /// Linear amplitude spectra, one row of 513 bins per frame.
    pub fn amplitude_spectrogram(&self, u: &AudioUtterance) -> Result<Array2<f64>> {
        let frames = frame_signal(&u.samples, FRAME_LEN, HOP)?;
        let mut out = Array2::<f64>::zeros((frames.len(), N_BINS));
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (frame, mut row) in frames.iter().zip(out.outer_iter_mut()) {
            for (slot, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            buf[FRAME_LEN..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (r, c) in row.iter_mut().zip(&buf[..N_BINS]) {
                *r = c.norm();
            }
        }
        Ok(out)
    }

    pub fn log_spectrogram(&self, u: &AudioUtterance) -> Result<FrameMatrix> {
        let mag = self.amplitude_spectrogram(u)?;
        Ok(self.frame_matrix(mag.mapv(to_db)))
    }

    fn mel_db_from_amplitude(&self, mag: &Array2<f64>) -> Array2<f64> {
        mag.dot(&self.filterbank.weights.t()).mapv(to_db)
    }

    pub fn mel_spectrogram(&self, u: &AudioUtterance) -> Result<FrameMatrix> {
        let mag = self.amplitude_spectrogram(u)?;
        Ok(self.frame_matrix(self.mel_db_from_amplitude(&mag)))
    }

    fn mfcc_from_mel_db(&self, mel_db: &Array2<f64>) -> Result<Array2<f64>> {
        let needed = 2 * DELTA_HALF_WIDTH + 1;
        if mel_db.nrows() < needed {
            return Err(DspError::TooFewFrames {
                frames: mel_db.nrows(),
                needed,
            });
        }
        let statics = mel_db.dot(&self.dct.t());
        let d1 = deltas(&statics, DELTA_HALF_WIDTH);
        let d2 = deltas(&d1, DELTA_HALF_WIDTH);
        Ok(ndarray::concatenate![Axis(1), statics, d1, d2])
    }

    /// 13 static cepstra (DCT-II of the dB mel-spectrogram), then 13 deltas, then 13 double-deltas.
    pub fn mfcc_39(&self, u: &AudioUtterance) -> Result<FrameMatrix> {
        let mag = self.amplitude_spectrogram(u)?;
        let mel_db = self.mel_db_from_amplitude(&mag);
        Ok(self.frame_matrix(self.mfcc_from_mel_db(&mel_db)?))
    }

    /// Computes all three baselines from a single STFT pass.
    pub fn baselines(&self, u: &AudioUtterance) -> Result<BaselineFeatures> {
        let mag = self.amplitude_spectrogram(u)?;
        let mel_db = self.mel_db_from_amplitude(&mag);
        let mfcc = self.mfcc_from_mel_db(&mel_db)?;
        Ok(BaselineFeatures {
            spectrogram: self.frame_matrix(mag.mapv(to_db)),
            mel_spectrogram: self.frame_matrix(mel_db),
            mfcc: self.frame_matrix(mfcc),
        })
    }

    /// Utterance-level vectors for the three baselines, in `FeatureKind::BASELINES` order.
    pub fn baseline_vectors(&self, u: &AudioUtterance) -> Result<[FeatureVector; 3]> {
        let b = self.baselines(u)?;
        Ok([
            time_average(&b.spectrogram, FeatureKind::Spectrogram),
            time_average(&b.mel_spectrogram, FeatureKind::MelSpectrogram),
            time_average(&b.mfcc, FeatureKind::Mfcc),
        ])
    }
}

pub fn log_spectrogram(u: &AudioUtterance) -> Result<FrameMatrix> {
    FeatureExtractor::new().log_spectrogram(u)
}

pub fn mel_spectrogram(u: &AudioUtterance) -> Result<FrameMatrix> {
    FeatureExtractor::new().mel_spectrogram(u)
}

pub fn mfcc_39(u: &AudioUtterance) -> Result<FrameMatrix> {
    FeatureExtractor::new().mfcc_39(u)
}

/// Arithmetic mean over frames.
pub fn time_average(m: &FrameMatrix, kind: FeatureKind) -> FeatureVector {
    let mean: Array1<f64> = m
        .values
        .mean_axis(Axis(0))
        .expect("frame matrix has at least one frame");
    FeatureVector {
        values: mean.to_vec(),
        kind,
    }
}
