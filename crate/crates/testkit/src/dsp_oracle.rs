//! Direct-formula feature computation: naive DFT, scalar mel break-points,
//! explicit DCT sums. Slow and written without sharing code with the library.

use std::f64::consts::PI;

pub const SR: f64 = 16000.0;
pub const WIN: usize = 400;
pub const STEP: usize = 80;
pub const NFFT: usize = 1024;
pub const BINS: usize = NFFT / 2 + 1;
pub const MELS: usize = 80;
pub const CEPS: usize = 13;

fn db(x: f64) -> f64 {
    20.0 * x.max(1e-10).log10()
}

pub fn frames(x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + WIN <= x.len() {
        out.push(x[start..start + WIN].to_vec());
        start += STEP;
    }
    out
}

/// Magnitudes of bins 0..=512 of the Hamming-windowed frame zero-padded to 1024.
pub fn magnitudes(frame: &[f64]) -> Vec<f64> {
    let windowed: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(n, v)| v * (0.54 - 0.46 * (2.0 * PI * n as f64 / WIN as f64).cos()))
        .collect();
    (0..BINS)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in windowed.iter().enumerate() {
                // reduce the phase index exactly before converting to an angle
                let idx = (k * n) % NFFT;
                let ang = 2.0 * PI * idx as f64 / NFFT as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

pub fn slaney_mel(hz: f64) -> f64 {
    let linear = hz * 3.0 / 200.0;
    if hz < 1000.0 {
        linear
    } else {
        15.0 + (hz / 1000.0).ln() * 27.0 / 6.4f64.ln()
    }
}

pub fn slaney_hz(mel: f64) -> f64 {
    if mel < 15.0 {
        mel * 200.0 / 3.0
    } else {
        1000.0 * ((mel - 15.0) * 6.4f64.ln() / 27.0).exp()
    }
}

/// The 82 filter break-points in Hz.
pub fn breakpoints_hz() -> Vec<f64> {
    let top = slaney_mel(SR / 2.0);
    (0..MELS + 2)
        .map(|i| slaney_hz(top * i as f64 / (MELS + 1) as f64))
        .collect()
}

pub fn filterbank() -> Vec<Vec<f64>> {
    let pts = breakpoints_hz();
    (0..MELS)
        .map(|m| {
            let (lo, mid, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            (0..BINS)
                .map(|k| {
                    let f = k as f64 * SR / NFFT as f64;
                    let rise = (f - lo) / (mid - lo);
                    let fall = (hi - f) / (hi - mid);
                    rise.min(fall).max(0.0) * 2.0 / (hi - lo)
                })
                .collect()
        })
        .collect()
}

pub struct OracleFeatures {
    /// T x 513 dB magnitudes.
    pub log_spec: Vec<Vec<f64>>,
    /// T x 80 dB mel energies.
    pub log_mel: Vec<Vec<f64>>,
    /// T x 13 static cepstra.
    pub mfcc: Vec<Vec<f64>>,
}

pub fn dct_ortho(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum();
            s * if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            }
        })
        .collect()
}

/// Regression slope over +-4 frames with clamped indices.
pub fn regression_delta(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = rows.len() as isize;
    let at = |i: isize| &rows[i.clamp(0, t - 1) as usize];
    (0..t)
        .map(|i| {
            (0..rows[0].len())
                .map(|d| {
                    (1..=4)
                        .map(|k| k as f64 * (at(i + k)[d] - at(i - k)[d]))
                        .sum::<f64>()
                        / 60.0
                })
                .collect()
        })
        .collect()
}

pub fn compute(x: &[f64]) -> OracleFeatures {
    let fb = filterbank();
    let mut out = OracleFeatures {
        log_spec: Vec::new(),
        log_mel: Vec::new(),
        mfcc: Vec::new(),
    };
    for frame in frames(x) {
        let mag = magnitudes(&frame);
        let mel: Vec<f64> = fb
            .iter()
            .map(|row| db(row.iter().zip(&mag).map(|(w, m)| w * m).sum()))
            .collect();
        out.mfcc.push(dct_ortho(&mel, CEPS));
        out.log_spec.push(mag.iter().map(|&m| db(m)).collect());
        out.log_mel.push(mel);
    }
    out
}

/// Static cepstra followed by their deltas and double deltas.
pub fn mfcc_39(x: &[f64]) -> Vec<Vec<f64>> {
    let stat = compute(x).mfcc;
    let d1 = regression_delta(&stat);
    let d2 = regression_delta(&d1);
    stat.into_iter()
        .zip(d1)
        .zip(d2)
        .map(|((a, b), c)| a.into_iter().chain(b).chain(c).collect())
        .collect()
}
