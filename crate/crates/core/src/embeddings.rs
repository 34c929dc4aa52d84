//! Layer-wise frame embeddings stored in the `W2V2EMB1` file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "W2V2EMB1"
//! 8       4     u32 n_layers (13)
//! 12      4     u32 dim (768)
//! 16      4     u32 n_frames T
//! 20      4     u32 reserved (0)
//! 24      ...   13 layers, each T x 768 f32, frame-major
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::dsp::{FeatureKind, FeatureVector, FrameMatrix, EMBEDDING_DIM, N_LAYERS};

pub const MAGIC: &[u8; 8] = b"W2V2EMB1";
pub const HEADER_LEN: usize = 24;
/// Embedding frames are 20 ms apart.
pub const FRAME_SHIFT_S: f64 = 0.020;
/// Samples per embedding frame at 16 kHz.
pub const SAMPLES_PER_FRAME: usize = 320;
/// Allowed slack between the stored frame count and `n_samples / 320`.
pub const FRAME_COUNT_SLACK: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: bad magic, not a W2V2EMB1 file")]
    BadMagic { path: PathBuf },
    #[error("{path}: header mismatch: {reason}")]
    HeaderMismatch { path: PathBuf, reason: String },
    #[error("{path}: payload truncated, expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: PathBuf, extra: u64 },
    #[error("{path}: non-finite value in layer {layer}")]
    NonFinite { path: PathBuf, layer: usize },
    #[error("invalid embedding set: {0}")]
    InvalidSet(String),
    #[error("layer index {0} outside 1..=13")]
    InvalidLayer(u8),
    #[error("i/o failure on {path}: {cause}")]
    IoFailure { path: PathBuf, cause: io::Error },
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Selects one of the 13 layers, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSelector(u8);

impl LayerSelector {
    pub fn new(n: u8) -> Result<Self> {
        if (1..=N_LAYERS as u8).contains(&n) {
            Ok(Self(n))
        } else {
            Err(EmbeddingError::InvalidLayer(n))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// All 13 layers of one utterance, each T x 768, stored at file precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    layers: Vec<Array2<f32>>,
}

impl EmbeddingSet {
    pub fn new(layers: Vec<Array2<f32>>) -> Result<Self> {
        if layers.len() != N_LAYERS {
            return Err(EmbeddingError::InvalidSet(format!(
                "{} layers, expected {N_LAYERS}",
                layers.len()
            )));
        }
        let t = layers[0].nrows();
        if t == 0 {
            return Err(EmbeddingError::InvalidSet("zero frames".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.dim() != (t, EMBEDDING_DIM) {
                return Err(EmbeddingError::InvalidSet(format!(
                    "layer {} has shape {:?}, expected ({t}, {EMBEDDING_DIM})",
                    i + 1,
                    l.dim()
                )));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::InvalidSet(format!(
                    "layer {} has non-finite values",
                    i + 1
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn n_frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn layer(&self, sel: LayerSelector) -> &Array2<f32> {
        &self.layers[sel.0 as usize - 1]
    }

    /// Layer widened to f64 as a frame matrix with the 20 ms frame rate.
    pub fn layer_frames(&self, sel: LayerSelector) -> FrameMatrix {
        FrameMatrix {
            values: self.layer(sel).mapv(f64::from),
            frame_shift_s: FRAME_SHIFT_S,
            frame_length_s: FRAME_SHIFT_S,
        }
    }

    pub fn layers(&self) -> &[Array2<f32>] {
        &self.layers
    }
}

/// Frame-mean of one layer as a 768-d feature vector.
pub fn pool_layer(set: &EmbeddingSet, sel: LayerSelector) -> FeatureVector {
    let values = set
        .layer(sel)
        .mapv(f64::from)
        .mean_axis(Axis(0))
        .expect("embedding set has at least one frame")
        .to_vec();
    FeatureVector {
        values,
        kind: FeatureKind::Wav2VecLayer(sel.0),
    }
}

fn u32_at(bytes: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap())
}

/// Header fields of a W2V2EMB1 file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub n_layers: u32,
    pub dim: u32,
    pub n_frames: u32,
    pub reserved: u32,
}

impl EmbeddingHeader {
    pub fn payload_len(&self) -> u64 {
        u64::from(self.n_layers) * u64::from(self.n_frames) * u64::from(self.dim) * 4
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<EmbeddingHeader> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(EmbeddingError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::TruncatedPayload {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let header = EmbeddingHeader {
        n_layers: u32_at(bytes, 8),
        dim: u32_at(bytes, 12),
        n_frames: u32_at(bytes, 16),
        reserved: u32_at(bytes, 20),
    };
    let mismatch = |reason: String| EmbeddingError::HeaderMismatch {
        path: path.to_path_buf(),
        reason,
    };
    if header.n_layers as usize != N_LAYERS {
        return Err(mismatch(format!(
            "n_layers = {}, expected {N_LAYERS}",
            header.n_layers
        )));
    }
    if header.dim as usize != EMBEDDING_DIM {
        return Err(mismatch(format!(
            "dim = {}, expected {EMBEDDING_DIM}",
            header.dim
        )));
    }
    if header.n_frames == 0 {
        return Err(mismatch("n_frames = 0".into()));
    }
    if header.reserved != 0 {
        return Err(mismatch(format!(
            "reserved = {}, expected 0",
            header.reserved
        )));
    }
    Ok(header)
}

/// Reads and validates only the 24-byte header plus the file length.
pub fn read_embedding_header(path: impl AsRef<Path>) -> Result<EmbeddingHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let io_err = |e| EmbeddingError::IoFailure {
        path: path.to_path_buf(),
        cause: e,
    };
    let mut file = fs::File::open(path).map_err(io_err)?;
    let len = file.metadata().map_err(io_err)?.len();
    let mut buf = Vec::with_capacity(HEADER_LEN);
    Read::by_ref(&mut file)
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(io_err)?;
    let header = parse_header(path, &buf)?;
    check_length(path, &header, len)?;
    Ok(header)
}

fn check_length(path: &Path, header: &EmbeddingHeader, len: u64) -> Result<()> {
    let expected = HEADER_LEN as u64 + header.payload_len();
    if len < expected {
        return Err(EmbeddingError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: len,
        });
    }
    if len > expected {
        return Err(EmbeddingError::TrailingBytes {
            path: path.to_path_buf(),
            extra: len - expected,
        });
    }
    Ok(())
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| EmbeddingError::IoFailure {
        path: path.to_path_buf(),
        cause: e,
    })?;
    let header = parse_header(path, &bytes)?;
    check_length(path, &header, bytes.len() as u64)?;

    let t = header.n_frames as usize;
    let per_layer = t * EMBEDDING_DIM;
    let payload = &bytes[HEADER_LEN..];
    let mut layers = Vec::with_capacity(N_LAYERS);
    for (i, chunk) in payload.chunks_exact(per_layer * 4).enumerate() {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                path: path.to_path_buf(),
                layer: i + 1,
            });
        }
        layers.push(Array2::from_shape_vec((t, EMBEDDING_DIM), values).unwrap());
    }
    Ok(EmbeddingSet { layers })
}

pub fn write_embedding_file(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| EmbeddingError::IoFailure {
        path: path.to_path_buf(),
        cause: e,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let write_all = |w: &mut BufWriter<fs::File>| -> io::Result<()> {
        w.write_all(MAGIC)?;
        for field in [
            N_LAYERS as u32,
            EMBEDDING_DIM as u32,
            set.n_frames() as u32,
            0,
        ] {
            w.write_all(&field.to_le_bytes())?;
        }
        for layer in &set.layers {
            for v in layer.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write_all(&mut w).map_err(io_err)
}

/// Checks `|T - n_samples/320| <= 2`; returns a description when violated.
pub fn frame_count_warning(n_frames: usize, n_samples: usize) -> Option<String> {
    let expected = n_samples as f64 / SAMPLES_PER_FRAME as f64;
    let gap = (n_frames as f64 - expected).abs();
    (gap > FRAME_COUNT_SLACK).then(|| {
        format!("{n_frames} frames for {n_samples} samples (expected about {expected:.1})")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_set(t: usize) -> EmbeddingSet {
        let layers = (0..N_LAYERS)
            .map(|l| {
                Array2::from_shape_fn((t, EMBEDDING_DIM), |(f, d)| {
                    (l as f32) * 0.5 + (f as f32) * 0.25 - (d as f32) * 1e-3
                })
            })
            .collect();
        EmbeddingSet::new(layers).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let set = ramp_set(49);
        let (a, b) = (dir.path().join("a.emb"), dir.path().join("b.emb"));
        write_embedding_file(&set, &a).unwrap();
        write_embedding_file(&set, &b).unwrap();
        let bytes = fs::read(&a).unwrap();
        assert_eq!(bytes, fs::read(&b).unwrap());
        assert_eq!(bytes.len(), 24 + 13 * 49 * 768 * 4);
        let back = read_embedding_file(&a).unwrap();
        assert_eq!(back.n_frames(), 49);
        assert_eq!(back.layers().len(), 13);
        for (x, y) in back.layers().iter().zip(set.layers()) {
            assert!(x
                .iter()
                .zip(y.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let h = read_embedding_header(&a).unwrap();
        assert_eq!(
            (h.n_layers, h.dim, h.n_frames, h.reserved),
            (13, 768, 49, 0)
        );
    }

    #[test]
    fn header_and_payload_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        write_embedding_file(&ramp_set(2), &p).unwrap();
        let good = fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&512u32.to_le_bytes());
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::HeaderMismatch { .. })
        ));

        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&12u32.to_le_bytes());
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::HeaderMismatch { .. })
        ));

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::BadMagic { .. })
        ));

        fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::TruncatedPayload { .. })
        ));
        assert!(matches!(
            read_embedding_header(&p),
            Err(EmbeddingError::TruncatedPayload { .. })
        ));

        fs::write(&p, &good[..10]).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::TruncatedPayload { .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::TrailingBytes { extra: 1, .. })
        ));

        let mut bad = good.clone();
        bad[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_embedding_file(&p),
            Err(EmbeddingError::NonFinite { layer: 1, .. })
        ));
    }

    #[test]
    fn empty_and_misshapen_sets_are_rejected() {
        let zero = vec![Array2::<f32>::zeros((0, EMBEDDING_DIM)); N_LAYERS];
        assert!(EmbeddingSet::new(zero).is_err());
        let short = vec![Array2::<f32>::zeros((3, EMBEDDING_DIM)); 12];
        assert!(EmbeddingSet::new(short).is_err());
        let mut ragged = vec![Array2::<f32>::zeros((3, EMBEDDING_DIM)); N_LAYERS];
        ragged[5] = Array2::zeros((4, EMBEDDING_DIM));
        assert!(EmbeddingSet::new(ragged).is_err());
    }

    #[test]
    fn pooling() {
        let set = ramp_set(1);
        let sel = LayerSelector::new(4).unwrap();
        let v = pool_layer(&set, sel);
        assert_eq!(v.kind, FeatureKind::Wav2VecLayer(4));
        assert_eq!(v.values.len(), 768);
        let frame: Vec<f64> = set
            .layer(sel)
            .row(0)
            .iter()
            .map(|&x| f64::from(x))
            .collect();
        assert_eq!(v.values, frame);

        let mut layers = vec![Array2::<f32>::zeros((7, EMBEDDING_DIM)); N_LAYERS];
        layers[12].fill(0.5);
        let set = EmbeddingSet::new(layers).unwrap();
        let v = pool_layer(&set, LayerSelector::new(13).unwrap());
        assert!(v.values.iter().all(|&x| x == 0.5));
        assert!(LayerSelector::new(0).is_err());
        assert!(LayerSelector::new(14).is_err());
    }

    #[test]
    fn frame_count_check() {
        assert!(frame_count_warning(49, 16000).is_none());
        assert!(frame_count_warning(52, 16000).is_none());
        assert!(frame_count_warning(53, 16000).is_some());
        assert!(frame_count_warning(10, 16000).is_some());
    }

    proptest! {
        #[test]
        fn pooling_ignores_frame_order(seed in 0u64..1000, t in 1usize..6) {
            let base = Array2::from_shape_fn((t, EMBEDDING_DIM), |(f, d)| {
                (((f as u64 * 31 + d as u64 * 7 + seed) % 97) as f32) / 8.0
            });
            let mut rev = base.clone();
            rev.invert_axis(Axis(0));
            let mk = |m: &Array2<f32>| EmbeddingSet::new(vec![m.clone(); N_LAYERS]).unwrap();
            let sel = LayerSelector::new(1).unwrap();
            let a = pool_layer(&mk(&base), sel).values;
            let b = pool_layer(&mk(&rev), sel).values;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
