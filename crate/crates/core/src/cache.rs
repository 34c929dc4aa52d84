//! `FEATCACHE1` utterance-level feature cache.
//!
//! Layout: the 10-byte magic, then records of
//! `u16 id_len, id bytes, u16 tag_len, tag bytes, u32 D, D x f64`, all little-endian.
//! One file per feature kind; records are written sorted by utterance id.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use thiserror::Error;

use crate::dsp::FeatureKind;

pub const MAGIC: &[u8; 10] = b"FEATCACHE1";
pub const EXTENSION: &str = "featcache";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{0}: not a feature cache file")]
    BadMagic(PathBuf),
    #[error("{path}: truncated record {index}")]
    Truncated { path: PathBuf, index: usize },
    #[error("{path}: record `{utterance_id}` has kind `{found}`, expected `{expected}`")]
    KindMismatch {
        path: PathBuf,
        utterance_id: String,
        expected: String,
        found: String,
    },
    #[error("{path}: record `{utterance_id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        path: PathBuf,
        utterance_id: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: malformed record {index}: {reason}")]
    Malformed {
        path: PathBuf,
        index: usize,
        reason: String,
    },
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: io::Error },
}

pub type Result<T> = std::result::Result<T, CacheError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub utterance_id: String,
    pub kind_tag: String,
    pub values: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        cause: source,
    }
}

pub fn encode_records<'a>(
    w: &mut impl Write,
    records: impl IntoIterator<Item = (&'a str, &'a str, &'a [f64])>,
) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for (id, tag, values) in records {
        for s in [id, tag] {
            let len = u16::try_from(s.len()).map_err(|_| {
                io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "string longer than 65535 bytes",
                )
            })?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        let d = u32::try_from(values.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many values"))?;
        w.write_all(&d.to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on a clean end of input before the first byte.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn decode_records(r: &mut impl Read, path: &Path) -> Result<Vec<CacheRecord>> {
    let mut magic = [0u8; 10];
    match read_full(r, &mut magic) {
        Ok(true) if &magic == MAGIC => {}
        Ok(_) => return Err(CacheError::BadMagic(path.to_path_buf())),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(CacheError::BadMagic(path.to_path_buf()))
        }
        Err(e) => return Err(io_err(path)(e)),
    }
    let mut records = Vec::new();
    loop {
        let index = records.len();
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => CacheError::Truncated {
                path: path.to_path_buf(),
                index,
            },
            _ => io_err(path)(e),
        };
        let mut len = [0u8; 2];
        if !read_full(r, &mut len).map_err(truncated)? {
            break;
        }
        let mut strings = Vec::with_capacity(2);
        for first in [true, false] {
            if !first {
                r.read_exact(&mut len).map_err(truncated)?;
            }
            let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let s = String::from_utf8(bytes).map_err(|_| CacheError::Malformed {
                path: path.to_path_buf(),
                index,
                reason: "string is not UTF-8".into(),
            })?;
            strings.push(s);
        }
        let mut d = [0u8; 4];
        r.read_exact(&mut d).map_err(truncated)?;
        let d = u32::from_le_bytes(d) as usize;
        let mut payload = vec![0u8; d * 8];
        r.read_exact(&mut payload).map_err(truncated)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let kind_tag = strings.pop().expect("two strings");
        let utterance_id = strings.pop().expect("two strings");
        records.push(CacheRecord {
            utterance_id,
            kind_tag,
            values,
        });
    }
    Ok(records)
}

pub fn read_cache_file(path: &Path) -> Result<Vec<CacheRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    decode_records(&mut BufReader::new(file), path)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_cache_file(
    path: &Path,
    kind: FeatureKind,
    entries: &BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension(format!("{EXTENSION}.tmp"));
    let tag = kind.tag();
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        encode_records(
            &mut w,
            entries
                .iter()
                .map(|(id, v)| (id.as_str(), tag.as_str(), v.as_slice())),
        )?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Loaded contents of one kind's cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedKind {
    pub entries: BTreeMap<String, Vec<f64>>,
    pub modified: SystemTime,
}

impl CachedKind {
    /// An entry is usable when none of its sources changed after the cache was written.
    pub fn fresh_entry(&self, utterance_id: &str, sources: &[&Path]) -> Option<&Vec<f64>> {
        let values = self.entries.get(utterance_id)?;
        let fresh = sources.iter().all(|p| {
            fs::metadata(p)
                .and_then(|m| m.modified())
                .map(|t| t <= self.modified)
                .unwrap_or(false)
        });
        fresh.then_some(values)
    }
}

/// Directory of per-kind cache files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCache {
    pub dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, kind: FeatureKind) -> PathBuf {
        self.dir.join(format!("{}.{EXTENSION}", kind.tag()))
    }

    /// `Ok(None)` when no cache file exists for the kind.
    pub fn load(&self, kind: FeatureKind) -> Result<Option<CachedKind>> {
        let path = self.path_for(kind);
        let modified = match fs::metadata(&path) {
            Ok(m) => m.modified().map_err(io_err(&path))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut entries = BTreeMap::new();
        for rec in read_cache_file(&path)? {
            if rec.kind_tag != kind.tag() {
                return Err(CacheError::KindMismatch {
                    path,
                    utterance_id: rec.utterance_id,
                    expected: kind.tag(),
                    found: rec.kind_tag,
                });
            }
            if rec.values.len() != kind.dim() {
                return Err(CacheError::DimensionMismatch {
                    path,
                    utterance_id: rec.utterance_id,
                    expected: kind.dim(),
                    found: rec.values.len(),
                });
            }
            entries.insert(rec.utterance_id, rec.values);
        }
        Ok(Some(CachedKind { entries, modified }))
    }

    pub fn store(&self, kind: FeatureKind, entries: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        write_cache_file(&self.path_for(kind), kind, entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path().join("c"));
        let mut entries = BTreeMap::new();
        entries.insert(
            "u2".to_string(),
            (0..39).map(|i| i as f64 * -0.1).collect::<Vec<_>>(),
        );
        entries.insert("u1".to_string(), vec![f64::MIN_POSITIVE; 39]);
        cache.store(FeatureKind::Mfcc, &entries).unwrap();
        let loaded = cache.load(FeatureKind::Mfcc).unwrap().unwrap();
        assert_eq!(loaded.entries, entries);
        assert!(cache.load(FeatureKind::Spectrogram).unwrap().is_none());

        let records = read_cache_file(&cache.path_for(FeatureKind::Mfcc)).unwrap();
        assert_eq!(records[0].utterance_id, "u1");
        assert_eq!(records[1].kind_tag, "mfcc");
        let len = fs::metadata(cache.path_for(FeatureKind::Mfcc))
            .unwrap()
            .len();
        assert_eq!(len as usize, 10 + 2 * (2 + 2 + 2 + 4 + 4 + 39 * 8));
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("x");
        assert!(matches!(
            decode_records(&mut &b"FEATCACHE2"[..], p),
            Err(CacheError::BadMagic(_))
        ));
        assert!(matches!(
            decode_records(&mut &b"FEAT"[..], p),
            Err(CacheError::BadMagic(_))
        ));
        assert!(decode_records(&mut &MAGIC[..], p).unwrap().is_empty());

        let mut buf = Vec::new();
        encode_records(&mut buf, [("a", "mfcc", &[1.0, 2.0][..])]).unwrap();
        buf.pop();
        assert!(matches!(
            decode_records(&mut buf.as_slice(), p),
            Err(CacheError::Truncated { index: 0, .. })
        ));
    }

    #[test]
    fn rejects_wrong_kind_or_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let mut entries = BTreeMap::new();
        entries.insert("u".to_string(), vec![0.0; 13]);
        write_cache_file(
            &cache.path_for(FeatureKind::Mfcc),
            FeatureKind::Mfcc,
            &entries,
        )
        .unwrap();
        assert!(matches!(
            cache.load(FeatureKind::Mfcc),
            Err(CacheError::DimensionMismatch { .. })
        ));
        entries.insert("u".to_string(), vec![0.0; 39]);
        write_cache_file(
            &cache.path_for(FeatureKind::Spectrogram),
            FeatureKind::Mfcc,
            &entries,
        )
        .unwrap();
        assert!(matches!(
            cache.load(FeatureKind::Spectrogram),
            Err(CacheError::KindMismatch { .. })
        ));
    }

    #[test]
    fn freshness_follows_source_mtime() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.wav");
        fs::write(&src, b"x").unwrap();
        let old = SystemTime::UNIX_EPOCH + std::time::Duration::from_secs(1_000);
        File::options()
            .write(true)
            .open(&src)
            .unwrap()
            .set_modified(old)
            .unwrap();
        let mut entries = BTreeMap::new();
        entries.insert("a".to_string(), vec![1.0]);
        let cached = CachedKind {
            entries,
            modified: old + std::time::Duration::from_secs(5),
        };
        assert!(cached.fresh_entry("a", &[&src]).is_some());
        assert!(cached.fresh_entry("b", &[&src]).is_none());
        File::options()
            .write(true)
            .open(&src)
            .unwrap()
            .set_modified(old + std::time::Duration::from_secs(10))
            .unwrap();
        assert!(cached.fresh_entry("a", &[&src]).is_none());
        assert!(cached
            .fresh_entry("a", &[&dir.path().join("missing")])
            .is_none());
    }
}
