//! Run configuration: JSON file merged with command-line flags (flags win).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dysbench_core::dsp::FeatureKind;
use dysbench_core::eval::Protocol;
use serde::{Deserialize, Serialize};

pub const CACHE_DIR_ENV: &str = "DYSBENCH_CACHE_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "dysbench-out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(untagged)]
enum KindsField {
    #[default]
    Missing,
    One(String),
    Many(Vec<String>),
}

/// Contents of a `--config` file; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest_path: Option<PathBuf>,
    #[serde(default)]
    feature_kinds: KindsField,
    pub protocol: Option<Protocol>,
    pub exclusions: Option<Vec<String>>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub cache: Option<bool>,
}

impl FileConfig {
    /// Relative paths are taken relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest_path, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn kinds(&self) -> Result<Option<Vec<FeatureKind>>> {
        match &self.feature_kinds {
            KindsField::Missing => Ok(None),
            KindsField::One(s) => parse_kinds(s).map(Some),
            KindsField::Many(v) => parse_kind_list(v.iter().map(String::as_str)).map(Some),
        }
    }
}

/// Command-line values; `None` / empty means "not given".
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub manifest: Option<PathBuf>,
    pub kinds: Option<String>,
    pub protocol: Option<Protocol>,
    pub exclude: Vec<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub no_cache: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest_path: Option<PathBuf>,
    /// Canonical order, no duplicates.
    pub feature_kinds: Vec<FeatureKind>,
    pub protocol: Protocol,
    pub exclusions: Vec<String>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub cache: bool,
    pub cache_dir: PathBuf,
}

/// Fields that determine report contents; worker count and locations are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub manifest_path: String,
    pub protocol: Protocol,
    pub feature_kinds: Vec<FeatureKind>,
    pub exclusions: Vec<String>,
    pub svm_c: f64,
    pub smo_tolerance: f64,
}

impl RunConfig {
    pub fn manifest(&self) -> Result<&Path> {
        match &self.manifest_path {
            Some(p) => Ok(p),
            None => {
                bail!("no manifest given (use --manifest or `manifest_path` in the config file)")
            }
        }
    }

    pub fn protocol_dir(&self) -> PathBuf {
        self.output_dir.join(self.protocol.as_str())
    }
}

pub fn parse_kinds(s: &str) -> Result<Vec<FeatureKind>> {
    parse_kind_list(s.split(',').map(str::trim).filter(|p| !p.is_empty()))
}

fn parse_kind_list<'a>(parts: impl Iterator<Item = &'a str>) -> Result<Vec<FeatureKind>> {
    let mut kinds = Vec::new();
    for p in parts {
        if p == "all" {
            kinds.extend(FeatureKind::all());
        } else {
            kinds.push(p.parse::<FeatureKind>().map_err(anyhow::Error::msg)?);
        }
    }
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

/// Merges file values, flag values and the cache-directory environment value.
pub fn resolve(
    file: Option<FileConfig>,
    flags: &FlagValues,
    env_cache_dir: Option<PathBuf>,
    default_kinds: &[FeatureKind],
) -> Result<RunConfig> {
    let file = file.unwrap_or_default();
    let feature_kinds = match &flags.kinds {
        Some(s) => parse_kinds(s)?,
        None => file.kinds()?.unwrap_or_else(|| default_kinds.to_vec()),
    };
    if feature_kinds.is_empty() {
        bail!("no feature kinds requested (use --kinds, e.g. `mfcc,w2v_1` or `all`)");
    }
    let workers = flags.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        bail!("workers must be at least 1");
    }
    let output_dir = flags
        .out
        .clone()
        .or(file.output_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let cache_dir = env_cache_dir.unwrap_or_else(|| output_dir.join("cache"));
    Ok(RunConfig {
        manifest_path: flags.manifest.clone().or(file.manifest_path),
        feature_kinds,
        protocol: flags.protocol.or(file.protocol).unwrap_or(Protocol::Detect),
        exclusions: if flags.exclude.is_empty() {
            file.exclusions.unwrap_or_default()
        } else {
            flags.exclude.clone()
        },
        output_dir,
        workers,
        cache: !flags.no_cache && file.cache.unwrap_or(true),
        cache_dir,
    })
}
