//! `dysbench` command-line front end.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dysbench_core::dsp::FeatureKind;
use dysbench_core::eval::Protocol;

use config::{FileConfig, FlagValues, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dysbench",
    version,
    about = "Dysarthric speech detection and severity benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute utterance-level features into the cache.
    Features(CommonArgs),
    /// Check embedding files listed in the manifest.
    ValidateEmbeddings(CommonArgs),
    /// Run an evaluation protocol and write reports.
    Eval(CommonArgs),
    /// Rebuild summary CSVs and table from existing report JSON files.
    Report(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated feature kinds (spectrogram, mel_spectrogram, mfcc, w2v_1..w2v_13) or `all`.
    #[arg(long)]
    kinds: Option<String>,
    /// Evaluation protocol: detect or severity.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Speaker ids left out of the severity protocol (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Neither read nor write the feature cache.
    #[arg(long)]
    no_cache: bool,
}

impl CommonArgs {
    fn resolve(
        &self,
        env_cache_dir: Option<PathBuf>,
        default_kinds: &[FeatureKind],
    ) -> anyhow::Result<RunConfig> {
        let file = self.config.as_deref().map(FileConfig::load).transpose()?;
        let flags = FlagValues {
            manifest: self.manifest.clone(),
            kinds: self.kinds.clone(),
            protocol: self.protocol,
            exclude: self.exclude.clone(),
            out: self.out.clone(),
            workers: self.workers,
            no_cache: self.no_cache,
        };
        config::resolve(file, &flags, env_cache_dir, default_kinds)
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(
    args: I,
    env_cache_dir: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let all = FeatureKind::all();
    let result = match &cli.command {
        Command::Features(a) => a
            .resolve(env_cache_dir, &FeatureKind::BASELINES)
            .and_then(|cfg| commands::cmd_features(&cfg, out)),
        Command::ValidateEmbeddings(a) => a
            .resolve(env_cache_dir, &all)
            .and_then(|cfg| commands::cmd_validate_embeddings(&cfg, out)),
        Command::Eval(a) => a
            .resolve(env_cache_dir, &[])
            .and_then(|cfg| commands::cmd_eval(&cfg, out)),
        Command::Report(a) => a
            .resolve(env_cache_dir, &all)
            .and_then(|cfg| commands::cmd_report(&cfg, out)),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}
