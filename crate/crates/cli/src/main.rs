//! `camsig`: build corpora, train, analyze images for splices, evaluate,
//! and probe learned features.

mod cache;
mod commands;
mod config;
mod manifest;
mod run;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;

/// Bad invocation: unknown flag, malformed value, inconsistent options.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "camsig",
    version,
    about = "Camera-metadata embeddings and splice forensics"
)]
struct Cli {
    /// TOML file of config keys (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key; repeatable. Every key is also accepted as
    /// `--key value`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Root under which run directories are created.
    #[arg(long, global = true, default_value = "runs", env = "CAMSIG_RUNS")]
    runs: PathBuf,

    /// Write into exactly this directory instead of a new timestamped one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Embedding cache location (default: `<runs>/cache`).
    #[arg(long, global = true, env = "CAMSIG_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true, env = "CAMSIG_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-camera corpus (and optional composites).
    SynthCorpus,
    /// Scan a directory of images and sidecars into a manifest.
    BuildCorpus { dir: PathBuf },
    /// Train the dual encoder on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from this checkpoint's weights, optimizer and step.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score, localize and render splice maps for an image or directory.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Localization and detection metrics over a manifest with masks.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "analysis")]
        checkpoint: Option<PathBuf>,
        /// Use the maps of an earlier `analyze` run instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        analysis: Option<PathBuf>,
    },
    /// Radial-distortion regression-by-classification probe.
    DistortionBench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-tag linear probes on frozen image features.
    ProbeExif {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn verb(&self) -> &'static str {
        match self {
            Command::SynthCorpus => "synth-corpus",
            Command::BuildCorpus { .. } => "build-corpus",
            Command::Train { .. } => "train",
            Command::Analyze { .. } => "analyze",
            Command::Evaluate { .. } => "evaluate",
            Command::DistortionBench { .. } => "distortion-bench",
            Command::ProbeExif { .. } => "probe-exif",
        }
    }
}

/// Rewrites `--some-key v` / `--some-key=v` into `--set some_key=v` for
/// every config key, so flags mirror the config file.
fn expand_config_flags(args: Vec<OsString>) -> Vec<OsString> {
    let keys: BTreeSet<String> = Config::keys();
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            out.push(a);
            continue;
        };
        let (name, inline) = match s.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (s, None),
        };
        let key = name.replace('-', "_");
        if !keys.contains(&key) {
            out.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => Some(v),
            None => it.next().and_then(|v| v.into_string().ok()),
        };
        out.push("--set".into());
        out.push(format!("{key}={}", value.unwrap_or_default()).into());
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<camsig_core::Error>() {
            return match e {
                camsig_core::Error::InvalidArgument(_) => 1,
                camsig_core::Error::NonFinite(_) => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<image::ImageError>()
        {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse_from(expand_config_flags(std::env::args_os().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            anyhow::bail!(UsageError("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = Config::load(cli.config.as_deref(), &cli.set)?;
    let dir = run::RunDir::create(&cli.runs, cli.run_dir.as_deref(), cli.command.verb(), &cfg)?;
    let cache = cache::EmbeddingCache::new(
        cli.cache_dir.unwrap_or_else(|| cli.runs.join("cache")),
        cfg.use_cache,
    );
    let ctx = commands::Context {
        cfg: &cfg,
        dir: &dir,
        cache: &cache,
    };
    let started = std::time::Instant::now();
    match &cli.command {
        Command::SynthCorpus => commands::synth_corpus(&ctx),
        Command::BuildCorpus { dir } => commands::build_corpus(&ctx, dir),
        Command::Train { manifest, resume } => commands::train(&ctx, manifest, resume.as_deref()),
        Command::Analyze { checkpoint, input } => commands::analyze(&ctx, checkpoint, input),
        Command::Evaluate {
            manifest,
            checkpoint,
            analysis,
        } => commands::evaluate(&ctx, manifest, checkpoint.as_deref(), analysis.as_deref()),
        Command::DistortionBench {
            manifest,
            checkpoint,
        } => commands::distortion_bench(&ctx, manifest, checkpoint),
        Command::ProbeExif {
            manifest,
            checkpoint,
        } => commands::probe_exif(&ctx, manifest, checkpoint),
    }?;
    dir.finish(started.elapsed())?;
    println!("{}", dir.path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(args: &[&str]) -> Vec<String> {
        expand_config_flags(args.iter().map(OsString::from).collect())
            .into_iter()
            .map(|a| a.into_string().unwrap())
            .collect()
    }

    #[test]
    fn config_flags_become_overrides() {
        assert_eq!(
            expand(&[
                "camsig",
                "train",
                "--epochs",
                "2",
                "--patch-side=16",
                "--manifest",
                "m.json"
            ]),
            [
                "camsig",
                "train",
                "--set",
                "epochs=2",
                "--set",
                "patch_side=16",
                "--manifest",
                "m.json"
            ]
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&anyhow::anyhow!(UsageError("x".into()))), 1);
        assert_eq!(
            exit_code(&anyhow::Error::from(camsig_core::Error::Data("x".into())).context("c")),
            2
        );
        assert_eq!(
            exit_code(&anyhow::Error::from(std::io::Error::other("x"))),
            2
        );
        assert_eq!(exit_code(&anyhow::anyhow!("bug")), 3);
    }
}
