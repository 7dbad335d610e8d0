mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use tfrdisc::config::CONFIG_ENV;

/// Time-frequency transforms, discriminators and vocoder metrics.
#[derive(Debug, Parser)]
#[command(name = "tfrdisc", version)]
pub struct Cli {
    /// TOML config file; sections [stft] [cqt] [cwt] [disc] [train] [metrics].
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one transform of a WAV file as a TFR1 file.
    Transform(TransformArgs),
    /// Compare matching WAV files in two directories.
    Metrics(MetricsArgs),
    /// Run the discriminators on a WAV file and summarize their outputs.
    DiscScore(DiscScoreArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Train the toy generator against the selected discriminators.
    TrainToy(TrainToyArgs),
    /// Write the four-clip synthetic training corpus.
    ToyCorpus { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    pub input: PathBuf,
    #[arg(long, value_parser = ["stft", "cqt", "cwt"])]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a log-magnitude heatmap.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Also write a long-form CSV dump.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub n_fft: Option<usize>,
    #[arg(long)]
    pub win_len: Option<usize>,
    /// Frame hop in samples (STFT and CQT).
    #[arg(long)]
    pub hop: Option<usize>,
    /// CQT bins per octave.
    #[arg(long = "B", id = "bins_per_octave")]
    pub bins_per_octave: Option<usize>,
    #[arg(long)]
    pub f1: Option<f64>,
    #[arg(long)]
    pub octaves: Option<usize>,
    #[arg(long)]
    pub max_scale: Option<usize>,
    /// Number of CWT scales (default: max-scale).
    #[arg(long)]
    pub scales: Option<usize>,
    /// cmor, cmorB-C or cgauN.
    #[arg(long)]
    pub basis: Option<String>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub ref_dir: PathBuf,
    pub deg_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-pair JSON reports (default: next to --out).
    #[arg(long)]
    pub json_dir: Option<PathBuf>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiscScoreArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "SCW")]
    pub disc: String,
    /// Parameters under the `disc` prefix; random init from --seed without it.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save the discriminator parameters that were used.
    #[arg(long)]
    pub save_ckpt: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = 8)]
    pub coords: usize,
    /// Only run these checks (repeatable).
    #[arg(long = "only")]
    pub only: Vec<String>,
    /// Corrupt the named check's analytic gradient by 1% (negative control).
    #[arg(long, hide = true)]
    pub fault: Option<String>,
    /// Write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub discs: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status 2: bad flags, config or checkpoint.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<tfrdisc::Error>() {
        Some(tfrdisc::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            error!("--jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
