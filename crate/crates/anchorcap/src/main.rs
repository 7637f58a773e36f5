use std::path::PathBuf;
use std::process::ExitCode;

use anchorcap::commands::{self, ExportFormat};
use anchorcap::{CliError, Config};
use anchorcap_core::motion_prior::PriorKind;
use clap::{Parser, Subcommand, ValueEnum};

/// Estimate body motion and camera trajectories from multi-view 2D keypoints.
#[derive(Debug, Parser)]
#[command(name = "anchorcap", version)]
struct Cli {
    /// Seed for every random stream; overrides seeds from files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file, layered over the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for chunk optimisation (0 = one per core).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Override a config value, e.g. `--set weights.w_m=0.02`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Pca,
    Vae,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Ply,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene and its ground truth.
    Synth {
        /// Scene-spec TOML; the `[scene]` config section when omitted.
        spec: Option<PathBuf>,
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Fit a motion prior to a synthetic window corpus.
    TrainPrior {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long)]
        latent: Option<usize>,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Estimate body and cameras for a scene.
    Fit {
        scene: PathBuf,
        #[arg(long, value_name = "FILE")]
        prior: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
        /// Optimisation log CSV; defaults to `<out>.log.csv`.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Compare a result with ground truth.
    Eval {
        result: PathBuf,
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Write skeleton points and camera frusta as PLY or CSV.
    Export {
        result: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::load(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.command {
        Command::Synth { spec, out, frames } => {
            if let Some(spec) = spec {
                config.scene = commands::read_scene_spec(&spec)?;
                if let Some(seed) = cli.seed {
                    config.scene.seed = seed;
                }
            }
            if let Some(frames) = frames {
                config.scene.frames = frames;
            }
            commands::synth(&config, &out, cli.verbose).map(|_| ())
        }
        Command::TrainPrior { kind, windows, latent, out } => {
            if let Some(kind) = kind {
                config.prior.kind = match kind {
                    KindArg::Pca => PriorKind::Pca,
                    KindArg::Vae => PriorKind::Vae,
                };
            }
            if let Some(w) = windows {
                config.prior.windows = w;
            }
            if let Some(l) = latent {
                config.prior.latent_dim = l;
            }
            commands::train_prior(&config, &out, cli.verbose)
        }
        Command::Fit { scene, prior, out, log } => {
            let log = log.unwrap_or_else(|| commands::default_log_path(&out));
            commands::fit(&config, &scene, &prior, &out, &log, cli.threads, cli.verbose)
        }
        Command::Eval { result, truth, out } => commands::eval(&config, &result, &truth, &out, cli.verbose),
        Command::Export { result, out, format } => {
            let format = format.map(|f| match f {
                FormatArg::Ply => ExportFormat::Ply,
                FormatArg::Csv => ExportFormat::Csv,
            });
            commands::export(&config, &result, &out, format, cli.verbose)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
