//! `strutnet` — strut detection workbench for cross-sectional OCT images.
//!
//! Subcommands cover the full workflow: `synth` writes a reproducible
//! phantom dataset, `train-local` and `train-global` produce checkpoints
//! and loss curves, `infer` writes per-image detection CSVs, `eval` scores
//! predictions against ground truth, `ablate` compares the local-only /
//! global-only / combined variants, and `plot` renders overlay images.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! during training.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use strutnet::config::RunConfig;
use strutnet::error::Error;
use strutnet::pipeline::DetectionMode;

mod ops;

#[derive(Parser, Debug)]
#[command(name = "strutnet", version, about = "Stent strut detection in cross-sectional OCT images")]
struct Cli {
    /// Worker threads for parallel synthesis/inference/eval (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Increase logging (-v prints per-item progress).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigOpts {
    /// Flat key = value configuration file (defaults apply for absent keys).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set epochs=20 (repeatable; wins over
    /// the config file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigOpts {
    fn load(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, Error> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                Error::config(format!("--set expects KEY=VALUE, got '{}'", s))
            })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in extra {
            if let Some(v) = v {
                overrides.push((k.to_string(), v.clone()));
            }
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Local,
    Global,
    Combined,
}

impl From<ModeArg> for DetectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Local => DetectionMode::LocalOnly,
            ModeArg::Global => DetectionMode::GlobalOnly,
            ModeArg::Combined => DetectionMode::Combined,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset with known strut locations.
    Synth {
        #[command(flatten)]
        config: ConfigOpts,
        /// Output dataset directory (images/, points/, manifest.txt).
        #[arg(long)]
        out: PathBuf,
        /// Number of samples to generate.
        #[arg(long, default_value_t = 10)]
        count: u64,
        /// First sample index (ids continue a previous run).
        #[arg(long, default_value_t = 0)]
        start_index: u64,
        /// Shorthand for --set rng_seed=<N>.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the patch-based local detector.
    TrainLocal {
        #[command(flatten)]
        config: ConfigOpts,
        /// Training dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Optional validation dataset (enables best-checkpoint selection).
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Output directory for checkpoints and the loss CSV.
        #[arg(long)]
        out: PathBuf,
        /// Shorthand for --set epochs=<N>.
        #[arg(long)]
        epochs: Option<usize>,
        /// Shorthand for --set seed=<N>.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the global refiner and attention discriminator against a
    /// frozen local checkpoint.
    TrainGlobal {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Trained local checkpoint (frozen during this stage).
        #[arg(long)]
        local_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feed an all-zero local channel instead of local-net maps (the
        /// image-only variant used in the component comparison).
        #[arg(long)]
        zero_local: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run detection over a dataset and write per-image CSVs.
    Infer {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        local_ckpt: Option<PathBuf>,
        #[arg(long)]
        global_ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Combined)]
        mode: ModeArg,
        /// Run the local net on whole images instead of tiled patches.
        #[arg(long)]
        full_image: bool,
        /// Also write local/refined heatmaps as 16-bit PNGs.
        #[arg(long)]
        dump_heatmaps: bool,
        /// Shorthand for --set refine_passes=<N>.
        #[arg(long)]
        refine_passes: Option<usize>,
        /// Shorthand for --set threshold=<X>.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a directory of prediction CSVs against dataset ground truth.
    Eval {
        #[command(flatten)]
        config: ConfigOpts,
        /// Dataset directory providing ground-truth points.
        #[arg(long)]
        data: PathBuf,
        /// Directory of `<id>.csv` prediction files.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Where to write metrics.csv / metrics.txt (printed to stdout too).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Method label recorded in the report.
        #[arg(long)]
        method: Option<String>,
        /// Shorthand for --set tolerance=<X>.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Run local-only, global-only and combined detection over a dataset
    /// and emit a comparison table.
    Ablate {
        #[command(flatten)]
        config: ConfigOpts,
        /// Evaluation dataset (held-out synthetic data).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        local_ckpt: PathBuf,
        /// Checkpoint trained with local-map input (refinement variant).
        #[arg(long)]
        global_ckpt: PathBuf,
        /// Checkpoint trained with a zero local channel (image-only variant).
        #[arg(long)]
        global_only_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full_image: bool,
    },
    /// Render overlay images (ground-truth circles, predicted crosses,
    /// match lines).
    Plot {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render at most this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn build_command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |sc| sc.after_help(RunConfig::help_text()));
    }
    cmd
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape { .. } => 1,
        Error::Parse { .. } | Error::Data { .. } | Error::Io { .. } => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let matches = match build_command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", e);
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", e);
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", e);
            return ExitCode::from(1);
        }
    };

    if cli.jobs > 0 {
        // ignore the error if a pool already exists (e.g. under tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }

    match ops::run(cli.command, cli.verbose) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}
