use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mammopos_cli::commands;
use mammopos_cli::config::{PipelineConfig, PredictorMode};
use mammopos_cli::CliError;
use mammopos_core::bbdetect::ChestWallRule;
use mammopos_core::decision::UnitMode;
use mammopos_core::phantom::{PhantomSpec, PAIRS_FILE};
use mammopos_core::view::Side;
use mammopos_predictor::checkpoint::load_model;

#[derive(Parser)]
#[command(name = "mammopos", version, about = "Mammogram positioning quality control")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labelled synthetic dataset.
    GenPhantoms {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Square image side in pixels.
        #[arg(long)]
        size: Option<u32>,
    },
    /// Train the endpoint regressor on a manifest of MLO image/annotation pairs.
    Train {
        /// Manifest file, or a dataset directory containing one.
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to write; history goes beside it.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        validation_fraction: Option<f64>,
        #[arg(long)]
        no_augment: bool,
    },
    /// Assess a study directory (or a directory of studies) and write reports.
    Assess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Score reports against a phantom dataset's labels.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also score this model's endpoints on the dataset's MLOs.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Re-render a text report from its JSON sidecar.
    Report {
        #[arg(long)]
        sidecar: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipelineFlags {
    #[arg(long, value_enum)]
    predictor: Option<PredictorMode>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Compare PNL lengths in millimetres with this threshold.
    #[arg(long, conflicts_with = "threshold_px")]
    threshold_mm: Option<f64>,
    /// Compare PNL lengths in pixels with this threshold.
    #[arg(long)]
    threshold_px: Option<f64>,
    #[arg(long)]
    bb_distance_threshold: Option<f64>,
    /// Chest-wall edge of CC images: auto, left or right.
    #[arg(long)]
    chest_wall: Option<String>,
}

impl PipelineFlags {
    fn apply(self, cfg: &mut PipelineConfig) -> Result<(), CliError> {
        if let Some(p) = self.predictor {
            cfg.predictor = p;
        }
        if let Some(m) = self.model {
            cfg.model = Some(m);
        }
        if let Some(t) = self.threshold_mm {
            cfg.decision.diff_threshold_mm = t;
            cfg.decision.unit_mode = UnitMode::Physical;
        }
        if let Some(t) = self.threshold_px {
            cfg.decision.unit_mode = UnitMode::Pixel { threshold_px: t };
        }
        if let Some(t) = self.bb_distance_threshold {
            cfg.decision.bb_distance_threshold = t;
        }
        if let Some(rule) = self.chest_wall {
            cfg.chest_wall = match rule.as_str() {
                "auto" => ChestWallRule::Auto,
                side => ChestWallRule::Fixed(side.parse::<Side>().map_err(|e| CliError::Config(e.to_string()))?),
            };
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenPhantoms { n, seed, out, size } => {
            let mut spec = PhantomSpec { seed, ..PhantomSpec::default() };
            if let Some(s) = size {
                spec.spacing_mm_per_px *= f64::from(spec.width) / f64::from(s);
                spec.width = s;
                spec.height = s;
            }
            commands::gen_phantoms(&spec, n, &out)?;
        }
        Command::Train { manifest, model, epochs, learning_rate, batch_size, seed, validation_fraction, no_augment } => {
            let t = &mut cfg.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.seed = seed.unwrap_or(t.seed);
            t.validation_fraction = validation_fraction.unwrap_or(t.validation_fraction);
            t.augment &= !no_augment;
            cfg.validate()?;
            let manifest = if manifest.is_dir() { manifest.join(PAIRS_FILE) } else { manifest };
            let (_, history) = commands::train_model(&manifest, &cfg.train, &model)?;
            let best = history.best();
            println!("best epoch {} (validation loss {:?}); model written to {}", best.epoch, best.val_loss, model.display());
        }
        Command::Assess { input, out, pipeline } => {
            pipeline.apply(&mut cfg)?;
            let decisions = commands::assess(&input, &out, &cfg)?;
            println!("{} report(s) written to {}", decisions.len(), out.display());
        }
        Command::Eval { dataset, reports, out, model } => {
            cfg.validate()?;
            let model = model.map(|m| load_model(&m, None)).transpose()?;
            let summary = commands::evaluate(&dataset, &reports, &out, &cfg.bb, model.as_ref())?;
            print!("{}", summary.to_text());
        }
        Command::Report { sidecar, out } => {
            let text = commands::rerender(&sidecar)?;
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
