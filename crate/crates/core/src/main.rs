use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stem::checkpoint::Checkpoint;
use stem::config::RunConfig;
use stem::data::Split;
use stem::eval::{Distance, Statistic};
use stem::pipeline::{self, PanelFile, SelectMethod};
use stem::{Error, Result};

// Training and sampling allocate many short-lived multi-megabyte buffers,
// which the system allocator serves poorly.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Conditional diffusion for spot-level gene expression from histology
/// embeddings.
///
/// Exit status: 0 success, 2 malformed input or configuration, 3 gene
/// selection failure, 4 numeric failure, 5 gene panel mismatch, 6 prediction
/// and ground truth do not align, 1 anything else.
#[derive(Parser)]
#[command(name = "stem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand accepts.
#[derive(Args)]
struct Common {
    /// JSON run configuration merged over its profile (`desk` unless it names
    /// another). Read by train and sample.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=3e-4`. Read by
    /// train and sample.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed; replaces the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known conditional statistics.
    Synth {
        /// Synthetic spec JSON.
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Choose a gene panel from the training spots; writes panel.json.
    GeneSelect {
        #[arg(long)]
        dataset: PathBuf,
        /// hmhvg or hvg.
        #[arg(long, default_value = "hmhvg")]
        method: SelectMethod,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the denoiser; writes ckpt.bin and train.log.
    Train {
        /// Dataset directory (`paths.dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// panel.json from gene-select (`paths.panel`).
        #[arg(long)]
        panel: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample predictions for every spot of a split; writes pred.csv.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Chains per spot (`infer.n_samples`).
        #[arg(long)]
        n: Option<usize>,
        /// mean, median or mode (`infer.statistic`).
        #[arg(long)]
        statistic: Option<Statistic>,
        /// Use the last iterate instead of the averaged weights.
        #[arg(long)]
        raw: bool,
        /// Also write every draw to samples.bin.
        #[arg(long)]
        keep_samples: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score a pred.csv; writes report.json and variation_curve.csv.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Gene counts for the PCC-k summaries.
        #[arg(long, value_delimiter = ',', default_value = "10,50,200")]
        k: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Nearest-neighbour retrieval predictions for the test split.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Neighbours averaged per test spot.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        distance: Distance,
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, common } => {
            let data = pipeline::cmd_synth(&spec, &out_dir(&common)?, common.seed.unwrap_or(0))?;
            log::info!("wrote {} spots", data.dataset.len());
        }
        Command::GeneSelect {
            dataset,
            method,
            k,
            common,
        } => {
            let panel = pipeline::cmd_gene_select(&dataset, method, k, &out_dir(&common)?)?;
            log::info!("selected {} genes by {method}", panel.len());
        }
        Command::Train { dataset, panel, common } => {
            let mut run = RunConfig::load(common.config.as_deref(), &common.sets)?;
            if let Some(seed) = common.seed {
                run.train.seed = seed;
            }
            if dataset.is_some() {
                run.paths.dataset = dataset;
            }
            if panel.is_some() {
                run.paths.panel = panel;
            }
            if common.out.is_some() {
                run.paths.out = common.out;
            }
            let artifacts = pipeline::cmd_train(&run)?;
            if let Some(last) = artifacts.losses.last() {
                log::info!("finished {} steps, last loss {last:.5}", artifacts.losses.len());
            }
        }
        Command::Sample {
            checkpoint,
            dataset,
            split,
            n,
            statistic,
            raw,
            keep_samples,
            common,
        } => {
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let doc = common.config.as_deref().map(RunConfig::read_document).transpose()?;
            let mut infer = ck.run.with_overrides(doc, &common.sets)?.infer;
            if let Some(n) = n {
                infer.n_samples = n;
            }
            if let Some(s) = statistic {
                infer.statistic = s;
            }
            if raw {
                infer.use_ema = false;
            }
            if let Some(seed) = common.seed {
                infer.seed = seed;
            }
            let pred = pipeline::cmd_sample(&ck, &dataset, split, &infer, &out_dir(&common)?, keep_samples)?;
            log::info!("predicted {} spots", pred.spot_ids.len());
        }
        Command::Eval {
            pred,
            dataset,
            split,
            k,
            common,
        } => {
            let report = pipeline::cmd_eval(&pred, &dataset, split, &k, &out_dir(&common)?)?;
            log::info!("mae {:.4} mse {:.4} rvd {:.4}", report.mae, report.mse, report.rvd);
        }
        Command::Baseline {
            dataset,
            panel,
            k,
            distance,
            common,
        } => {
            let panel = panel.as_deref().map(PanelFile::read).transpose()?;
            pipeline::cmd_baseline(&dataset, panel.as_ref(), k, distance, &out_dir(&common)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
