mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs that do not fit the checkpoint. Exit 2.
    Usage(String),
    /// Anything that fails while running. Exit 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<dimignn::Error> for CliError {
    fn from(e: dimignn::Error) -> Self {
        match e {
            dimignn::Error::Config { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "dimignn", version, about = "Multivariate forecasting with diverse neighbor selection and multi-scale fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and score it on the test split.
    Train(RunArgs),
    /// Score a checkpoint on the test split of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Forecast the steps after the end of a CSV series.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Long-format CSV covering at least the model's input length.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "predict")]
        out: PathBuf,
    },
    /// Train the full model and its three ablations over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Exit 1 unless the full model's mean MSE is at most both the
        /// similarity-only and the summed-fusion variants.
        #[arg(long)]
        assert_order: bool,
    },
    /// Pick neighbors for every row of a profile CSV.
    SelectNeighbors {
        /// N rows of C numbers; a non-numeric first row is taken as a header.
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.7)]
        lambda: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Dyt,
    Layernorm,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Dmfm,
    Sum,
    Mean,
}

/// Flags shared by the training commands. Each one overrides the same key
/// of `--config`.
#[derive(Args, Default)]
pub struct RunArgs {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Long-format CSV: timestamp, variable id, then attribute columns (target first).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the built-in coupled synthetic series instead of a CSV.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    synth_vars: Option<usize>,
    #[arg(long)]
    synth_attrs: Option<usize>,
    #[arg(long)]
    synth_len: Option<usize>,
    /// Train, validation and test fractions, e.g. 0.7,0.1,0.2.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    train_stride: Option<usize>,
    #[arg(long)]
    val_stride: Option<usize>,
    #[arg(long)]
    input_len: Option<usize>,
    #[arg(long, alias = "horizon")]
    tau: Option<usize>,
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Rank neighbors by similarity alone.
    #[arg(long)]
    no_dnsm: bool,
    #[arg(long)]
    d_fuse: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping; 0 never stops.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds for `ablate`.
    #[arg(long)]
    seeds: Option<String>,
    /// Report metrics in original units instead of normalized ones.
    #[arg(long)]
    denorm: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    /// Defaults, then the config file, then every flag given.
    fn resolve(&self) -> Result<config::RunConfig, CliError> {
        let mut cfg = config::RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let mut flags: Vec<(&str, String)> = Vec::new();
        let mut put = |key, value: Option<String>| {
            if let Some(v) = value {
                flags.push((key, v));
            }
        };
        let text = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("data", text(&self.data));
        put("synthetic", self.synthetic.then(|| "true".into()));
        put("synth_vars", self.synth_vars.map(|v| v.to_string()));
        put("synth_attrs", self.synth_attrs.map(|v| v.to_string()));
        put("synth_len", self.synth_len.map(|v| v.to_string()));
        put("split", self.split.clone());
        put("train_stride", self.train_stride.map(|v| v.to_string()));
        put("val_stride", self.val_stride.map(|v| v.to_string()));
        put("input_len", self.input_len.map(|v| v.to_string()));
        put("horizon", self.tau.map(|v| v.to_string()));
        put("segment_len", self.segment_len.map(|v| v.to_string()));
        put("blocks", self.blocks.map(|v| v.to_string()));
        put("d_hidden", self.d_hidden.map(|v| v.to_string()));
        put("heads", self.heads.map(|v| v.to_string()));
        put("k", self.k.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put(
            "norm",
            self.norm.map(|n| match n {
                NormArg::Dyt => "dyt".into(),
                NormArg::Layernorm => "layernorm".into(),
            }),
        );
        put(
            "fusion",
            self.fusion.map(|f| match f {
                FusionArg::Dmfm => "dmfm".into(),
                FusionArg::Sum => "sum".into(),
                FusionArg::Mean => "mean".into(),
            }),
        );
        put("dnsm", self.no_dnsm.then(|| "false".into()));
        put("d_fuse", self.d_fuse.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("seeds", self.seeds.clone());
        put("denorm", self.denorm.then(|| "true".into()));
        put("out", text(&self.out));
        for (key, value) in flags {
            cfg.set(key, &value)?;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(run) => run.resolve().and_then(|cfg| commands::train(&cfg)),
        Command::Evaluate { checkpoint, run } => run.resolve().and_then(|cfg| commands::evaluate(&cfg, checkpoint)),
        Command::Predict { checkpoint, input, out } => commands::predict(checkpoint, input, out),
        Command::Ablate { run, assert_order } => run.resolve().and_then(|cfg| commands::ablate(&cfg, *assert_order)),
        Command::SelectNeighbors {
            profiles,
            k,
            lambda,
            out,
        } => commands::select_neighbors(profiles, *k, *lambda, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
