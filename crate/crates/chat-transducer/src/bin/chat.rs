//! Thin CLI over the library: every subcommand reads one key=value config
//! file, applies flag overrides (flags win), and calls the corresponding
//! harness function. Exit code 0 on success, nonzero with a categorized
//! error otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chat_transducer::harness::{self, GenConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "chat",
    about = "Chunk-wise attention transducer and RNN-T baseline: data, training, decoding, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key=value config file ('#' comments). Missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Config overrides as key=value (repeatable); flags win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> chat_transducer::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.overrides {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                chat_transducer::Error::Config(format!("--set expects key=value, got '{pair}'"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic data file at the config's data path.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Utterance count.
        #[arg(long, default_value_t = 64)]
        n_utts: usize,
        /// Frames per token.
        #[arg(long, default_value_t = 4)]
        repeat: usize,
        /// Gaussian feature noise (sigma).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Feature dimension.
        #[arg(long, default_value_t = 8)]
        input_dim: usize,
        /// Minimum tokens per utterance.
        #[arg(long, default_value_t = 3)]
        min_tokens: usize,
        /// Maximum tokens per utterance.
        #[arg(long, default_value_t = 8)]
        max_tokens: usize,
    },
    /// SGD training; writes best.ckpt and train_log.csv under out_dir.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy-decode the data set; prints WER, writes latency.csv.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (default: <out_dir>/best.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decode and export alignment dumps with attention frame heat.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also emit raw head-summed attention rows.
        #[arg(long)]
        raw: bool,
    },
    /// Chunk-size sweep; writes bench.csv and memory.svg.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated chunk sizes to sweep.
        #[arg(long, value_delimiter = ',', default_value = "6,12,24")]
        chunk_sizes: Vec<usize>,
        /// Measured training steps per point (one warm-up step extra).
        #[arg(long, default_value_t = 3)]
        train_steps: usize,
    },
    /// Finite-difference check of every parameter's gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Test hook: corrupt the named parameter's analytic gradient; the
        /// check must then fail naming it.
        #[arg(long)]
        corrupt: Option<String>,
    },
}

fn run(cli: Cli) -> chat_transducer::Result<()> {
    match cli.command {
        Command::GenData {
            common,
            n_utts,
            repeat,
            noise,
            input_dim,
            min_tokens,
            max_tokens,
        } => {
            let cfg = common.load()?;
            let gen = GenConfig {
                n_utts,
                vocab_size: cfg.vocab_size,
                repeat,
                noise,
                seed: cfg.seed,
                input_dim,
                min_tokens,
                max_tokens,
            };
            harness::cmd_gen_data(&cfg, &gen)
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            harness::cmd_train(&cfg).map(|_| ())
        }
        Command::Decode { common, checkpoint } => {
            let cfg = common.load()?;
            harness::cmd_decode(&cfg, checkpoint.as_deref()).map(|_| ())
        }
        Command::Align {
            common,
            checkpoint,
            raw,
        } => {
            let cfg = common.load()?;
            harness::cmd_align(&cfg, checkpoint.as_deref(), raw)
        }
        Command::Bench {
            common,
            chunk_sizes,
            train_steps,
        } => {
            let cfg = common.load()?;
            harness::cmd_bench(&cfg, &chunk_sizes, train_steps).map(|_| ())
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = common.load()?;
            harness::cmd_gradcheck(&cfg, corrupt.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}
