//! `jdr`: run residual networks on JPEG coefficients from the command line.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Failure;

#[derive(Parser, Debug)]
#[command(name = "jdr", version, about = "Residual network inference in the JPEG transform domain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Quantization table: `ones`, `luma`, `chroma`, `q<1..100>`, or a file of
    /// 64 zigzag-ordered integers. Defaults to the weight file's table, else `ones`.
    #[arg(long)]
    quant: Option<String>,
    /// ReLu frequency budget, 1..=15. Defaults to the weight file's budget, else 15.
    #[arg(long)]
    budget: Option<usize>,
    /// Seed for generated weights, inputs and blocks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare spatial and JPEG-domain logits of a random (or given) model.
    Equiv {
        #[command(flatten)]
        common: Common,
        /// Number of random inputs.
        #[arg(long, default_value_t = 100)]
        batch: usize,
        /// Spatial weights to use instead of random ones.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Sweep ReLu budgets 1..=15 and report mean RMSE of ASM and APX.
    ReluBench {
        #[command(flatten)]
        common: Common,
        /// Number of generated blocks.
        #[arg(long, default_value_t = 100_000)]
        blocks: usize,
        /// Write the table as CSV to this path.
        #[arg(long)]
        out: Option<String>,
    },
    /// Print logits and the predicted class for each input file.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Weight file, spatial or JPEG domain. Random weights from the seed when absent.
        #[arg(long)]
        weights: Option<String>,
        /// Use the APX ReLu instead of ASM.
        #[arg(long)]
        apx: bool,
        /// JPEG, PGM or PPM files.
        #[arg(required = true)]
        inputs: Vec<String>,
    },
    /// Encode a PGM/PPM file and dump the rounded coefficients.
    Encode {
        #[command(flatten)]
        common: Common,
        /// Subtract 128 from every pixel before the transform.
        #[arg(long)]
        level_shift: bool,
        /// Convert PPM input to YCbCr planes.
        #[arg(long)]
        ycbcr: bool,
        #[arg(long)]
        out: String,
        input: String,
    },
    /// Time JPEG-domain against spatial inference on identical weights.
    Throughput {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Spatial weights to use instead of random ones.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Convert spatial weights into a JPEG-domain container with precomputed maps.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: String,
        #[arg(long)]
        out: String,
    },
    /// Write a fresh spatial weight file.
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: String,
        /// Zero every weight; the fully connected bias becomes 0, 1, 2, ...
        #[arg(long)]
        zero: bool,
        #[arg(long, default_value_t = 1)]
        input_channels: usize,
        /// Channels of the three residual blocks.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        channels: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Input normalization mean and scale: `x = (pixel - mean) / scale`.
        #[arg(long, num_args = 2, value_names = ["MEAN", "SCALE"])]
        normalize: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Equiv { common, batch, weights } => commands::equiv(&common, batch, weights.as_deref()),
        Command::ReluBench { common, blocks, out } => commands::relu_bench(&common, blocks, out.as_deref()),
        Command::Infer { common, weights, apx, inputs } => commands::infer(&common, weights.as_deref(), apx, &inputs),
        Command::Encode { common, level_shift, ycbcr, out, input } => {
            commands::encode(&common, level_shift, ycbcr, &input, &out)
        }
        Command::Throughput { common, batch, reps, weights } => {
            commands::throughput(&common, batch, reps, weights.as_deref())
        }
        Command::Convert { common, weights, out } => commands::convert(&common, &weights, &out),
        Command::Init { common, out, zero, input_channels, channels, classes, normalize } => {
            commands::init(&common, &out, zero, input_channels, &channels, classes, normalize.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("jdr: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
