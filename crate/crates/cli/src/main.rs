//! `ladder`: train and evaluate ladder networks on hyperspectral cubes.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ladder",
    version,
    about = "Semi-supervised hyperspectral classification with ladder networks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Config file path or preset name (fc_pavia, conv_pavia, synthetic).
    #[arg(long, global = true, value_name = "PATH|PRESET")]
    pub config: Option<String>,
    /// Root for run directories.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Training seed; for sweep and table1, run only this seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Validate and print the resolved config without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Override any config key, e.g. `--set train.ladder.noise_std=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory holding dataset files named in the config.
    #[arg(long, global = true, env = "LADDER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a headerless raw dump into an HSICUBE1 file.
    Convert(commands::ConvertArgs),
    /// Draw the labeled / unlabeled / test split and write it as CSV.
    Split(commands::SplitArgs),
    /// Train one model.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on its test split.
    Eval(commands::EvalArgs),
    /// Run the config's sweep over one axis and several seeds.
    Sweep(commands::SweepArgs),
    /// Run the benchmark protocol for the shipped Pavia configs.
    Table1(commands::Table1Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let res = match &cli.command {
        Command::Convert(a) => commands::convert(g, a),
        Command::Split(a) => commands::split(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Sweep(a) => commands::sweep(g, a),
        Command::Table1(a) => commands::table1(g, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code as u8)
        }
    }
}
