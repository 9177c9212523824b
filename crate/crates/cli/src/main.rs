//! `ldp-gof`: privatize data, run a single test, tabulate rates and drive
//! radius sweeps.
//!
//! Exit codes: 0 when the null is accepted (or the command succeeded), 1 when
//! `test` rejects, 2 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "ldp-gof", version, about = "Locally private goodness-of-fit tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Privatize newline-delimited category indices and write the records as CSV.
    Privatize(PrivatizeArgs),
    /// Run one test and print the report as JSON (exit 0 accept, 1 reject).
    Test(TestArgs),
    /// Tabulate separation rates and bounds over a grid.
    Rates(RatesArgs),
    /// Estimate empirical separation radii over a grid of experiments.
    Sweep(SweepArgs),
    /// Estimate the constant in the lower bound on the mean of D_n.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ni,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

/// The null distribution, by family or from a file.
#[derive(Debug, Args)]
struct NullArgs {
    /// Null family, e.g. `uniform`, `polynomial:beta=1` or a JSON object.
    #[arg(long, conflicts_with = "p0_file")]
    family: Option<String>,
    /// File of null probabilities separated by commas, spaces or newlines.
    #[arg(long)]
    p0_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    /// Privacy level in (0, 1].
    #[arg(long)]
    alpha: f64,
    /// Target sum of type I and type II errors, in (0, 1).
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
}

#[derive(Debug, Args)]
struct PrivatizeArgs {
    /// File with one category index in [1, d] per line.
    #[arg(long)]
    input: PathBuf,
    /// Alphabet size.
    #[arg(long)]
    d: usize,
    /// Non-interactive or sequentially interactive mechanism.
    #[arg(long, value_enum, default_value = "ni")]
    mode: ModeArg,
    /// Norm in which separation from the null is measured.
    #[arg(long, value_enum, default_value = "l1")]
    norm: NormArg,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[command(flatten)]
    null: NullArgs,
    /// Main set as a comma-separated list of categories, or `auto` to
    /// select it from the null.
    #[arg(long, default_value = "auto")]
    b: String,
    /// Seed for every random draw.
    #[arg(long)]
    seed: u64,
    /// Output CSV (standard output if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// File with one category index in [1, d] per line.
    #[arg(long)]
    data: PathBuf,
    /// Alphabet size (taken from the null when absent).
    #[arg(long)]
    d: Option<usize>,
    /// Non-interactive or sequentially interactive mechanism.
    #[arg(long, value_enum, default_value = "ni")]
    mode: ModeArg,
    /// Norm in which separation from the null is measured.
    #[arg(long, value_enum, default_value = "l1")]
    norm: NormArg,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[command(flatten)]
    null: NullArgs,
    /// Seed for every random draw.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RatesArgs {
    /// JSON grid `{"families": [..], "n": [..], "alpha": [..]}`; the
    /// standard grid when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Level used by the explicit upper bounds.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Output CSV; a manifest is written next to it. Standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON sweep configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; every grid point gets a seed derived from it.
    #[arg(long)]
    seed: u64,
    /// Output CSV; a manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Replications per case (at least 10000).
    #[arg(long, default_value_t = 10_000)]
    m: u64,
    /// Number of random (p, p0) cases.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Seed for every random draw.
    #[arg(long)]
    seed: u64,
    /// Per-case CSV; a manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Privatize(a) => commands::privatize(a),
        Command::Test(a) => commands::test(a),
        Command::Rates(a) => commands::rates(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Calibrate(a) => commands::calibrate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
