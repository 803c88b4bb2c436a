use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhe_cli::commands::{self, Trainer};
use dhe_cli::config::{Backend, DatasetKind, ExperimentConfig};
use dhe_cli::CliError;
use dhe_core::approx::{LossKind, DEFAULT_INTERVAL, DEFAULT_SAMPLES};
use dhe_core::engine::Carrier;

/// Distributed logistic-regression style training over leveled homomorphic encryption.
#[derive(Parser)]
#[command(name = "dhe", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit cubic approximations of the loss gradients.
    FitPoly(FitArgs),
    /// Run the distributed schedule in the clear.
    TrainPlain(RunArgs),
    /// Train as one encrypted party refreshed by the key holder.
    TrainEnc(RunArgs),
    /// Train with encrypted workers and a parameter server.
    TrainDist(RunArgs),
    /// Train as one encrypted party on a deep chain with a bootstrap stand-in.
    BaselineCentral(RunArgs),
    /// Time the homomorphic primitives per parameter profile.
    BenchOps(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file applied before any flag.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Extra `key=value` assignment, applied last.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    refresh_interval: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    carrier: Option<Carrier>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self, mode: Trainer) -> Result<ExperimentConfig, CliError> {
        let mut c = mode.defaults();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        if let Some(v) = self.loss {
            c.loss = v;
            c.poly = None;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        take!(workers, iterations, refresh_interval, batch_size, eta, profile, backend, carrier, dataset, data_dir, seed, out);
        if self.depth.is_some() {
            c.depth = self.depth;
        }
        for pair in &self.set {
            c.set_pair(pair)?;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Loss to fit; all three when omitted.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_INTERVAL.0, allow_negative_numbers = true)]
    lo: f64,
    #[arg(long, default_value_t = DEFAULT_INTERVAL.1, allow_negative_numbers = true)]
    hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `poly.csv`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma separated `name[:depth]` list.
    #[arg(long, default_value = "toy,distributed,centralized")]
    profiles: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    let invocation = std::env::args().collect::<Vec<_>>().join(" ");
    let (mode, args) = match cmd {
        Cmd::FitPoly(a) => {
            let losses = a.loss.map_or(LossKind::ALL.to_vec(), |l| vec![l]);
            let rows = commands::fit_poly(&losses, a.degree, a.samples, (a.lo, a.hi), a.seed, a.out.as_deref())?;
            for r in rows {
                println!(
                    "{:<9} poly = {:<44} sup error {:.4} (reference cubic {:.4})",
                    r.loss.to_string(),
                    r.poly.coeff_string(),
                    r.poly.residual,
                    r.reference.residual
                );
            }
            return Ok(());
        }
        Cmd::BenchOps(a) => {
            let profiles = commands::parse_profiles(&a.profiles)?;
            let rows = commands::bench_ops(&profiles, a.reps, a.seed, &a.out)?;
            println!("{:<16} {:>5} {:>3} {:<10} {:>12}", "profile", "N", "L", "op", "mean (us)");
            for r in rows {
                println!("{:<16} {:>5} {:>3} {:<10} {:>12.1}", r.profile, r.degree, r.depth, r.op, r.mean_us);
            }
            println!("wrote {}", a.out.join("bench.csv").display());
            return Ok(());
        }
        Cmd::TrainPlain(a) => (Trainer::Plain, a),
        Cmd::TrainEnc(a) => (Trainer::Enc, a),
        Cmd::TrainDist(a) => (Trainer::Dist, a),
        Cmd::BaselineCentral(a) => (Trainer::Central, a),
    };
    let cfg = args.resolve(mode)?;
    let report = commands::train(mode, &cfg, &invocation)?;
    for line in report.notes.iter().skip(2) {
        println!("{line}");
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
