use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convnn::harness::{
    bench_csv, bench_report, cmd_bench, cmd_equiv, cmd_train, cmd_verify, exit_code, BenchSpec,
    ConfigFile, EquivSpec, Outcome, TrainSpec,
};
use convnn::Result;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "convnn", about = "Verify, compare, train and benchmark the ConvNN operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the property suites.
    Verify {
        /// Run a single suite.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Write attention and convolution equivalence reports as JSON lines.
    Equiv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write metrics, summary and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// FLOP estimates and median forward times over a sweep.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Verify { filter } => cmd_verify(filter.as_deref(), &mut io::stdout().lock()),
        Command::Equiv { config, out } => {
            let spec = EquivSpec::from_config(&ConfigFile::load(config)?)?;
            let mut buf = Vec::new();
            let outcome = cmd_equiv(&spec, &mut buf)?;
            fs::write(&out, &buf)?;
            let records = buf.iter().filter(|&&b| b == b'\n').count();
            println!("{records} record(s) written to {}", out.display());
            Ok(outcome)
        }
        Command::Train { config, out } => {
            let spec = TrainSpec::from_config(&ConfigFile::load(config)?)?;
            let (_, s) = cmd_train(&spec, &out)?;
            println!(
                "seed {} epochs {}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}, {:.1}s",
                s.seed,
                s.epochs,
                s.final_train_loss,
                s.final_train_accuracy,
                s.final_test_loss,
                s.final_test_accuracy,
                s.wall_seconds
            );
            Ok(Outcome::Success)
        }
        Command::Bench { config, out } => {
            let spec = BenchSpec::from_config(&ConfigFile::load(config)?)?;
            let records = cmd_bench(&spec)?;
            fs::write(&out, bench_csv(&records)?)?;
            print!("{}", bench_report(&records));
            Ok(Outcome::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = run(cli.command);
    if let Err(e) = &result {
        let _ = writeln!(io::stderr(), "error: {e}");
    }
    ExitCode::from(exit_code(&result))
}
