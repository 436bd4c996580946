use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;

use atomtab::bench::{emit_csv, run_bench, write_csv, BenchConfig, BenchError, BenchMode};

/// Multi-threaded substring-interning benchmark for the atom table.
#[derive(Debug, Parser)]
#[command(name = "atomtab-bench", version)]
struct Args {
    /// Thread counts, comma separated (e.g. 1,2,4).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,

    /// Number of distinct characters in the subject string.
    #[arg(long, default_value_t = 1000)]
    alphabet: usize,

    #[arg(long, value_enum, default_value_t = BenchMode::Preallocated)]
    mode: BenchMode,

    /// Repetitions per thread count.
    #[arg(long, default_value_t = 3)]
    reps: usize,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Destroy-phase stall in stall-probe mode, in milliseconds.
    #[arg(long, default_value_t = 200)]
    stall_ms: u64,
}

fn run(args: Args) -> Result<(), BenchError> {
    let cfg = BenchConfig {
        threads: args.threads,
        alphabet: args.alphabet,
        mode: args.mode,
        reps: args.reps,
        seed: args.seed,
        out: args.out,
        stall: Duration::from_millis(args.stall_ms),
    };
    let report = run_bench(&cfg)?;
    match &cfg.out {
        Some(path) => emit_csv(&report.rows, path)?,
        None => {
            let stdout = std::io::stdout();
            write_csv(&report.rows, stdout.lock())?;
        }
    }
    let mut err = std::io::stderr().lock();
    for audit in &report.audits {
        writeln!(err, "{audit}")?;
    }
    for stall in &report.stalls {
        writeln!(err, "{stall}")?;
    }
    report.verify()
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("atomtab-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
