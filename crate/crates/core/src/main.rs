use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use errcalc::expr::parse;
use errcalc::harness::{parse_config_with_seed, report, run_sensitivity, run_suite_with_workers, Verdict};
use errcalc::Error;

#[derive(Parser)]
#[command(name = "errcalc", version, about = "Error-propagation calculus checks and sensitivity summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite of named checks and write one report per check.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        suite: String,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Propagate the error structure through a quantity.
    Sens {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quantity: String,
        /// Input functionals; the quantity is then written in x1..xp.
        #[arg(long, value_delimiter = ',')]
        inputs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parsed expression and its gradient at a point.
    Parse {
        #[arg(long)]
        expr: String,
        /// Comma-separated coordinates; zeros when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Vec<f64>,
    },
}

/// Exit status 2: the input could not be read, parsed or validated.
fn input_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<errcalc::harness::RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_with_seed(&text, seed)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Check { config, suite, seed, out, workers, format } => {
            let cfg = match load(&config, seed) {
                Ok(c) => c,
                Err(e) => return input_error(e),
            };
            let reports = match run_suite_with_workers(&cfg, &suite, workers) {
                Ok(r) => r,
                Err(e) => return input_error(e),
            };
            let text = match format {
                Format::Json => report::to_json(&reports),
                Format::Csv => report::to_csv(&reports),
            };
            let text = match text {
                Ok(t) => t,
                Err(e) => return input_error(e),
            };
            if let Err(e) = emit(out.as_ref(), &text) {
                return input_error(e);
            }
            let failed: Vec<&str> = reports.iter().filter(|r| r.verdict == Verdict::Fail).map(|r| r.name.as_str()).collect();
            eprintln!("{} checks, {} failed", reports.len(), failed.len());
            for name in &failed {
                eprintln!("  FAIL {name}");
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Sens { config, quantity, inputs, out } => {
            let cfg = match load(&config, None) {
                Ok(c) => c,
                Err(e) => return input_error(e),
            };
            match run_sensitivity(&cfg, &quantity, &inputs).and_then(|r| emit(out.as_ref(), &r.to_json())) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => input_error(e),
            }
        }
        Command::Parse { expr, at } => {
            let e = match parse(&expr) {
                Ok(e) => e,
                Err(e) => return input_error(e),
            };
            let dim = e.max_var().map_or(0, |v| v + 1).max(at.len());
            let point = if at.is_empty() { vec![0.0; dim] } else { at };
            println!("ast: {}", e.to_sexpr());
            println!("expr: {e}");
            match e.eval_grad(&point) {
                Ok((v, g)) => {
                    println!("at: {point:?}");
                    println!("value: {v}");
                    println!("gradient: {g:?}");
                    ExitCode::SUCCESS
                }
                Err(err) => input_error(err),
            }
        }
    }
}
