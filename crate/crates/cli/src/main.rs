use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltsens_cli::{CliError, Format, Options, Outcome, Scenario};

/// Long-horizon utility sensitivity to risk tolerance.
#[derive(Debug, Parser)]
#[command(name = "ltsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenpair, remainder and p_T per horizon, with the HS identity check.
    Decompose(RunArgs),
    /// Convergence of (1/T) ∂ν ln p_T to -∂λ/∂ν.
    Sensitivity(RunArgs),
    /// ∂λ/∂ν for the four state models over ν and k grids.
    Compare(RunArgs),
    /// Invariant suite; JSON report by default.
    Validate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML, or JSON with a .json extension).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps per unit of horizon.
    #[arg(long)]
    steps: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, hide = true, default_value_t = 0.0, allow_negative_numbers = true)]
    perturb_lambda: f64,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("LTSENS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("LTSENS_THREADS must be a positive integer (got '{v}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    configure_threads()?;
    let (args, command): (&RunArgs, fn(&Scenario, &Options) -> Result<Outcome, CliError>) = match &cli.command {
        Command::Decompose(a) => (a, ltsens_cli::decompose),
        Command::Sensitivity(a) => (a, ltsens_cli::sensitivity),
        Command::Compare(a) => (a, ltsens_cli::compare),
        Command::Validate(a) => (a, ltsens_cli::validate),
    };
    let mut scenario = Scenario::load(&args.scenario)?;
    let run = &mut scenario.run;
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(p) = args.paths {
        run.n_paths = p;
    }
    if let Some(s) = args.steps {
        run.steps_per_unit_time = s;
    }
    if args.out.is_some() {
        run.out = args.out.clone();
    }
    let by_extension = run.out.as_ref().and_then(|p| match p.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "json" => Some(Format::Json),
        "csv" => Some(Format::Csv),
        _ => None,
    });
    let default_format = match cli.command {
        Command::Validate(_) => Format::Json,
        _ => Format::Csv,
    };
    let format = args.format.or(run.format).or(by_extension).unwrap_or(default_format);
    let out = run.out.clone();

    let opts = Options {
        perturb_lambda: args.perturb_lambda,
    };
    let outcome = command(&scenario, &opts)?;
    match out {
        Some(path) => {
            let file = File::create(&path).map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            outcome.table.write(&mut w, format)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            outcome.table.write(&mut w, format)?;
            w.flush()?;
        }
    }
    for note in &outcome.notes {
        eprintln!("{note}");
    }
    Ok(outcome.status.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
