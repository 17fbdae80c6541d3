//! `lab`: run experiment specs and compare their reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wganpca::experiment::{compare_report, resolve_out_dir, run, ExperimentSpec, Report};
use wganpca::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "lab", version, about = "Linear-generator WGAN versus r-PCA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment spec.
    Run {
        spec: PathBuf,
        /// Output directory (default: the spec's `out`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment seed; same as `--override seed=N`.
        #[arg(long)]
        seed: Option<u64>,
        /// Field override as a dot path, e.g. `train.lr=5e-4`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Merge the report.json files of run directories into one table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the merged report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("LAB_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("LAB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() })
}

fn cmd_run(spec_path: &Path, out: Option<&Path>, seed: Option<u64>, mut overrides: Vec<String>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", spec_path.display())))?;
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let spec = ExperimentSpec::from_json(&text, &overrides)?;
    let dir = resolve_out_dir(&spec, out);
    let report = run(&spec, &dir)?;
    print!("{}", report.table());
    println!("wrote {}", dir.display());
    if report.aborted {
        return Err(Failure { code: EXIT_ABORTED, message: "run aborted on non-finite values; partial outputs written".into() });
    }
    Ok(())
}

fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut reports = Vec::with_capacity(dirs.len());
    for d in dirs {
        let path = d.join("report.json");
        let r = Report::read(&path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    let merged = compare_report(&reports).map_err(|e| Failure::config(e.to_string()))?;
    print!("{}", merged.table());
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Failure::from(Error::from(e)))?;
        merged.write(&o.join("report.json"))?;
        println!("wrote {}", o.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run { spec, out, seed, overrides } => cmd_run(&spec, out.as_deref(), seed, overrides),
        Command::Report { dirs, out } => cmd_report(&dirs, out.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
