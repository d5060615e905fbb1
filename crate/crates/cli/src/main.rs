use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kvwave_cli::config::{self, Kind};
use kvwave_cli::run::run;
use kvwave_cli::CliError;

/// Run a kvwave experiment. Exit status: 0 when every check passes,
/// 2 when a check fails, 1 on usage, configuration or runtime errors.
#[derive(Parser, Debug)]
#[command(name = "kvwave", version)]
struct Args {
    /// Experiment kind.
    kind: Kind,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out` from the config, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override a config entry, e.g. `--set numerics.dt=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn execute(args: Args) -> Result<bool, CliError> {
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let (cfg, echo) = config::load(&args.config, &args.set, args.kind)?;
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run(args.kind, &cfg, echo, &out)?;
    for c in &summary.checks {
        let value = c
            .value
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"));
        println!(
            "{} {} value={value} tol={:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.tol
        );
    }
    println!("wrote {}", out.join("summary.json").display());
    Ok(summary.pass())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
