//! `filmhom` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 config validation,
//! 3 numerical failure, 4 a verified inequality or oracle check failed.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use filmhom::config::RunConfig;

use run::Failure;

#[derive(Parser, Debug)]
#[command(name = "filmhom", version, about = "Thin-film homogenization along arbitrary cutting planes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cell size(s): one value for `cell`/`verify`, the schedule for `homogenize`.
    #[arg(long = "T", global = true, value_delimiter = ',', allow_negative_numbers = true)]
    t: Option<Vec<f64>>,

    /// Almost-period level, overrides `lattice.eta`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    eta: Option<f64>,

    /// Load `A`, row-major and comma separated.
    #[arg(long = "A", global = true, value_delimiter = ',', allow_negative_numbers = true)]
    a: Option<Vec<f64>>,

    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads, overrides `workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Orthonormal frame of the cutting plane and its rationality report.
    Frame,
    /// Enumerate almost periods and estimate the inclusion length.
    AlmostPeriods,
    /// Solve one cell problem.
    Cell,
    /// Estimate the homogenized density over a schedule of cell sizes.
    Homogenize,
    /// Run the inequality and oracle diagnostics.
    Verify,
}

fn load_config(cli: &Cli, command: Command) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut c = RunConfig::from_toml_str(&text).map_err(|e| Failure::Validation(e.to_string()))?;
    apply_overrides(cli, command, &mut c)?;
    c.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(c)
}

fn apply_overrides(cli: &Cli, command: Command, c: &mut RunConfig) -> Result<(), Failure> {
    let missing = |section: &str, flag: &str| Failure::Validation(format!("{flag} needs a [{section}] section"));
    if let Some(eta) = cli.eta {
        c.lattice.as_mut().ok_or_else(|| missing("lattice", "--eta"))?.eta = eta;
    }
    if let Some(ts) = &cli.t {
        match command {
            Command::Homogenize => c.homogenize.as_mut().ok_or_else(|| missing("homogenize", "--T"))?.schedule = ts.clone(),
            _ => {
                if ts.len() != 1 {
                    return Err(Failure::Validation("--T takes a single value for this subcommand".into()));
                }
                c.cell.as_mut().ok_or_else(|| missing("cell", "--T"))?.t = ts[0];
            }
        }
    }
    if let Some(a) = &cli.a {
        match command {
            Command::Homogenize => {
                let h = c.homogenize.as_mut().ok_or_else(|| missing("homogenize", "--A"))?;
                h.a = vec![a.clone()];
                h.a_grid = None;
            }
            _ => c.cell.as_mut().ok_or_else(|| missing("cell", "--A"))?.a = a.clone(),
        }
    }
    if let Some(out) = &cli.out {
        c.output.dir = out.clone();
    }
    if cli.workers.is_some() {
        c.workers = cli.workers;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli, cli.command)?;
    let job = || match cli.command {
        Command::Frame => run::frame(&config),
        Command::AlmostPeriods => run::almost_periods(&config),
        Command::Cell => run::cell(&config),
        Command::Homogenize => run::homogenize(&config),
        Command::Verify => run::verify(&config),
    };
    let report = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Io(format!("cannot start worker pool: {e}")))?
            .install(job),
        None => job(),
    }?;
    report.write(&config.output.dir)?;
    print!("{}", report.summary);
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(report.failures.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("filmhom: {f}");
            ExitCode::from(f.code())
        }
    }
}
