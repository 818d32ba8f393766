use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmfg_cli::accept::{report_line, run_all, run_selected};
use mmfg_cli::commands;
use mmfg_cli::config::{init_threads, Settings};
use mmfg_cli::output::write_json;

#[derive(Parser)]
#[command(name = "mmfg", version, about = "Major-minor mean field games on the torus")]
struct Cli {
    /// `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (same as `--set out=DIR`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one equilibrium.
    Solve,
    /// Solve over the horizon by windowed continuation.
    Continue,
    /// Solve the linearized system along `linearize.dx0`.
    Linearize,
    /// Master-equation residuals at the middle level.
    Residual,
    /// Multi-start sweep over `sweep.sigma0`.
    SweepSigma,
    /// Continuation sweep over `sweep.T`.
    #[command(name = "sweep-T")]
    SweepT,
    /// Decay-rate fits for the transport and conservation equations.
    Decay,
    /// Acceptance suite; writes `manifest.json`, exits nonzero on failure.
    Accept {
        /// Run only these criteria (1-12).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn run(cli: Cli) -> mmfg_core::Result<bool> {
    init_threads()?;
    let mut overrides = cli.set;
    if let Some(out) = cli.out {
        overrides.push(format!("out={}", out.display()));
    }
    let s = Settings::load(cli.config.as_deref(), &overrides)?;
    let files = match cli.command {
        Command::Solve => commands::solve(&s)?,
        Command::Continue => commands::continuation(&s)?,
        Command::Linearize => commands::linearize(&s)?,
        Command::Residual => commands::residual(&s)?,
        Command::SweepSigma => commands::sweep_sigma(&s)?,
        Command::SweepT => commands::sweep_t(&s)?,
        Command::Decay => commands::decay(&s)?,
        Command::Accept { only } => {
            let print = |c: &_| println!("{}", report_line(c));
            let (manifest, path) = if only.is_empty() {
                run_all(&s, print)?
            } else {
                let m = run_selected(&only, &s, print);
                let p = write_json(&s.out, "manifest.json", &m)?;
                (m, p)
            };
            println!("manifest: {}", path.display());
            return Ok(manifest.all_pass);
        }
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
