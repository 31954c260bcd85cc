use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use cofd_cli::{
    cmd_analyze, cmd_design, cmd_simulate, ensure_dir, load_config, output_dir, render_summary,
    sweep, write_design, CliError, Result,
};

/// Observer-bank fault isolation for over-actuated systems.
#[derive(Debug, Parser)]
#[command(name = "cofd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides COFD_OUT_DIR and `outputs.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design every configured observer bank and check it.
    Design,
    /// Run the scenario and write trace, decision and residual files.
    Simulate,
    /// Re-run the isolation logic on residual files from a previous run.
    Analyze {
        /// Directory holding the residual files; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the scenario over consecutive seeds starting at `sim.seed`.
    Sweep {
        #[arg(long, default_value_t = 8)]
        runs: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config <FILE> is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    let out = output_dir(cli.out.as_deref(), &cfg);
    let say = |s: &str| {
        if !cli.quiet {
            print!("{s}");
        }
    };
    match cli.command {
        Command::Design => {
            let report = cmd_design(&cfg)?;
            ensure_dir(&out)?;
            write_design(&report, &out.join("design.csv"))?;
            say(&report.render());
            if !report.passes() {
                let failed: Vec<String> = report
                    .banks
                    .iter()
                    .flat_map(|b| {
                        b.failures
                            .iter()
                            .map(move |f| format!("{} {:?}: {}", b.label, f.indices, f.error))
                            .chain(b.observers.iter().filter(|o| !o.passes()).map(move |o| {
                                format!("{} {:?}: invariants or rank check", b.label, o.index)
                            }))
                    })
                    .collect();
                return Err(CliError::Design(failed.join("; ")));
            }
        }
        Command::Simulate => {
            let run = cmd_simulate(&cfg, &out)?;
            say(&render_summary(&run.summary));
            say(&format!(
                "wrote {} files to {}\n",
                run.files.len(),
                out.display()
            ));
        }
        Command::Analyze { input } => {
            let input = input.unwrap_or_else(|| out.clone());
            let decisions = cmd_analyze(&cfg, &input, &out)?;
            say(&format!(
                "{} windows replayed, {}\n",
                decisions.len(),
                out.join(&cfg.outputs.decisions).display()
            ));
        }
        Command::Sweep { runs } => {
            let seeds: Vec<u64> = (0..runs).map(|i| cfg.sim.seed + i).collect();
            for (seed, s) in sweep(&cfg, &seeds, &out)? {
                say(&format!("seed {seed}\n{}", render_summary(&s)));
            }
        }
    }
    Ok(())
}

fn init_logging(quiet: bool, verbose: u8) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.quiet, cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
