use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rhflow::config::{load_config_with, RunConfig};
use rhflow::harness::{exit_code, report, run_scenario, Check};
use rhflow::verify::{verify, write_verify, Suite};
use rhflow::Error;

#[derive(Parser)]
#[command(name = "rhflow", version, about = "Harmonic-Ricci flow on surfaces with boundary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flow a scenario and write snapshots, trace.csv and identities.txt.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the verification suites and write verify.txt and verify.json.
    Verify {
        config: PathBuf,
        #[arg(long, default_value = "all")]
        suite: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize a run or verify output directory.
    Report { dir: PathBuf },
}

/// Flags that replace `[run]` keys of the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    dt: Option<String>,
    /// Grid as NXxNY, e.g. 65x100.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// hold or reharmonize.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory (default: $RHFLOW_OUT, else ./rhflow-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        for (k, val) in [("dt", &self.dt), ("grid", &self.grid), ("alpha", &self.alpha), ("mode", &self.mode)] {
            if let Some(x) = val {
                v.push((k, x.clone()));
            }
        }
        v
    }

    fn load(&self, path: &PathBuf) -> Result<RunConfig, Error> {
        let mut cfg = load_config_with(path, &self.pairs())?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{}", c.line());
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Simulate { config, overrides } => {
            let cfg = overrides.load(&config)?;
            let checks = run_scenario(&cfg)?;
            print_checks(&checks);
            println!("output in {}", cfg.out.display());
            Ok(exit_code(&checks))
        }
        Command::Verify { config, suite, overrides } => {
            let suite: Suite = suite.parse()?;
            let cfg = overrides.load(&config)?;
            let rep = verify(&cfg, suite)?;
            write_verify(&cfg, &rep)?;
            print_checks(&rep.checks);
            println!("output in {}", cfg.out.display());
            Ok(exit_code(&rep.checks))
        }
        Command::Report { dir } => {
            let (text, checks) = report(&dir)?;
            print!("{text}");
            Ok(exit_code(&checks))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version are not errors
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
