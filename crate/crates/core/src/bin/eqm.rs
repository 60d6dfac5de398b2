use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eqmeasure::scenario::{compare_runs, run_file, run_scenario, Scenario, ScenarioKind};

/// Exit status: 0 success, 1 error, 2 diagnostics failed.
#[derive(Parser)]
#[command(name = "eqm", version, about = "Equilibrium measure runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run { scenario: PathBuf },
    /// Diff the outputs of two run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Relative drift tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Run the built-in quick checks.
    Selftest {
        /// Output directory; defaults to $EQM_OUTPUT_ROOT/selftest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario } => run_file(&scenario).map(|o| {
            for f in &o.flags {
                println!("{} {}: {}", if f.pass { "PASS" } else { "FAIL" }, f.name, f.detail);
            }
            println!("outputs in {}", o.dir.display());
            o.exit_code()
        }),
        Command::Compare { dir_a, dir_b, tol } => compare_runs(&dir_a, &dir_b, tol).map(|r| {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            if r.flagged {
                2
            } else {
                0
            }
        }),
        Command::Selftest { out } => {
            let s = Scenario {
                kind: ScenarioKind::Selftest,
                seed: 0,
                output: out,
                equilibrium: None,
                diagnostics: None,
                flow: None,
                gas: None,
            };
            let dir = s.output_dir(None);
            run_scenario(&s, &dir, &dir).map(|o| {
                for f in &o.flags {
                    println!("{} {}: {}", if f.pass { "PASS" } else { "FAIL" }, f.name, f.detail);
                }
                o.exit_code()
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
