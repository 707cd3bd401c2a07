use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tssdn_sim::scenario::analysis::{compare, guarantee_checks};
use tssdn_sim::scenario::output::{compare_report, run_report, write_comparison, write_run};
use tssdn_sim::scenario::{load_config, run_scenario, RunOutput, ScenarioConfig};
use tssdn_sim::SimTime;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "tssdn-sim", version, about = "Time-sensitive SDN discrete-event simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its CSV files and report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario end time, e.g. `150ms`.
        #[arg(long)]
        until: Option<SimTime>,
        /// Output directory; defaults to the scenario's `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a managed and an unmanaged scenario and compare them.
    Compare {
        #[arg(long)]
        sdn: PathBuf,
        #[arg(long)]
        nosdn: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario and exit non-zero if a check fails.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        /// Check stream latencies against the analytic bound even if the scenario disables it.
        #[arg(long)]
        guarantee: bool,
    },
}

enum Failure {
    Config(String),
    Check(String),
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    load_config(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn simulate(cfg: &ScenarioConfig) -> Result<RunOutput, Failure> {
    run_scenario(cfg).map_err(|e| Failure::Check(format!("simulation of `{}` failed: {e}", cfg.name)))
}

fn guarantee_failures(cfg: &ScenarioConfig, out: &RunOutput) -> Vec<String> {
    guarantee_checks(cfg, out)
        .into_iter()
        .filter(|(_, o)| !o.passed())
        .map(|(id, o)| match id {
            Some(id) => format!("stream {id}: {o}"),
            None => o.to_string(),
        })
        .collect()
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, until, out } => {
            let mut cfg = load(&scenario)?;
            if let Some(t) = until {
                cfg.run_until = t;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            let result = simulate(&cfg)?;
            write_run(&dir, &cfg, &result).map_err(|e| Failure::Config(e.to_string()))?;
            print!("{}", run_report(&cfg, &result));
            println!("output written to {}", dir.display());
            if cfg.checks.guarantee {
                let failures = guarantee_failures(&cfg, &result);
                if !failures.is_empty() {
                    return Err(Failure::Check(failures.join("\n")));
                }
            }
            Ok(())
        }
        Command::Compare { sdn, nosdn, out } => {
            let sdn_cfg = load(&sdn)?;
            let nosdn_cfg = load(&nosdn)?;
            let a = simulate(&sdn_cfg)?;
            let b = simulate(&nosdn_cfg)?;
            let cmp = compare(&a, &b);
            write_comparison(&out, (&sdn_cfg, &a), (&nosdn_cfg, &b), &cmp).map_err(|e| Failure::Config(e.to_string()))?;
            print!("{}", compare_report(&sdn_cfg, &cmp));
            println!("output written to {}", out.display());
            match cmp.convergence_after_start() {
                Some(t) if t <= sdn_cfg.checks.convergence_bound => Ok(()),
                Some(t) => Err(Failure::Check(format!(
                    "cross traffic converged {} us after its start, bound {} us",
                    t.as_us_f64(),
                    sdn_cfg.checks.convergence_bound.as_us_f64()
                ))),
                None => Err(Failure::Check("cross traffic never converged".to_owned())),
            }
        }
        Command::Check { scenario, guarantee } => {
            let cfg = load(&scenario)?;
            let result = simulate(&cfg)?;
            if !(guarantee || cfg.checks.guarantee) {
                println!("{}: ran to {} us, no checks enabled", cfg.name, cfg.run_until.as_us_f64());
                return Ok(());
            }
            let failures = guarantee_failures(&cfg, &result);
            if failures.is_empty() {
                for (id, o) in guarantee_checks(&cfg, &result) {
                    match id {
                        Some(id) => println!("stream {id}: {o}"),
                        None => println!("{o}"),
                    }
                }
                Ok(())
            } else {
                Err(Failure::Check(failures.join("\n")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}
