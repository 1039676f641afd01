use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qavatar::environments::{build_toy_pair, toy_report, toy_select_map, ScenarioName};
use qavatar::harness::{
    apply_options, resolve_threads, run_experiment, run_verification, shifted_oracle, ExperimentConfig, OutputFormat,
    RunOptions,
};
use qavatar::mdp::exact_q;
use qavatar::Error;

#[derive(Parser)]
#[command(name = "qavatar", version, about = "Tabular cross-domain RL experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Output directory, replacing the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for the seed fan-out (falls back to QAVATAR_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and seed, writing logs and a summary.
    Run { config: PathBuf },
    /// Run the lemma and bound suites.
    Verify {
        config: PathBuf,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Score the two candidate maps of the 3x3 toy grids.
    Toy,
    /// List the built-in scenarios.
    ListScenarios,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;

fn load(path: &Path, cli: &Cli) -> Result<(ExperimentConfig, usize), Error> {
    let mut config = ExperimentConfig::from_file(path)?;
    let opts = RunOptions {
        threads: cli.threads,
        seed_override: cli.seed_override,
        output_override: cli.out.clone(),
        format_override: cli.format.map(Into::into),
    };
    apply_options(&mut config, &opts);
    Ok((config, resolve_threads(cli.threads)?))
}

fn toy(format: OutputFormat) -> Result<(), Error> {
    let pair = build_toy_pair()?;
    let rows = toy_report(&pair)?;
    let (chosen, _) = toy_select_map(&pair)?;
    let chosen = if chosen == pair.traj_a_map { "A" } else { "B" };
    match format {
        OutputFormat::Json => {
            let body = serde_json::json!({ "rows": rows, "selected": chosen, "reward_scale": pair.target.reward_scale });
            println!("{}", serde_json::to_string_pretty(&body).map_err(|e| Error::Parse(e.to_string()))?);
        }
        OutputFormat::Csv => {
            println!("reward scale {}", pair.target.reward_scale);
            println!("{:<4} {:>14} {:>10} {:>14}", "map", "cd_loss", "nonzero", "cd_loss_paired");
            for r in &rows {
                println!("{:<4} {:>14.9} {:>10} {:>14.9}", r.map, r.cd_loss, r.cd_nonzero, r.cd_loss_paired);
            }
            println!();
            println!("{:<4} {:>10}", "map", "cycle_loss");
            for r in &rows {
                println!("{:<4} {:>10}", r.map, r.cycle_loss);
            }
            println!();
            for r in &rows {
                let res: Vec<String> = r.cd_residuals.iter().map(|v| format!("{v:.6}")).collect();
                println!("residuals {}: {}", r.map, res.join(" "));
            }
            println!("selected map: {chosen}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<u8, Error> = (|| match &cli.command {
        Command::ListScenarios => {
            for s in ScenarioName::ALL {
                println!("{:<26} {}", s.name(), s.description());
            }
            Ok(0)
        }
        Command::Toy => toy(cli.format.map(Into::into).unwrap_or_default()).map(|_| 0),
        Command::Run { config } => {
            let (config, threads) = load(config, &cli)?;
            let summary = run_experiment(&config, threads)?;
            print!("{}", summary.table());
            println!("wrote {}", config.output.display());
            Ok(if summary.bounds_ok() { 0 } else { EXIT_VERIFY })
        }
        Command::Verify { config, inject_fault } => {
            let (config, threads) = load(config, &cli)?;
            let report = if *inject_fault {
                run_verification(&config, threads, &shifted_oracle(0.5))?
            } else {
                run_verification(&config, threads, &exact_q)?
            };
            print!("{}", report.table());
            Ok(if report.passed() { 0 } else { EXIT_VERIFY })
        }
    })();
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
