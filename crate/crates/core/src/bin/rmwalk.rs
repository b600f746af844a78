use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rmwalk::runner::{self, exit, Overrides};

#[derive(Parser)]
#[command(name = "rmwalk", version, about = "Conditioned random-matrix walk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment (or suite) described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the experiment registry.
    ListExperiments {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments { json } => {
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(rmwalk::harness::EXPERIMENTS).expect("registry serializes")
                );
            } else {
                print!("{}", runner::list_experiments());
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            workers,
            output,
        } => {
            let overrides = Overrides {
                seed,
                workers,
                output_dir: output,
            };
            match runner::run(&config, &overrides) {
                Ok(outcome) => {
                    for v in &outcome.verdicts {
                        println!(
                            "{:<34} {:<12} statistic={} threshold={}",
                            v.experiment,
                            format!("{:?}", v.status).to_lowercase(),
                            v.statistic,
                            v.threshold
                        );
                    }
                    println!("artifacts in {}", outcome.output_dir.display());
                    ExitCode::from(outcome.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    let code = if runner::is_config_error(&e) {
                        exit::CONFIG_ERROR
                    } else {
                        exit::RUNTIME_ERROR
                    };
                    ExitCode::from(code as u8)
                }
            }
        }
    }
}
