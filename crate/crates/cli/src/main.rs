use clap::{Parser, Subcommand};
use gridmend::config::{ConfigError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Grid state simulation, stealthy attack injection, and neural
/// correction.
#[derive(Parser)]
#[command(name = "gridmend", version, about)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true, default_value = "gridmend.json")]
    config: PathBuf,
    /// Dot-path overrides, e.g. --set train.epochs=5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the load trajectory and build the attacked-window dataset.
    Simulate,
    /// Train the correction autoencoder on the persisted dataset.
    Train {
        /// Continue from the saved checkpoint, extending the epoch report.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the trained model on the test split.
    Evaluate,
    /// Show one window's normal/attacked/corrected states.
    AttackDemo {
        /// Test-window index (default 0).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Correct a stream of JSON-line state vectors from stdin.
    CorrectStream,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match RunConfig::load(&cli.config, &cli.overrides) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("config error: {err}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if err.downcast_ref::<ConfigError>().is_some() {
                eprintln!("config error: {err:#}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(3)
            }
        }
    }
}

fn run(command: &Command, config: &RunConfig) -> anyhow::Result<()> {
    match command {
        Command::Simulate => {
            let summary = gridmend::cmd_simulate(config)?;
            println!(
                "solved {} hours ({} infeasible), dataset {}/{}/{} windows ({} skipped)",
                summary.hours_solved,
                summary.hours_failed,
                summary.counts.0,
                summary.counts.1,
                summary.counts.2,
                summary.skipped_windows
            );
        }
        Command::Train { resume } => {
            let summary = gridmend::cmd_train(config, *resume)?;
            let best = &summary.report;
            println!(
                "trained {} epochs; best val RMSE {:.6e} at epoch {}",
                best.epochs.len(),
                best.best_val_rmse,
                best.best_epoch + summary.first_epoch - 1
            );
        }
        Command::Evaluate => {
            let eval = gridmend::cmd_evaluate(config)?;
            println!(
                "test windows: {}  overall RMSE: {:.6e}  attacked RMSE: {:.6e}",
                eval.n_windows, eval.overall_rmse, eval.attacked_rmse
            );
            println!(
                "identification: accuracy {:.4}  TPR {:.4}  FPR {:.4}",
                eval.identification.accuracy,
                eval.identification.true_positive_rate,
                eval.identification.false_positive_rate
            );
        }
        Command::AttackDemo { window } => {
            let mut stdout = std::io::stdout().lock();
            gridmend::cmd_attack_demo(config, *window, &mut stdout)?;
        }
        Command::CorrectStream => {
            let stdin = std::io::stdin();
            let mut input = stdin.lock();
            let mut stdout = std::io::stdout().lock();
            gridmend::cmd_correct_stream(config, &mut input, &mut stdout)?;
        }
    }
    Ok(())
}
