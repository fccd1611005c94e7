use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use les_cli::{parse_config, CliError};

#[derive(Parser)]
#[command(name = "les", version, about = "Local entropy search benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long, env = "LES_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Summarize record CSVs into per-iteration quantiles.
    Summarize {
        /// Glob matching record files, one source per file.
        #[arg(long)]
        input: String,
        #[arg(long)]
        output: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let text =
                std::fs::read_to_string(&config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            let cfg = parse_config(&text)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let out = les_cli::run(&cfg, &dir)?;
            println!(
                "{} seeds completed, {} failed, {} stopped early; results in {}",
                out.completed,
                out.failed,
                out.stopped,
                dir.display()
            );
        }
        Command::Summarize { input, output } => {
            let table = les_cli::summarize_files(&input, &output)?;
            println!("{} rows written to {}", table.rows.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // bad arguments count as configuration errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
