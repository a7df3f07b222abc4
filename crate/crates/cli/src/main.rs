use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use levyforest_cli::plotdata::emit_plotdata;
use levyforest_cli::{run_config_file, seed_from_env, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "levyforest", version, about = "Run levyforest experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Merge report observations into one tidy CSV.
    EmitPlotdata {
        reports: Vec<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { config, workers, out } => {
            let opts = RunOptions { workers, out_dir: out, seed_override: seed_from_env()? };
            let summary = run_config_file(&config, &opts)?;
            for c in &summary.report.checks {
                println!("{} {} statistic={}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.statistic);
            }
            for f in &summary.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(summary.report.pass)
        }
        Command::EmitPlotdata { reports, out: Some(path) } => {
            let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            emit_plotdata(&reports, std::io::BufWriter::new(file))?;
            Ok(true)
        }
        Command::EmitPlotdata { reports, out: None } => {
            emit_plotdata(&reports, std::io::stdout().lock())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
