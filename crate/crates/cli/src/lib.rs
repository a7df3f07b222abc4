//! Config-driven experiment runner for `levyforest`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plotdata;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiments::{ExperimentKind, ExperimentRegistry, RunContext};
pub use output::{ReportFile, RunSummary};

/// Environment variable that replaces the config seed.
pub const SEED_ENV: &str = "LEVYFOREST_SEED";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// 0 means one per core; `None` keeps the current setting.
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

/// Parses `LEVYFOREST_SEED`, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Schema(format!("{SEED_ENV}=`{s}` is not an unsigned 64-bit integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Schema(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    run_config_str(&text, opts)
}

pub fn run_config_str(text: &str, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = ExperimentConfig::from_json(text, opts.seed_override)?;
    let registry = ExperimentRegistry::default();
    let kind = registry.get(&cfg.kind)?;
    let mechanism = cfg.mechanism.build().map_err(|e| CliError::Schema(format!("mechanism: {e}")))?;
    if let Some(w) = opts.workers {
        levyforest::parallel::set_workers(w);
    }
    let outcome = kind.run(&RunContext { config: &cfg, mechanism })?;
    output::write_outputs(&opts.out_dir, &cfg, outcome)
}
