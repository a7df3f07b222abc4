//! Experiment kinds, looked up by name in an [`ExperimentRegistry`].

mod branching;
mod fractal;
mod spatial;
mod trees;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use levyforest::mechanism::BranchingMechanism;
use levyforest::rng::derive_seed;
use levyforest::stattests::TestReport;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub use branching::{Branching, Palm, RayKnight, Reroot};
pub use fractal::{Covt, Dims, LevelDims};
pub use spatial::SuperBm;
pub use trees::{Gh, Sample};

/// Everything an experiment may read.
pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub mechanism: BranchingMechanism,
}

impl RunContext<'_> {
    /// Seed of task `i`; independent of the worker count.
    pub fn task_seed(&self, i: usize) -> u64 {
        derive_seed(self.config.seed, i as u64)
    }
}

/// One point of a plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub series: String,
    pub sample_id: usize,
    pub x: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(series: &str, sample_id: usize, x: f64, y: f64) -> Self {
        Self { series: series.to_string(), sample_id, x, y }
    }
}

/// A rendered CSV table, written to `<name>.<suffix>.csv`.
pub struct Table {
    pub suffix: &'static str,
    pub csv: Vec<u8>,
}

#[derive(Default)]
pub struct Outcome {
    /// Checks that decide the exit code.
    pub checks: Vec<TestReport>,
    /// Reported but not gating.
    pub diagnostics: Vec<TestReport>,
    /// NDJSON records, one object per line.
    pub records: Vec<Value>,
    pub tables: Vec<Table>,
    pub observations: Vec<Observation>,
}

pub trait ExperimentKind: Send + Sync {
    fn name(&self) -> &'static str;
    /// Parameters with every default filled in.
    fn default_params(&self) -> Value;
    fn run(&self, ctx: &RunContext) -> Result<Outcome>;
}

pub struct ExperimentRegistry {
    kinds: Vec<Box<dyn ExperimentKind>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self { kinds: Vec::new() }
    }

    pub fn register(&mut self, k: Box<dyn ExperimentKind>) {
        self.kinds.push(k);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ExperimentKind> {
        self.kinds.iter().find(|k| k.name() == name).map(|k| k.as_ref()).ok_or_else(|| {
            CliError::Schema(format!("kind: unknown experiment kind `{name}`, expected one of {}", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Sample));
        r.register(Box::new(Dims));
        r.register(Box::new(LevelDims));
        r.register(Box::new(Branching));
        r.register(Box::new(RayKnight));
        r.register(Box::new(Palm));
        r.register(Box::new(Reroot));
        r.register(Box::new(SuperBm));
        r.register(Box::new(Gh));
        r.register(Box::new(Covt));
        r
    }
}

fn to_value<T: Serialize>(p: T) -> Value {
    serde_json::to_value(p).expect("params serialize")
}

/// Collects per-task results, keeping the first error.
fn collect<T>(rows: Vec<levyforest::Result<T>>) -> Result<Vec<T>> {
    rows.into_iter().collect::<levyforest::Result<Vec<T>>>().map_err(CliError::from)
}

fn schema_err(kind: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("params for kind `{kind}`: {msg}"))
}
