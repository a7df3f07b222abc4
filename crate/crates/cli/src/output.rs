//! Files written by `run`: `<name>.report.json`, `<name>.ndjson` and one
//! `<name>.<suffix>.csv` per table. Every file carries the config digest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use levyforest::stattests::TestReport;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiments::{Observation, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub name: String,
    pub kind: String,
    pub config_digest: String,
    pub seed: u64,
    pub n: u32,
    pub samples: usize,
    pub pass: bool,
    pub checks: Vec<TestReport>,
    pub diagnostics: Vec<TestReport>,
    pub observations: Vec<Observation>,
}

impl ReportFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.into(), source })
    }
}

pub struct RunSummary {
    pub report: ReportFile,
    pub files: Vec<PathBuf>,
}

fn stamp(mut reports: Vec<TestReport>, digest: &str) -> Vec<TestReport> {
    for r in &mut reports {
        r.config_digest = Some(digest.to_string());
    }
    reports
}

fn write(path: PathBuf, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    files.push(path);
    Ok(())
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: Outcome) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let digest = cfg.digest();
    let mut files = Vec::new();

    let mut ndjson = String::new();
    for mut r in outcome.records {
        if let Value::Object(m) = &mut r {
            m.insert("config_digest".into(), Value::String(digest.clone()));
        }
        ndjson.push_str(&serde_json::to_string(&r).expect("records serialize"));
        ndjson.push('\n');
    }
    write(dir.join(format!("{}.ndjson", cfg.name)), ndjson.as_bytes(), &mut files)?;

    for t in outcome.tables {
        let mut bytes = format!("# config_digest={digest}\n").into_bytes();
        bytes.extend_from_slice(&t.csv);
        write(dir.join(format!("{}.{}.csv", cfg.name, t.suffix)), &bytes, &mut files)?;
    }

    let checks = stamp(outcome.checks, &digest);
    let report = ReportFile {
        name: cfg.name.clone(),
        kind: cfg.kind.clone(),
        config_digest: digest.clone(),
        seed: cfg.seed,
        n: cfg.n,
        samples: cfg.samples,
        pass: checks.iter().all(|c| c.pass),
        checks,
        diagnostics: stamp(outcome.diagnostics, &digest),
        observations: outcome.observations,
    };
    let mut json = serde_json::to_string(&report).expect("report serializes");
    json.push('\n');
    write(dir.join(format!("{}.report.json", cfg.name)), json.as_bytes(), &mut files)?;
    Ok(RunSummary { report, files })
}
