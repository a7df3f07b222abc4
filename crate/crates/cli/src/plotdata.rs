//! Tidy CSV of report observations, one row per observation.

use std::io::Write;
use std::path::PathBuf;

use crate::error::{CliError, Result};
use crate::output::ReportFile;

pub const PLOT_HEADER: [&str; 7] = ["report", "kind", "config_digest", "series", "sample_id", "x", "y"];

pub fn emit_plotdata<W: Write>(reports: &[PathBuf], w: W) -> Result<()> {
    let parsed = reports.iter().map(|p| ReportFile::read(p)).collect::<Result<Vec<_>>>()?;
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Core(e.into());
    out.write_record(PLOT_HEADER).map_err(err)?;
    for r in &parsed {
        for o in &r.observations {
            out.write_record([
                r.name.as_str(),
                r.kind.as_str(),
                r.config_digest.as_str(),
                o.series.as_str(),
                &o.sample_id.to_string(),
                &o.x.to_string(),
                &o.y.to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.flush().map_err(|e| CliError::io("<plotdata output>", e))?;
    Ok(())
}
