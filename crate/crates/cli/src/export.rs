//! Re-exports a named trace from a finished run directory as CSV.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use weedbot_core::robot::TickRecord;
use weedbot_core::runner::{write_trace_csv, UnknownTrace, WeedingTraceRow, TRACE_NAMES};

use crate::run::{PLATFORM_TRACE, WEEDING_TRACE};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    UnknownTrace(#[from] UnknownTrace),
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("writing CSV: {0}")]
    Write(#[from] std::io::Error),
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExportError> {
    let err = |message: String| ExportError::Read { path: path.display().to_string(), message };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

pub fn export_trace(run_dir: &Path, what: &str, out: &mut dyn Write) -> Result<(), ExportError> {
    if !TRACE_NAMES.contains(&what) {
        return Err(UnknownTrace(what.to_string()).into());
    }
    let (weeding, platform): (Vec<WeedingTraceRow>, Vec<TickRecord>) = if what == "platform" {
        (Vec::new(), read_lines(&run_dir.join(PLATFORM_TRACE))?)
    } else {
        (read_lines(&run_dir.join(WEEDING_TRACE))?, Vec::new())
    };
    write_trace_csv(what, &weeding, &platform, out)?;
    out.flush()?;
    Ok(())
}
