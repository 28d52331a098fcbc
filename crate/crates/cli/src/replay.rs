//! Reading traces back and recomputing their summary.

use std::path::Path;

use popper_sim::trace::TRACE_SCHEMA;
use popper_sim::{summarize, RunSummary, TraceEvent};

use crate::CliError;

/// Parses JSONL trace text. The first event must be a header carrying the
/// current schema string.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, CliError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(line).map_err(|e| CliError::Trace {
            line: line_no,
            message: e.to_string(),
        })?;
        if events.is_empty() {
            match &ev {
                TraceEvent::Header { schema, .. } if schema == TRACE_SCHEMA => {}
                TraceEvent::Header { schema, .. } => {
                    return Err(CliError::Trace {
                        line: line_no,
                        message: format!(
                            "unsupported schema {schema:?}, expected {TRACE_SCHEMA:?}"
                        ),
                    })
                }
                _ => {
                    return Err(CliError::Trace {
                        line: line_no,
                        message: "trace must start with a header event".into(),
                    })
                }
            }
        }
        events.push(ev);
    }
    match events.last() {
        None => Err(CliError::Trace {
            line: 1,
            message: "empty trace".into(),
        }),
        Some(TraceEvent::End { .. }) => Ok(events),
        Some(_) => Err(CliError::Trace {
            line: text.lines().count() + 1,
            message: "trace ends without an end event (truncated?)".into(),
        }),
    }
}

pub fn replay_file(path: &Path) -> Result<RunSummary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(summarize(&parse_trace(&text)?))
}
