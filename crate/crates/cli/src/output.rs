//! Run artifacts and their atomic writing.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use popper_core::height_filter::HeightTraceRow;
use popper_sim::{SimTrace, TraceEvent};

use crate::CliError;

pub const HEIGHT_SCHEMA: &str = "popper-height/1";
pub const PATH_SCHEMA: &str = "popper-path/1";
pub const COMPARE_SCHEMA: &str = "popper-compare/1";

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn height_csv(rows: &[HeightTraceRow]) -> String {
    let mut s = format!("# {HEIGHT_SCHEMA}\n{}\n", HeightTraceRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn path_csv(events: &[TraceEvent]) -> String {
    let mut s = format!("# {PATH_SCHEMA}\nt,x,y,z,mode\n");
    for ev in events {
        if let TraceEvent::State {
            t, position, mode, ..
        } = ev
        {
            let _ = writeln!(
                s,
                "{t:.3},{:.4},{:.4},{:.4},{mode}",
                position[0], position[1], position[2]
            );
        }
    }
    s
}

/// Writes `trace.jsonl`, `summary.csv`, `height.csv` and `path.csv` into `dir`.
pub fn write_run(dir: &Path, trace: &SimTrace) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_atomic(&dir.join("trace.jsonl"), &trace.to_jsonl())?;
    write_atomic(&dir.join("height.csv"), &height_csv(&trace.height))?;
    write_atomic(&dir.join("path.csv"), &path_csv(&trace.events))?;
    write_atomic(&dir.join("summary.csv"), &trace.summary.to_csv())?;
    Ok(())
}
