//! Trace rows and their CSV/JSON forms.
//!
//! CSV columns: `t,q0..qN,qd0..qdN,px,py,pz,ax,ay,az,res1,res2,res3,bounds,height`.
//! `p` and `a` are the controlled frame's position and approach axis,
//! `res1..res3` the translational, rotational and posture task residuals,
//! `bounds` a bitmask of joints whose velocity sits on a box bound and
//! `height` is 1 while the height constraint is active. Floats carry 9
//! significant digits.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State and residuals of one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// s
    pub t: f64,
    pub q: Vec<f64>,
    /// Joint velocity applied over `[t, t + dt)`.
    pub qd: Vec<f64>,
    pub spray_pos: [f64; 3],
    pub spray_axis: [f64; 3],
    pub level_residuals: [f64; 3],
    /// Bit `i` is set when joint `i`'s velocity sits on its box bound.
    pub active_bounds: u64,
    pub height_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

pub fn trace_csv_header(dof: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..dof).map(|i| format!("q{i}")));
    cols.extend((0..dof).map(|i| format!("qd{i}")));
    cols.extend(
        ["px", "py", "pz", "ax", "ay", "az", "res1", "res2", "res3", "bounds", "height"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

fn push_float(line: &mut String, v: f64) {
    let _ = write!(line, "{v:.8e},");
}

fn csv_line(row: &TraceRow) -> String {
    let mut line = String::new();
    push_float(&mut line, row.t);
    for &v in row.q.iter().chain(&row.qd).chain(&row.spray_pos).chain(&row.spray_axis) {
        push_float(&mut line, v);
    }
    for &v in &row.level_residuals {
        push_float(&mut line, v);
    }
    let _ = write!(line, "{},{}", row.active_bounds, u8::from(row.height_flag));
    line
}

/// Writes `trace` for a chain with `dof` joints.
pub fn write_trace(trace: &[TraceRow], dof: usize, format: TraceFormat, out: &mut impl Write) -> std::io::Result<()> {
    match format {
        TraceFormat::Csv => {
            writeln!(out, "{}", trace_csv_header(dof))?;
            for row in trace {
                writeln!(out, "{}", csv_line(row))?;
            }
        }
        TraceFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, trace)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn emit_trace(trace: &[TraceRow], dof: usize, format: TraceFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_trace(trace, dof, format, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}
