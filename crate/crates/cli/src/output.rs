//! File formats the command line writes besides SGRD and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use seisinv_core::training::Metrics;
use seisinv_core::{Error, SectionGrid, TraceMetrics, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// 8-bit binary PGM (P5), one pixel per sample, `width` columns by `depth`
/// rows, min-max scaled over the whole grid.
pub fn pgm_bytes(grid: &SectionGrid) -> Vec<u8> {
    let v = grid.values();
    let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo) as f64;
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.depth()).into_bytes();
    out.extend(v.iter().map(|&x| {
        if span > 0.0 {
            ((x - lo) as f64 / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, grid: &SectionGrid) -> Result<(), CliError> {
    fs::write(path, pgm_bytes(grid)).map_err(|e| Error::io(path, e).into())
}

pub const WELLS_HEADER: &str = "well,column,x_m";

pub fn write_wells(path: &Path, wells: &[usize], dx: f32) -> Result<(), CliError> {
    let mut s = format!("{WELLS_HEADER}\n");
    for (i, &c) in wells.iter().enumerate() {
        let _ = writeln!(s, "{i},{c},{}", c as f64 * dx as f64);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e).into())
}

/// Well columns from a `wells.csv`, checked against a section `width`.
pub fn read_wells(path: &Path, width: usize) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| CliError::data(format!("{} line {line}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(WELLS_HEADER) {
        return Err(bad(1, &format!("expected header `{WELLS_HEADER}`")));
    }
    let mut wells = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let col = line
            .split(',')
            .nth(1)
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or_else(|| bad(i + 2, "bad column field"))?;
        if col >= width {
            return Err(bad(i + 2, &format!("column {col} outside 0..{width}")));
        }
        wells.push(col);
    }
    if wells.is_empty() {
        return Err(bad(1, "no wells listed"));
    }
    Ok(wells)
}

/// Long-format trace table: one row per requested column and sample.
pub fn traces_csv(pred: &SectionGrid, truth: Option<&SectionGrid>, columns: &[usize]) -> String {
    let mut s = String::from("column,depth,truth,prediction\n");
    for &c in columns {
        for z in 0..pred.depth() {
            let truth = truth.map(|t| t.get(z, c).to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{c},{},{truth},{}",
                z as f64 * pred.dz as f64,
                pred.get(z, c)
            );
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub avg_pcc: f64,
    pub avg_r2: f64,
    pub n_traces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    pub col: usize,
    pub pcc: f64,
    pub r2: f64,
}

impl From<&TraceMetrics> for TraceScore {
    fn from(t: &TraceMetrics) -> Self {
        TraceScore {
            col: t.col,
            pcc: t.pcc,
            r2: t.r2,
        }
    }
}

/// `report.json`. Averages cover every scored column, training wells
/// included; `heldout` repeats them without the wells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variant: Variant,
    pub avg_pcc: f64,
    pub avg_r2: f64,
    pub n_traces: usize,
    pub excluded_traces: Vec<usize>,
    pub per_trace: Vec<TraceScore>,
    pub heldout: Option<HeldOut>,
}

impl Report {
    pub fn new(variant: Variant, all: &Metrics, heldout: Option<&Metrics>) -> Report {
        Report {
            variant,
            avg_pcc: all.avg_pcc,
            avg_r2: all.avg_r2,
            n_traces: all.per_trace.len(),
            excluded_traces: all.excluded.clone(),
            per_trace: all.per_trace.iter().map(TraceScore::from).collect(),
            heldout: heldout.map(|m| HeldOut {
                avg_pcc: m.avg_pcc,
                avg_r2: m.avg_r2,
                n_traces: m.per_trace.len(),
            }),
        }
    }
}
