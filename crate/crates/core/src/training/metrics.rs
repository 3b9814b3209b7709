use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodata::SectionGrid;

fn check_pair(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{op} needs at least 2 samples, got {}",
            a.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation, population convention.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "pcc")?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pcc of a constant trace".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, "r2")?;
    let mt = mean(truth);
    let (mut res, mut tot) = (0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        res += (t - p) * (t - p);
        tot += (t - mt) * (t - mt);
    }
    if tot == 0.0 {
        return Err(Error::Degenerate("r2 against a constant trace".into()));
    }
    Ok(1.0 - res / tot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceMetrics {
    pub col: usize,
    pub pcc: f64,
    pub r2: f64,
}

/// Per-trace scores and their arithmetic means.
///
/// Columns with a constant true trace have no defined score and are listed
/// in `excluded` instead of `per_trace`. A constant prediction against a
/// varying truth scores a PCC of 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub per_trace: Vec<TraceMetrics>,
    pub excluded: Vec<usize>,
    pub avg_pcc: f64,
    pub avg_r2: f64,
}

/// Scores every column of `pred` against `truth`.
pub fn evaluate_section(pred: &SectionGrid, truth: &SectionGrid) -> Result<Metrics> {
    evaluate_columns(pred, truth, &(0..truth.width()).collect::<Vec<_>>())
}

/// Scores the listed columns only.
pub fn evaluate_columns(pred: &SectionGrid, truth: &SectionGrid, cols: &[usize]) -> Result<Metrics> {
    if (pred.depth(), pred.width()) != (truth.depth(), truth.width()) {
        return Err(Error::shape(
            "evaluate_section",
            &[pred.depth(), pred.width()],
            &[truth.depth(), truth.width()],
        ));
    }
    let mut per_trace = Vec::with_capacity(cols.len());
    let mut excluded = Vec::new();
    for &col in cols {
        if col >= truth.width() {
            return Err(Error::Index {
                index: col,
                len: truth.width(),
            });
        }
        let p: Vec<f64> = pred.column(col).iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = truth.column(col).iter().map(|&v| v as f64).collect();
        let r2 = match r2(&p, &t) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => {
                excluded.push(col);
                continue;
            }
            Err(e) => return Err(e),
        };
        let pcc = match pcc(&p, &t) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => 0.0,
            Err(e) => return Err(e),
        };
        per_trace.push(TraceMetrics { col, pcc, r2 });
    }
    if per_trace.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} evaluated columns have a constant true trace",
            cols.len()
        )));
    }
    let n = per_trace.len() as f64;
    let avg_pcc = per_trace.iter().map(|m| m.pcc).sum::<f64>() / n;
    let avg_r2 = per_trace.iter().map(|m| m.r2).sum::<f64>() / n;
    Ok(Metrics {
        per_trace,
        excluded,
        avg_pcc,
        avg_r2,
    })
}
