use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SectionGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Columns `0, step, 2 step, ...` with `step = round(spacing / dx)`.
pub fn sample_wells(grid: &SectionGrid, spacing: f64) -> Result<Vec<usize>> {
    let dx = grid.dx as f64;
    if !(spacing >= dx) {
        return Err(Error::config(
            "well_spacing",
            format!("{spacing} m is below the trace spacing {dx} m"),
        ));
    }
    let step = ((spacing / dx).round() as usize).max(1);
    Ok((0..grid.width()).step_by(step).collect())
}

/// The `1 x d x m` window of `seismic` centered on column `col`.
///
/// Columns beyond the section edge replicate the edge column.
pub fn extract_patch(seismic: &SectionGrid, col: usize, m: usize) -> Result<Tensor<f32>> {
    if m.is_multiple_of(2) {
        return Err(Error::config(
            "patch_width",
            format!("must be odd, got {m}"),
        ));
    }
    let n = seismic.width();
    if col >= n {
        return Err(Error::Index { index: col, len: n });
    }
    let half = (m / 2) as isize;
    let cols: Vec<usize> = (-half..=half)
        .map(|o| (col as isize + o).clamp(0, n as isize - 1) as usize)
        .collect();
    let d = seismic.depth();
    let mut data = Vec::with_capacity(d * m);
    for z in 0..d {
        data.extend(cols.iter().map(|&c| seismic.get(z, c)));
    }
    Tensor::new([1, d, m], data)
}

/// Affine z-score map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub mean: f64,
    pub std: f64,
}

impl Norm {
    /// Mean and population standard deviation.
    pub fn fit(values: &[f32]) -> Result<Norm> {
        if values.is_empty() {
            return Err(Error::Degenerate("no values to fit a normalization".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Degenerate(format!(
                "zero variance (all values equal {mean})"
            )));
        }
        Ok(Norm { mean, std })
    }

    pub fn apply(&self, v: f32) -> f32 {
        ((v as f64 - self.mean) / self.std) as f32
    }

    pub fn inverse(&self, v: f32) -> f32 {
        (v as f64 * self.std + self.mean) as f32
    }
}

/// One well: the normalized seismic patch around it and its normalized log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// `1 x d x m`
    pub patch: Tensor<f32>,
    /// `d` impedance samples.
    pub target: Vec<f32>,
    pub well_column: usize,
}

/// Mirrors the patch left to right; the center column stays in place.
pub fn hflip(sample: &TrainingSample) -> TrainingSample {
    let shape = sample.patch.shape();
    let m = shape[shape.len() - 1];
    let mut patch = sample.patch.clone();
    for row in patch.data_mut().chunks_exact_mut(m) {
        row.reverse();
    }
    TrainingSample {
        patch,
        target: sample.target.clone(),
        well_column: sample.well_column,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    pub seismic_norm: Norm,
    pub impedance_norm: Norm,
}

impl Dataset {
    pub fn patch_width(&self) -> usize {
        self.samples[0].patch.shape()[2]
    }

    pub fn depth(&self) -> usize {
        self.samples[0].target.len()
    }

    /// SHA-256 over normalization statistics and every sample, bit-exact.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for norm in [self.seismic_norm, self.impedance_norm] {
            h.update(norm.mean.to_le_bytes());
            h.update(norm.std.to_le_bytes());
        }
        for s in &self.samples {
            h.update((s.well_column as u64).to_le_bytes());
            for v in s.patch.data().iter().chain(&s.target) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Normalized training samples at `wells`.
///
/// Seismic statistics come from the training patches, impedance statistics
/// from the training logs; nothing else in the section is looked at.
pub fn build_dataset(
    seismic: &SectionGrid,
    impedance: &SectionGrid,
    wells: &[usize],
    m: usize,
) -> Result<Dataset> {
    if (seismic.depth(), seismic.width()) != (impedance.depth(), impedance.width()) {
        return Err(Error::shape(
            "build_dataset",
            &[seismic.depth(), seismic.width()],
            &[impedance.depth(), impedance.width()],
        ));
    }
    if wells.is_empty() {
        return Err(Error::EmptyInput("build_dataset (no wells)"));
    }
    let patches = wells
        .iter()
        .map(|&w| extract_patch(seismic, w, m))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<Vec<f32>> = wells.iter().map(|&w| impedance.column(w)).collect();
    let all_patch: Vec<f32> = patches
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    let all_logs: Vec<f32> = logs.iter().flatten().copied().collect();
    let seismic_norm = Norm::fit(&all_patch)?;
    let impedance_norm = Norm::fit(&all_logs)?;
    let samples = patches
        .into_iter()
        .zip(logs)
        .zip(wells)
        .map(|((patch, log), &w)| TrainingSample {
            patch: patch.map(|v| seismic_norm.apply(v)),
            target: log.iter().map(|&v| impedance_norm.apply(v)).collect(),
            well_column: w,
        })
        .collect();
    Ok(Dataset {
        samples,
        seismic_norm,
        impedance_norm,
    })
}
