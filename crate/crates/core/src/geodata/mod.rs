//! Section grids, the `SGRD` file format, synthetic earth models and
//! seismic forward modeling, and the well-based training set.

mod dataset;
mod synth;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    build_dataset, extract_patch, hflip, sample_wells, Dataset, Norm, TrainingSample,
};
pub use synth::{
    forward_model, impedance_from_density_velocity, reflectivity, ricker, synth_earth, synthesize,
    SynthConfig, SynthSection, EARTH_STREAM, NOISE_STREAM,
};

pub const SGRD_MAGIC: &[u8; 4] = b"SGRD";
pub const SGRD_VERSION: u32 = 1;
const SGRD_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 4 + 1;
/// Set in the kind byte when the vertical axis is time (`dz` in microseconds).
const TIME_AXIS_FLAG: u8 = 0x80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Impedance,
    Seismic,
    Density,
    Velocity,
}

impl GridKind {
    pub fn code(self) -> u8 {
        match self {
            GridKind::Impedance => 0,
            GridKind::Seismic => 1,
            GridKind::Density => 2,
            GridKind::Velocity => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GridKind::Impedance),
            1 => Some(GridKind::Seismic),
            2 => Some(GridKind::Density),
            3 => Some(GridKind::Velocity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GridKind::Impedance => "impedance",
            GridKind::Seismic => "seismic",
            GridKind::Density => "density",
            GridKind::Velocity => "velocity",
        }
    }
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impedance" => Ok(GridKind::Impedance),
            "seismic" => Ok(GridKind::Seismic),
            "density" => Ok(GridKind::Density),
            "velocity" => Ok(GridKind::Velocity),
            other => Err(Error::config(
                "kind",
                format!("unknown grid kind `{other}`"),
            )),
        }
    }
}

/// Unit of the vertical sample interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerticalAxis {
    /// `dz` in meters.
    Depth,
    /// `dz` in microseconds, as read from a SEG-Y header.
    Time,
}

/// A `d x n` section (depth samples by trace columns), row-major with the
/// column index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionGrid {
    depth: usize,
    width: usize,
    values: Vec<f32>,
    pub dz: f32,
    pub dx: f32,
    pub kind: GridKind,
    pub axis: VerticalAxis,
}

impl SectionGrid {
    pub fn new(
        depth: usize,
        width: usize,
        values: Vec<f32>,
        dz: f32,
        dx: f32,
        kind: GridKind,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(Error::config(
                "depth",
                format!("need at least 2 samples, got {depth}"),
            ));
        }
        if width < 1 {
            return Err(Error::config("width", "need at least one column"));
        }
        if values.len() != depth * width {
            return Err(Error::shape(
                "section grid",
                &[depth, width],
                &[values.len()],
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at row {}, column {}",
                i / width,
                i % width
            )));
        }
        if kind == GridKind::Impedance {
            if let Some(i) = values.iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain(format!(
                    "impedance must be positive, found {} at row {}, column {}",
                    values[i],
                    i / width,
                    i % width
                )));
            }
        }
        Ok(SectionGrid {
            depth,
            width,
            values,
            dz,
            dx,
            kind,
            axis: VerticalAxis::Depth,
        })
    }

    /// Builds a grid from columns of equal length.
    pub fn from_columns(columns: &[Vec<f32>], dz: f32, dx: f32, kind: GridKind) -> Result<Self> {
        let depth = columns.first().map_or(0, Vec::len);
        let width = columns.len();
        let mut values = vec![0.0; depth * width];
        for (x, col) in columns.iter().enumerate() {
            if col.len() != depth {
                return Err(Error::shape("section columns", &[depth], &[col.len()]));
            }
            for (z, &v) in col.iter().enumerate() {
                values[z * width + x] = v;
            }
        }
        Self::new(depth, width, values, dz, dx, kind)
    }

    /// Number of depth samples `d`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of trace columns `n`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, z: usize, x: usize) -> f32 {
        self.values[z * self.width + x]
    }

    pub fn column(&self, x: usize) -> Vec<f32> {
        (0..self.depth).map(|z| self.get(z, x)).collect()
    }

    /// Copies the same grid with other values (same geometry).
    pub fn with_values(&self, values: Vec<f32>, kind: GridKind) -> Result<Self> {
        let mut g = Self::new(self.depth, self.width, values, self.dz, self.dx, kind)?;
        g.axis = self.axis;
        Ok(g)
    }

    pub fn to_sgrd_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(SGRD_HEADER_LEN + 4 * self.values.len());
        buf.extend_from_slice(SGRD_MAGIC);
        buf.extend_from_slice(&SGRD_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.depth as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&self.dz.to_le_bytes());
        buf.extend_from_slice(&self.dx.to_le_bytes());
        let flag = match self.axis {
            VerticalAxis::Depth => 0,
            VerticalAxis::Time => TIME_AXIS_FLAG,
        };
        buf.push(self.kind.code() | flag);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_sgrd_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::format("SGRD grid", reason);
        if bytes.len() < SGRD_HEADER_LEN || &bytes[..4] != SGRD_MAGIC {
            return Err(bad("missing SGRD magic or short header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != SGRD_VERSION {
            return Err(Error::Version {
                what: "SGRD grid".into(),
                found: version.to_string(),
            });
        }
        let (depth, width) = (u32_at(8) as usize, u32_at(12) as usize);
        let (dz, dx) = (f32_at(16), f32_at(20));
        let code = bytes[24];
        let kind = GridKind::from_code(code & !TIME_AXIS_FLAG)
            .ok_or_else(|| bad(format!("unknown kind code {code}")))?;
        let count = depth
            .checked_mul(width)
            .ok_or_else(|| bad("dimensions overflow".into()))?;
        let payload = &bytes[SGRD_HEADER_LEN..];
        if payload.len() != count * 4 {
            return Err(bad(format!(
                "payload holds {} bytes, {depth}x{width} needs {}",
                payload.len(),
                count * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut grid = Self::new(depth, width, values, dz, dx, kind)?;
        if code & TIME_AXIS_FLAG != 0 {
            grid.axis = VerticalAxis::Time;
        }
        Ok(grid)
    }

    pub fn write_sgrd(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_sgrd_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_sgrd(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_sgrd_bytes(&bytes).map_err(|e| match e {
            Error::Format { what, reason } => Error::Format {
                what: format!("{what} {}", path.display()),
                reason,
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = SectionGrid::new(2, 1, vec![1.5, -2.0], 5.0, 125.0, GridKind::Seismic).unwrap();
        let b = g.to_sgrd_bytes();
        assert_eq!(&b[..4], b"SGRD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(b[16..20].try_into().unwrap()), 5.0);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 125.0);
        assert_eq!(b[24], 1);
        assert_eq!(b.len(), 25 + 8);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(SectionGrid::new(1, 3, vec![1.0; 3], 1.0, 1.0, GridKind::Seismic).is_err());
        assert!(SectionGrid::new(2, 2, vec![1.0; 3], 1.0, 1.0, GridKind::Seismic).is_err());
        assert!(SectionGrid::new(2, 1, vec![1.0, f32::NAN], 1.0, 1.0, GridKind::Seismic).is_err());
        assert!(matches!(
            SectionGrid::new(2, 1, vec![1.0, 0.0], 1.0, 1.0, GridKind::Impedance),
            Err(Error::Domain(_))
        ));
        assert!(SectionGrid::new(2, 1, vec![1.0, 0.0], 1.0, 1.0, GridKind::Seismic).is_ok());
    }

    #[test]
    fn bad_files_are_rejected() {
        let g = SectionGrid::new(2, 2, vec![1.0; 4], 1.0, 1.0, GridKind::Density).unwrap();
        let mut b = g.to_sgrd_bytes();
        b.pop();
        assert!(matches!(
            SectionGrid::from_sgrd_bytes(&b),
            Err(Error::Format { .. })
        ));
        let mut b = g.to_sgrd_bytes();
        b[4] = 9;
        assert!(matches!(
            SectionGrid::from_sgrd_bytes(&b),
            Err(Error::Version { .. })
        ));
        let mut b = g.to_sgrd_bytes();
        b[24] = 7;
        assert!(SectionGrid::from_sgrd_bytes(&b).is_err());
    }

    #[test]
    fn time_axis_survives_round_trip() {
        let mut g = SectionGrid::new(3, 1, vec![0.0; 3], 4000.0, 25.0, GridKind::Seismic).unwrap();
        g.axis = VerticalAxis::Time;
        let back = SectionGrid::from_sgrd_bytes(&g.to_sgrd_bytes()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn dataset_content_hash_is_stable() {
        let cfg = SynthConfig {
            depth: 48,
            width: 40,
            dz: 5.0,
            dx: 125.0,
            dt: 0.002,
            layers: [4, 7],
            impedance: [4.0e6, 1.0e7],
            trend: 0.5,
            undulation_amplitude: 30.0,
            undulation_wavelength: 3000.0,
            max_dip: 0.004,
            frequency: 25.0,
            snr_db: Some(20.0),
            well_spacing: 1000.0,
            seed: 99,
        };
        let s = synthesize(&cfg).unwrap();
        let ds = build_dataset(&s.seismic, &s.impedance, &s.wells, 7).unwrap();
        assert_eq!(ds.samples.len(), 5);
        assert_eq!(ds.content_hash(), "53d831bbfc3d9a4d19e6f734f257936bb6e66fc6411d623aaef61e3acccc9791");
    }

    proptest! {
        #[test]
        fn sgrd_round_trip_is_bitwise(
            d in 2usize..9,
            n in 1usize..9,
            seed in any::<u64>(),
            kind in 0u8..4,
        ) {
            let kind = GridKind::from_code(kind).unwrap();
            let values: Vec<f32> = (0..d * n)
                .map(|i| {
                    let v = ((seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407))) >> 40) as f32;
                    v * 0.37 + 0.5
                })
                .collect();
            let g = SectionGrid::new(d, n, values, 2.5, 12.5, kind).unwrap();
            let back = SectionGrid::from_sgrd_bytes(&g.to_sgrd_bytes()).unwrap();
            let same = back.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(back, g);
        }
    }
}
