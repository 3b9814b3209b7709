use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_wells, GridKind, SectionGrid};
use crate::error::{Error, Result};

/// Parameters of the layered synthetic earth and its seismic response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Depth samples `d`.
    pub depth: usize,
    /// Trace columns `n`.
    pub width: usize,
    /// Vertical sample interval (m).
    pub dz: f64,
    /// Trace spacing (m).
    pub dx: f64,
    /// Two-way time equivalent of one depth sample (s), used for the wavelet.
    pub dt: f64,
    /// Inclusive range of the number of layers.
    pub layers: [usize; 2],
    /// Impedance range (kg m^-2 s^-1).
    pub impedance: [f64; 2],
    /// Share of the impedance range that follows layer order (0 = none).
    pub trend: f64,
    /// Peak amplitude of the boundary undulation (m).
    pub undulation_amplitude: f64,
    /// Lateral wavelength of the undulation (m).
    pub undulation_wavelength: f64,
    /// Largest absolute dip of the boundaries (m per m).
    pub max_dip: f64,
    /// Ricker peak frequency (Hz).
    pub frequency: f64,
    /// Signal-to-noise ratio of the additive noise; `None` for noiseless.
    pub snr_db: Option<f64>,
    /// Distance between sampled wells (m).
    pub well_spacing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            depth: 256,
            width: 256,
            dz: 5.0,
            dx: 125.0,
            dt: 0.002,
            layers: [10, 16],
            impedance: [4.0e6, 1.0e7],
            trend: 0.5,
            undulation_amplitude: 60.0,
            undulation_wavelength: 9000.0,
            max_dip: 0.004,
            frequency: 25.0,
            snr_db: Some(20.0),
            well_spacing: 2000.0,
            seed: 1337,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        if self.depth < 2 {
            return Err(Error::config("depth", "need at least 2 samples"));
        }
        if self.width < 1 {
            return Err(Error::config("width", "need at least one column"));
        }
        positive(self.dz, "dz")?;
        positive(self.dx, "dx")?;
        positive(self.dt, "dt")?;
        positive(self.frequency, "frequency")?;
        positive(self.undulation_wavelength, "undulation_wavelength")?;
        if self.layers[0] == 0 || self.layers[0] > self.layers[1] {
            return Err(Error::config(
                "layers",
                format!("need 1 <= min <= max, got {:?}", self.layers),
            ));
        }
        let [lo, hi] = self.impedance;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config(
                "impedance",
                format!("need 0 < min < max, got {:?}", self.impedance),
            ));
        }
        if !(0.0..=1.0).contains(&self.trend) {
            return Err(Error::config("trend", "must lie in [0, 1]"));
        }
        if !(self.undulation_amplitude >= 0.0) {
            return Err(Error::config(
                "undulation_amplitude",
                "must be non-negative",
            ));
        }
        if !(self.max_dip >= 0.0) {
            return Err(Error::config("max_dip", "must be non-negative"));
        }
        if self.frequency * self.dt >= 0.5 {
            return Err(Error::config(
                "frequency",
                format!(
                    "{} Hz is at or above Nyquist {} Hz for dt = {} s",
                    self.frequency,
                    0.5 / self.dt,
                    self.dt
                ),
            ));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("snr_db", "must be finite"));
            }
        }
        if self.well_spacing < self.dx {
            return Err(Error::config(
                "well_spacing",
                format!(
                    "{} m is below the trace spacing {} m",
                    self.well_spacing, self.dx
                ),
            ));
        }
        Ok(())
    }

    /// Half length (samples) of the wavelet: one dominant period each side.
    pub fn wavelet_half_len(&self) -> usize {
        (1.0 / (self.frequency * self.dt)).ceil() as usize
    }

    /// Independent random stream `stream` derived from the seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Random stream of the earth model.
pub const EARTH_STREAM: u64 = 1;
/// Random stream of the seismic noise.
pub const NOISE_STREAM: u64 = 2;

/// A layered impedance section with laterally smooth, undulating and
/// dipping boundaries.
///
/// Boundaries share one sinusoidal undulation and dip, each with its own
/// amplitude factor and a small phase shift, so layers thin and thicken
/// along the section. A cell takes the value of the layer given by the
/// number of boundaries above it.
pub fn synth_earth(config: &SynthConfig) -> Result<SectionGrid> {
    config.validate()?;
    let mut rng = config.rng(EARTH_STREAM);
    let (d, n) = (config.depth, config.width);
    let layers = rng.random_range(config.layers[0]..=config.layers[1]);
    let total = d as f64 * config.dz;
    let phase = rng.random_range(0.0..2.0 * PI);
    let dip = rng.random_range(-1.0..=1.0) * config.max_dip;
    let boundaries: Vec<(f64, f64, f64)> = (1..layers)
        .map(|k| {
            let base = (k as f64 + rng.random_range(-0.3..0.3)) * total / layers as f64;
            let amp = config.undulation_amplitude * rng.random_range(0.6..1.4);
            let shift = rng.random_range(-0.5..0.5);
            (base, amp, shift)
        })
        .collect();
    let [lo, hi] = config.impedance;
    let values: Vec<f64> = (0..layers)
        .map(|k| {
            let order = if layers > 1 {
                k as f64 / (layers - 1) as f64
            } else {
                0.5
            };
            let u: f64 = rng.random();
            lo + (hi - lo) * (config.trend * order + (1.0 - config.trend) * u)
        })
        .collect();

    let center = 0.5 * (n as f64 - 1.0) * config.dx;
    let mut grid = vec![0f32; d * n];
    let mut depths = vec![0f64; boundaries.len()];
    for x in 0..n {
        let xm = x as f64 * config.dx;
        let arg = 2.0 * PI * xm / config.undulation_wavelength + phase;
        for (z, &(base, amp, shift)) in depths.iter_mut().zip(&boundaries) {
            *z = base + amp * (arg + shift).sin() + dip * (xm - center);
        }
        for z in 0..d {
            let zm = (z as f64 + 0.5) * config.dz;
            let layer = depths.iter().filter(|&&b| b < zm).count();
            grid[z * n + x] = values[layer] as f32;
        }
    }
    SectionGrid::new(
        d,
        n,
        grid,
        config.dz as f32,
        config.dx as f32,
        GridKind::Impedance,
    )
}

/// A synthetic benchmark: earth model, its seismic response and well columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSection {
    pub impedance: SectionGrid,
    pub seismic: SectionGrid,
    pub wells: Vec<usize>,
}

/// Runs [`synth_earth`], [`forward_model`] and [`sample_wells`] for `config`.
pub fn synthesize(config: &SynthConfig) -> Result<SynthSection> {
    let impedance = synth_earth(config)?;
    let wavelet = ricker(config.frequency, config.dt, config.wavelet_half_len())?;
    let seismic = forward_model(
        &impedance,
        &wavelet,
        config.snr_db,
        &mut config.rng(NOISE_STREAM),
    )?;
    let wells = sample_wells(&impedance, config.well_spacing)?;
    Ok(SynthSection {
        impedance,
        seismic,
        wells,
    })
}

/// Normal-incidence reflection coefficients between adjacent samples.
pub fn reflectivity(ai: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = ai.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "impedance must be positive and finite, found {} at sample {i}",
            ai[i]
        )));
    }
    Ok(ai
        .windows(2)
        .map(|w| (w[1] - w[0]) / (w[1] + w[0]))
        .collect())
}

/// Ricker wavelet of peak frequency `f` sampled at `k dt`, `|k| <= half_len`.
pub fn ricker(f: f64, dt: f64, half_len: usize) -> Result<Vec<f64>> {
    if !(f > 0.0 && dt > 0.0) {
        return Err(Error::config(
            "frequency",
            "frequency and dt must be positive",
        ));
    }
    if f * dt >= 0.5 {
        return Err(Error::config(
            "frequency",
            format!("{f} Hz is at or above Nyquist {} Hz", 0.5 / dt),
        ));
    }
    let h = half_len as isize;
    Ok((-h..=h)
        .map(|k| {
            let a = (PI * f * k as f64 * dt).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect())
}

/// Convolutional seismic response of an impedance section.
///
/// Per column the reflectivity, padded with a leading zero back to `d`
/// samples, is convolved with the centered wavelet. With `snr_db` set,
/// white Gaussian noise is added with variance `P / 10^(snr/10)`, `P` being
/// the mean signal power of the whole section.
pub fn forward_model<R: Rng + ?Sized>(
    ai: &SectionGrid,
    wavelet: &[f64],
    snr_db: Option<f64>,
    rng: &mut R,
) -> Result<SectionGrid> {
    if wavelet.len().is_multiple_of(2) {
        return Err(Error::config("wavelet", "length must be odd"));
    }
    let half = wavelet.len() / 2;
    let (d, n) = (ai.depth(), ai.width());
    let mut out = vec![0f64; d * n];
    let mut refl = vec![0f64; d];
    for x in 0..n {
        let col: Vec<f64> = ai.column(x).iter().map(|&v| v as f64).collect();
        refl[1..].copy_from_slice(&reflectivity(&col)?);
        for (j, &r) in refl.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(d - 1);
            for t in lo..=hi {
                out[t * n + x] += r * wavelet[t + half - j];
            }
        }
    }
    if let Some(snr) = snr_db {
        let power = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        if sigma > 0.0 {
            for v in &mut out {
                let e: f64 = rng.sample(StandardNormal);
                *v += sigma * e;
            }
        }
    }
    let values = out.into_iter().map(|v| v as f32).collect();
    ai.with_values(values, GridKind::Seismic)
}

/// Elementwise density times P-velocity.
pub fn impedance_from_density_velocity(rho: &SectionGrid, vp: &SectionGrid) -> Result<SectionGrid> {
    if (rho.depth(), rho.width()) != (vp.depth(), vp.width()) {
        return Err(Error::shape(
            "impedance_from_density_velocity",
            &[rho.depth(), rho.width()],
            &[vp.depth(), vp.width()],
        ));
    }
    let mut values = Vec::with_capacity(rho.values().len());
    for (i, (&r, &v)) in rho.values().iter().zip(vp.values()).enumerate() {
        if !(r > 0.0 && v > 0.0) {
            return Err(Error::Domain(format!(
                "density and velocity must be positive (cell {i}: {r}, {v})"
            )));
        }
        values.push(r * v);
    }
    rho.with_values(values, GridKind::Impedance)
}
