//! Minimal SEG-Y reader (rev 0/1 subset: fixed-length traces, no extended
//! textual headers, big-endian IBM or IEEE samples).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geodata::{GridKind, SectionGrid, VerticalAxis};

pub const TEXT_HEADER_LEN: usize = 3200;
pub const BINARY_HEADER_LEN: usize = 400;
pub const TRACE_HEADER_LEN: usize = 240;
const FILE_HEADER_LEN: usize = TEXT_HEADER_LEN + BINARY_HEADER_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegyBinaryHeader {
    pub sample_interval_us: u16,
    pub samples_per_trace: u16,
    /// 1 = IBM float, 5 = IEEE float.
    pub format_code: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegyTrace {
    /// Raw trace header.
    pub header: Vec<u8>,
    /// Trace sequence number within line (bytes 1-4).
    pub sequence_number: i32,
    /// CDP ensemble number (bytes 21-24).
    pub cdp: i32,
    pub samples: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegyFile {
    pub binary_header: SegyBinaryHeader,
    pub traces: Vec<SegyTrace>,
}

/// Decodes a System/360 single-precision hexadecimal float.
pub fn ibm_to_f32(word: u32) -> f32 {
    let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
    let exponent = ((word >> 24) & 0x7f) as i32;
    let fraction = (word & 0x00ff_ffff) as f64;
    // exact in f64: 24-bit fraction times a power of two in [-280, 228]
    let value = fraction * 2f64.powi(4 * (exponent - 64) - 24);
    (sign * value) as f32
}

fn be_u16(b: &[u8], offset: usize) -> u16 {
    u16::from_be_bytes([b[offset], b[offset + 1]])
}

fn be_i32(b: &[u8], offset: usize) -> i32 {
    i32::from_be_bytes(b[offset..offset + 4].try_into().unwrap())
}

/// Parses a whole SEG-Y file held in memory.
pub fn parse_segy(bytes: &[u8]) -> Result<SegyFile> {
    if bytes.len() < FILE_HEADER_LEN {
        return Err(Error::Truncated(format!(
            "{} bytes is shorter than the {FILE_HEADER_LEN}-byte file header",
            bytes.len()
        )));
    }
    // file byte positions 3217, 3221, 3225 (1-based)
    let binary_header = SegyBinaryHeader {
        sample_interval_us: be_u16(bytes, 3216),
        samples_per_trace: be_u16(bytes, 3220),
        format_code: be_u16(bytes, 3224),
    };
    if !matches!(binary_header.format_code, 1 | 5) {
        return Err(Error::UnsupportedFormat(binary_header.format_code));
    }
    let ns = binary_header.samples_per_trace as usize;
    if ns == 0 {
        return Err(Error::ZeroSamples);
    }
    let record = TRACE_HEADER_LEN + 4 * ns;
    let body = &bytes[FILE_HEADER_LEN..];
    if !body.len().is_multiple_of(record) {
        return Err(Error::Truncated(format!(
            "trace {} is cut short: {} of {record} bytes present",
            body.len() / record,
            body.len() % record
        )));
    }
    let mut traces = Vec::with_capacity(body.len() / record);
    for (i, rec) in body.chunks_exact(record).enumerate() {
        let header = &rec[..TRACE_HEADER_LEN];
        // bytes 115-116: samples in this trace (0 = not recorded)
        let own = be_u16(header, 114) as usize;
        if own != 0 && own != ns {
            return Err(Error::InconsistentTraceLength {
                trace: i,
                expected: ns,
                found: own,
            });
        }
        let samples = rec[TRACE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| {
                let word = u32::from_be_bytes(c.try_into().unwrap());
                if binary_header.format_code == 1 {
                    ibm_to_f32(word)
                } else {
                    f32::from_bits(word)
                }
            })
            .collect();
        traces.push(SegyTrace {
            header: header.to_vec(),
            sequence_number: be_i32(header, 0),
            cdp: be_i32(header, 20),
            samples,
        });
    }
    Ok(SegyFile {
        binary_header,
        traces,
    })
}

pub fn read_segy(path: impl AsRef<Path>) -> Result<SegyFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_segy(&bytes)
}

/// Lays the traces out as grid columns in file order.
///
/// Without `dz_override` the header sample interval is kept as-is in
/// microseconds and the grid's vertical axis is marked as time.
pub fn segy_to_grid(
    parsed: &SegyFile,
    dz_override: Option<f32>,
    dx: f32,
    kind: GridKind,
) -> Result<SectionGrid> {
    let first = parsed
        .traces
        .first()
        .ok_or(Error::EmptyInput("segy_to_grid (no traces)"))?;
    let ns = first.samples.len();
    for (i, t) in parsed.traces.iter().enumerate() {
        if t.samples.len() != ns {
            return Err(Error::InconsistentTraceLength {
                trace: i,
                expected: ns,
                found: t.samples.len(),
            });
        }
    }
    let columns: Vec<Vec<f32>> = parsed.traces.iter().map(|t| t.samples.clone()).collect();
    let (dz, axis) = match dz_override {
        Some(dz) => (dz, VerticalAxis::Depth),
        None => (
            parsed.binary_header.sample_interval_us as f32,
            VerticalAxis::Time,
        ),
    };
    let mut grid = SectionGrid::from_columns(&columns, dz, dx, kind)?;
    grid.axis = axis;
    Ok(grid)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Builds a SEG-Y byte image with the given big-endian sample words.
    pub(crate) fn fixture(format: u16, interval: u16, traces: &[Vec<u32>]) -> Vec<u8> {
        let ns = traces.first().map_or(0, Vec::len) as u16;
        let mut b = vec![0x40u8; TEXT_HEADER_LEN];
        b.extend(vec![0u8; BINARY_HEADER_LEN]);
        b[3216..3218].copy_from_slice(&interval.to_be_bytes());
        b[3220..3222].copy_from_slice(&ns.to_be_bytes());
        b[3224..3226].copy_from_slice(&format.to_be_bytes());
        for (i, t) in traces.iter().enumerate() {
            let mut h = vec![0u8; TRACE_HEADER_LEN];
            h[0..4].copy_from_slice(&(i as i32 + 1).to_be_bytes());
            h[20..24].copy_from_slice(&(1000 + i as i32).to_be_bytes());
            b.extend(h);
            for w in t {
                b.extend(w.to_be_bytes());
            }
        }
        b
    }

    fn ieee(values: &[f32]) -> Vec<u32> {
        values.iter().map(|v| v.to_bits()).collect()
    }

    /// Independent encoder: exact for values representable in 24 bits of
    /// hexadecimal fraction.
    fn to_ibm(v: f64) -> u32 {
        if v == 0.0 {
            return 0;
        }
        let sign = if v < 0.0 { 1u32 << 31 } else { 0 };
        let mut m = v.abs();
        let mut e = 64i32;
        while m >= 1.0 {
            m /= 16.0;
            e += 1;
        }
        while m < 1.0 / 16.0 {
            m *= 16.0;
            e -= 1;
        }
        let frac = (m * 16_777_216.0).round() as u32;
        sign | ((e as u32) << 24) | frac
    }

    #[test]
    fn ibm_examples() {
        assert_eq!(ibm_to_f32(0x0000_0000), 0.0);
        assert_eq!(ibm_to_f32(0x4264_0000), 100.0);
        assert_eq!(ibm_to_f32(0xC264_0000), -100.0);
        assert_eq!(ibm_to_f32(0x4110_0000), 1.0);
        assert_eq!(ibm_to_f32(0xC276_A000), -118.625);
        assert_eq!(to_ibm(-118.625), 0xC276_A000);
    }

    fn ulp(v: f32) -> f32 {
        let b = v.abs().to_bits();
        f32::from_bits(b + 1) - f32::from_bits(b)
    }

    #[test]
    fn ibm_table_within_one_ulp() {
        // 64 words spanning both signs and exponents 16^-30 .. 16^+30
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut table = Vec::new();
        for k in 0..64u32 {
            let sign = (k % 2) << 31;
            let exponent = 34 + (k * 60 / 63);
            let fraction = rng.random_range(0x10_0000u32..0x100_0000);
            table.push(sign | (exponent << 24) | fraction);
        }
        for word in table {
            let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
            let e = ((word >> 24) & 0x7f) as i32 - 64;
            let f = (word & 0xff_ffff) as f64 / 16_777_216.0;
            let exact = sign * f * 16f64.powi(e);
            let got = ibm_to_f32(word);
            assert!(
                ((got as f64) - exact).abs() <= ulp(got) as f64,
                "{word:#010x}: {got} vs {exact}"
            );
            assert_eq!(to_ibm(got as f64) & 0x7f00_0000, word & 0x7f00_0000);
        }
    }

    #[test]
    fn ieee_fixture_parses_exactly() {
        let b = fixture(5, 2000, &[ieee(&[1.0, 2.0, 3.0]), ieee(&[4.0, 5.0, 6.0])]);
        assert_eq!(b.len(), 3600 + 2 * (240 + 12));
        let f = parse_segy(&b).unwrap();
        assert_eq!(
            f.binary_header,
            SegyBinaryHeader {
                sample_interval_us: 2000,
                samples_per_trace: 3,
                format_code: 5
            }
        );
        assert_eq!(f.traces.len(), 2);
        assert_eq!(f.traces[0].samples, vec![1.0, 2.0, 3.0]);
        assert_eq!(f.traces[1].samples, vec![4.0, 5.0, 6.0]);
        assert_eq!((f.traces[1].sequence_number, f.traces[1].cdp), (2, 1001));

        let g = segy_to_grid(&f, None, 25.0, GridKind::Seismic).unwrap();
        assert_eq!((g.depth(), g.width()), (3, 2));
        assert_eq!(g.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(g.column(1), vec![4.0, 5.0, 6.0]);
        assert_eq!(g.axis, VerticalAxis::Time);
        assert_eq!(g.dz, 2000.0);
    }

    #[test]
    fn ibm_fixture_parses_exactly() {
        let values = [100.0, -100.0, 0.15625, -118.625, 0.0];
        let words: Vec<u32> = values.iter().map(|&v| to_ibm(v)).collect();
        let f = parse_segy(&fixture(1, 4000, &[words])).unwrap();
        assert_eq!(f.traces[0].samples, values.iter().map(|&v| v as f32).collect::<Vec<_>>());
        let g = segy_to_grid(&f, None, 12.5, GridKind::Density).unwrap();
        assert_eq!((g.depth(), g.width(), g.dz), (5, 1, 4000.0));
        let g = segy_to_grid(&f, Some(5.0), 12.5, GridKind::Density).unwrap();
        assert_eq!((g.dz, g.axis, g.kind), (5.0, VerticalAxis::Depth, GridKind::Density));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_segy(&vec![0u8; 3599]), Err(Error::Truncated(_))));
        let b = fixture(3, 2000, &[ieee(&[1.0])]);
        assert!(matches!(parse_segy(&b), Err(Error::UnsupportedFormat(3))));
        let mut b = fixture(5, 2000, &[ieee(&[1.0])]);
        b[3220..3222].copy_from_slice(&0u16.to_be_bytes());
        assert!(matches!(parse_segy(&b), Err(Error::ZeroSamples)));
        let mut b = fixture(5, 2000, &[ieee(&[1.0, 2.0]), ieee(&[3.0, 4.0])]);
        let second = 3600 + 248 + 114;
        b[second..second + 2].copy_from_slice(&7u16.to_be_bytes());
        assert!(matches!(
            parse_segy(&b),
            Err(Error::InconsistentTraceLength { trace: 1, expected: 2, found: 7 })
        ));
    }

    #[test]
    fn ragged_traces_are_rejected_by_grid_conversion() {
        let mut f = parse_segy(&fixture(5, 2000, &[ieee(&[1.0, 2.0]), ieee(&[3.0, 4.0])])).unwrap();
        f.traces[1].samples.pop();
        assert!(matches!(
            segy_to_grid(&f, None, 1.0, GridKind::Seismic),
            Err(Error::InconsistentTraceLength { .. })
        ));
        f.traces.clear();
        assert!(segy_to_grid(&f, None, 1.0, GridKind::Seismic).is_err());
    }

    #[test]
    fn truncated_files_fail_cleanly() {
        let traces: Vec<Vec<u32>> = (0..4).map(|t| ieee(&[t as f32; 6])).collect();
        let full = fixture(5, 1000, &traces);
        let record = 240 + 24;
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..1000 {
            let len = rng.random_range(0..=full.len());
            match parse_segy(&full[..len]) {
                Ok(f) => {
                    assert!(len >= 3600 && (len - 3600) % record == 0);
                    assert_eq!(f.traces.len(), (len - 3600) / record);
                }
                Err(e) => assert!(matches!(e, Error::Truncated(_)), "{len}: {e}"),
            }
        }
    }
}
