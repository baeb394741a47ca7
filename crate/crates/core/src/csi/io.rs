//! CSI grid exchange formats.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `CSIG`                              |
//! | 4      | 4    | format version, `u32` (currently 1)       |
//! | 8      | 56   | seven `f64`: packets, subcarriers, antennas, packet interval (s), subcarrier spacing (Hz), antenna spacing (wavelengths), base frequency (Hz) |
//! | 64     | 8·N  | N = packets·subcarriers·antennas samples, each `f32` re then `f32` im, packet-major then subcarrier then antenna |
//!
//! The CSV dump has header `packet,subcarrier,antenna,re,im`.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{CsiGrid, GridShape, RadioConfig};
use crate::error::{PsanError, Result};

pub const MAGIC: &[u8; 4] = b"CSIG";
pub const VERSION: u32 = 1;

pub fn write_binary<W: Write>(grid: &CsiGrid, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = [
        grid.shape.packets as f64,
        grid.shape.subcarriers as f64,
        grid.shape.antennas as f64,
        grid.radio.packet_interval_s,
        grid.radio.subcarrier_spacing_hz,
        grid.radio.antenna_spacing,
        grid.radio.base_frequency_hz,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(grid.samples().len() * 8);
    for c in grid.samples() {
        buf.extend_from_slice(&(c.re as f32).to_le_bytes());
        buf.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn malformed(message: impl Into<String>) -> PsanError {
    PsanError::Malformed {
        kind: "csi grid",
        message: message.into(),
    }
}

fn dim(v: f64, name: &str) -> Result<usize> {
    if v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(malformed(format!("{name} = {v} is not a positive integer")))
    }
}

pub fn read_binary<R: Read>(mut r: R) -> Result<CsiGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(malformed("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(PsanError::UnsupportedVersion {
            kind: "csi grid",
            found: version,
            expected: VERSION,
        });
    }
    let mut header = [0f64; 7];
    let mut eight = [0u8; 8];
    for h in header.iter_mut() {
        r.read_exact(&mut eight)?;
        *h = f64::from_le_bytes(eight);
    }
    let shape = GridShape::new(
        dim(header[0], "packets")?,
        dim(header[1], "subcarriers")?,
        dim(header[2], "antennas")?,
    );
    let radio = RadioConfig {
        packet_interval_s: header[3],
        subcarrier_spacing_hz: header[4],
        antenna_spacing: header[5],
        base_frequency_hz: header[6],
    };
    radio.validate()?;
    let mut payload = vec![0u8; shape.len() * 8];
    r.read_exact(&mut payload)?;
    let samples = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(malformed("trailing bytes after payload"));
    }
    CsiGrid::from_samples(shape, radio, samples)
}

pub fn write_csv<W: Write>(grid: &CsiGrid, mut w: W) -> Result<()> {
    writeln!(w, "packet,subcarrier,antenna,re,im")?;
    for t in 0..grid.shape.packets {
        for s in 0..grid.shape.subcarriers {
            for a in 0..grid.shape.antennas {
                let c = grid.get(t, s, a);
                writeln!(w, "{t},{s},{a},{},{}", c.re, c.im)?;
            }
        }
    }
    Ok(())
}
