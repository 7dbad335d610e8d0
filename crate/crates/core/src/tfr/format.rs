//! The `TFR1` binary container and a long-form CSV dump.
//!
//! Layout (all little-endian):
//!
//! | bytes | content                                            |
//! |-------|----------------------------------------------------|
//! | 0..4  | magic `b"TFR1"`                                    |
//! | 4..8  | u32 format version (1)                             |
//! | 8..16 | reserved, zero                                     |
//! | 16..36| u32 `kind`, `K` (bins), `T` (frames), `hop`, `rate`|
//! | ...   | `K` × f64 centre frequencies                       |
//! | ...   | `K·T` × (f32 re, f32 im), bin-major               |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;

use super::{ComplexSpectrogram, TransformKind};
use crate::error::{Error, Result};

pub const TFR1_MAGIC: [u8; 4] = *b"TFR1";
pub const TFR1_VERSION: u32 = 1;

pub fn write_tfr1(spec: &ComplexSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&TFR1_MAGIC)?;
    w.write_all(&TFR1_VERSION.to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    let header = [
        spec.kind().code(),
        to_u32(spec.bins(), "bins")?,
        to_u32(spec.frames(), "frames")?,
        to_u32(spec.hop(), "hop")?,
        spec.source_rate(),
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in spec.center_freqs() {
        w.write_all(&f.to_le_bytes())?;
    }
    for c in spec.data() {
        w.write_all(&(c.re as f32).to_le_bytes())?;
        w.write_all(&(c.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated TFR1 file".into()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tfr1(path: impl AsRef<Path>) -> Result<ComplexSpectrogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut r, &mut magic)?;
    if magic != TFR1_MAGIC {
        return Err(Error::Format("bad TFR1 magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != TFR1_VERSION {
        return Err(Error::Unsupported(format!("TFR1 version {version}")));
    }
    let mut reserved = [0u8; 8];
    read_exact_or_format(&mut r, &mut reserved)?;
    let kind = TransformKind::from_code(read_u32(&mut r)?)?;
    let bins = read_u32(&mut r)? as usize;
    let frames = read_u32(&mut r)? as usize;
    let hop = read_u32(&mut r)? as usize;
    let rate = read_u32(&mut r)?;
    let mut freqs = Vec::with_capacity(bins);
    for _ in 0..bins {
        let mut b = [0u8; 8];
        read_exact_or_format(&mut r, &mut b)?;
        freqs.push(f64::from_le_bytes(b));
    }
    let n = bins.checked_mul(frames).ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let mut raw = vec![0u8; n * 8];
    read_exact_or_format(&mut r, &mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(f64::from(re), f64::from(im))
        })
        .collect();
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after TFR1 payload".into()));
    }
    ComplexSpectrogram::new(data, bins, frames, freqs, hop, rate, kind)
}

/// Long-form CSV: `bin,center_hz,frame,re,im`.
pub fn write_csv(spec: &ComplexSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin,center_hz,frame,re,im")?;
    for k in 0..spec.bins() {
        let f = spec.center_freqs()[k];
        for (t, c) in spec.row(k).iter().enumerate() {
            writeln!(w, "{k},{f},{t},{},{}", c.re, c.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Returns the header line of a CSV dump; used to sanity-check exports.
pub fn read_csv_header(path: impl AsRef<Path>) -> Result<String> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line.trim_end().to_string())
}
