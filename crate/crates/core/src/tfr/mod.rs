//! Complex time-frequency matrices shared by all three transforms.

mod format;

pub use format::{read_csv_header, read_tfr1, write_csv, write_tfr1, TFR1_MAGIC, TFR1_VERSION};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Stft,
    Cqt,
    Cwt,
}

impl TransformKind {
    pub fn code(self) -> u32 {
        match self {
            TransformKind::Stft => 0,
            TransformKind::Cqt => 1,
            TransformKind::Cwt => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(TransformKind::Stft),
            1 => Ok(TransformKind::Cqt),
            2 => Ok(TransformKind::Cwt),
            c => Err(Error::Format(format!("unknown transform kind code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Stft => "stft",
            TransformKind::Cqt => "cqt",
            TransformKind::Cwt => "cwt",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stft" => Ok(TransformKind::Stft),
            "cqt" => Ok(TransformKind::Cqt),
            "cwt" => Ok(TransformKind::Cwt),
            _ => Err(Error::Config(format!("unknown transform kind {s:?}, expected stft, cqt or cwt"))),
        }
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bin-major complex matrix (`bins × frames`) with per-bin centre frequencies.
///
/// `hop` and `source_rate` describe frame timing relative to the audio the
/// caller supplied, even when the transform ran internally at another rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    bins: usize,
    frames: usize,
    center_freqs: Vec<f64>,
    hop: usize,
    source_rate: u32,
    kind: TransformKind,
}

impl ComplexSpectrogram {
    pub fn new(
        data: Vec<Complex64>,
        bins: usize,
        frames: usize,
        center_freqs: Vec<f64>,
        hop: usize,
        source_rate: u32,
        kind: TransformKind,
    ) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::shape(format!("data length {} != {bins} x {frames}", data.len())));
        }
        if center_freqs.len() != bins {
            return Err(Error::shape("one centre frequency per bin required"));
        }
        if center_freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("centre frequencies must be strictly increasing"));
        }
        // STFT bins stop at Nyquist by construction; CQT/CWT rows carry the
        // analysis rate's frequencies and are exempt.
        if kind == TransformKind::Stft {
            if let Some(f) = center_freqs.last() {
                if *f > f64::from(source_rate) / 2.0 {
                    return Err(Error::domain("STFT bin above Nyquist"));
                }
            }
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram entry".into()));
        }
        Ok(Self { data, bins, frames, center_freqs, hop, source_rate, kind })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[Complex64] {
        &self.data[bin * self.frames..(bin + 1) * self.frames]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Index of the largest-magnitude bin in `frame`.
    pub fn argmax_bin(&self, frame: usize) -> usize {
        (0..self.bins).max_by(|&a, &b| self.get(a, frame).norm().total_cmp(&self.get(b, frame).norm())).unwrap_or(0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F / ‖other‖_F`.
    pub fn relative_error(&self, other: &ComplexSpectrogram) -> Result<f64> {
        if self.bins != other.bins || self.frames != other.frames {
            return Err(Error::shape(format!("{}x{} vs {}x{}", self.bins, self.frames, other.bins, other.frames)));
        }
        let diff: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let reference = other.frobenius_norm();
        Ok(if reference == 0.0 { diff } else { diff / reference })
    }

    pub(crate) fn with_timing(mut self, hop: usize, source_rate: u32) -> Self {
        self.hop = hop;
        self.source_rate = source_rate;
        self
    }
}
