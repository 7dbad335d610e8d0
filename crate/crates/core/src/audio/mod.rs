//! Mono sample buffers, WAV I/O, resampling and deterministic test tones.

pub(crate) mod resample;
mod wav;

pub use resample::{resample, resample_adjoint, Resampler};
pub use wav::{load_wav, save_wav, save_wav_with, WavEncoding};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate. Samples are stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Copy of `len` samples starting at `start`, zero-filled past the end.
    pub fn segment(&self, start: usize, len: usize) -> AudioBuffer {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let n = len.min(self.samples.len() - start);
            out[..n].copy_from_slice(&self.samples[start..start + n]);
        }
        AudioBuffer { samples: out, sample_rate: self.sample_rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToneKind {
    Sine,
    Sawtooth,
    ImpulseTrain,
}

/// Peak amplitude of every generated tone.
pub const TONE_PEAK: f64 = 0.8;

/// Deterministic test signal of `round(dur * rate)` samples.
pub fn synth_tone(freq: f64, dur: f64, rate: u32, kind: ToneKind) -> Result<AudioBuffer> {
    let fs = f64::from(rate);
    if !(freq > 0.0 && freq < fs / 2.0) {
        return Err(Error::domain(format!("tone frequency {freq} Hz must lie in (0, {}) Hz", fs / 2.0)));
    }
    if !(dur >= 0.0) {
        return Err(Error::domain("duration must be non-negative"));
    }
    let n = (dur * fs).round() as usize;
    let cycles = |i: usize| i as f64 * freq / fs;
    let samples = match kind {
        ToneKind::Sine => (0..n).map(|i| TONE_PEAK * (2.0 * PI * cycles(i)).sin()).collect(),
        ToneKind::Sawtooth => (0..n)
            .map(|i| {
                let c = cycles(i);
                TONE_PEAK * (2.0 * (c - c.floor()) - 1.0)
            })
            .collect(),
        ToneKind::ImpulseTrain => (0..n)
            .map(|i| {
                let fires = i == 0 || cycles(i).floor() > cycles(i - 1).floor();
                if fires {
                    TONE_PEAK
                } else {
                    0.0
                }
            })
            .collect(),
    };
    AudioBuffer::new(samples, rate)
}

/// Sine whose pitch swings `depth_cents` either side of `freq`, `wobble`
/// times per second. Gives a pitch track with nonzero variance.
pub fn synth_vibrato(freq: f64, depth_cents: f64, wobble: f64, dur: f64, rate: u32) -> Result<AudioBuffer> {
    let fs = f64::from(rate);
    let top = freq * 2f64.powf(depth_cents.abs() / 1200.0);
    if !(freq > 0.0 && top < fs / 2.0) {
        return Err(Error::domain(format!("vibrato up to {top} Hz does not fit below {} Hz", fs / 2.0)));
    }
    if !(dur >= 0.0) {
        return Err(Error::domain("duration must be non-negative"));
    }
    let n = (dur * fs).round() as usize;
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let s = TONE_PEAK * (2.0 * PI * phase).sin();
            phase += freq * 2f64.powf(depth_cents / 1200.0 * (2.0 * PI * wobble * t).sin()) / fs;
            phase -= phase.floor();
            s
        })
        .collect();
    AudioBuffer::new(samples, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(AudioBuffer::new(vec![0.0], 0), Err(Error::Domain(_))));
        assert!(matches!(AudioBuffer::new(vec![0.0, f64::NAN], 8000), Err(Error::Numeric(_))));
    }

    #[test]
    fn sine_has_expected_length_and_period() {
        let tone = synth_tone(440.0, 1.0, 24000, ToneKind::Sine).unwrap();
        assert_eq!(tone.len(), 24000);
        // Autocorrelation peak near 24000 / 440 = 54.5 samples.
        let x = tone.samples();
        let ac = |lag: usize| -> f64 { x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() };
        let best = (40..70).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
        assert!(best == 54 || best == 55, "period {best}");
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - TONE_PEAK).abs() < 1e-3);
    }

    #[test]
    fn impulse_train_period() {
        let tone = synth_tone(100.0, 0.1, 24000, ToneKind::ImpulseTrain).unwrap();
        let hits: Vec<usize> = tone.samples().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(hits, (0..10).map(|k| k * 240).collect::<Vec<_>>());
    }

    #[test]
    fn nyquist_tone_is_rejected() {
        assert!(matches!(synth_tone(12000.0, 1.0, 24000, ToneKind::Sawtooth), Err(Error::Domain(_))));
    }

    #[test]
    fn segment_zero_fills() {
        let buf = AudioBuffer::new(vec![1.0, 2.0, 3.0], 8000).unwrap();
        assert_eq!(buf.segment(1, 4).samples(), &[2.0, 3.0, 0.0, 0.0]);
    }
}
