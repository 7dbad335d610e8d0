//! Log-mel spectrogram on top of the STFT, with a backward pass for the
//! reconstruction loss.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::stft::{stft, stft_adjoint, StftConfig};
use crate::tfr::ComplexSpectrogram;

/// Linear-magnitude values are clipped here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
    pub stft: StftConfig,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { n_mels: 100, fmin: 0.0, fmax: 12000.0, sample_rate: 24000, stft: StftConfig::new(1024, 256, 1024) }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK filters with unit peak, row-major `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, rate: u32, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    let nyquist = f64::from(rate) / 2.0;
    if n_mels == 0 || !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(Error::domain(format!(
            "mel band [{fmin}, {fmax}] Hz with {n_mels} filters is invalid at {rate} Hz"
        )));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * f64::from(rate) / n_fft as f64;
            let rise = (f - left) / (centre - left);
            let fall = (right - f) / (right - centre);
            fb[m * bins + k] = rise.min(fall).max(0.0);
        }
    }
    Ok(fb)
}

/// Natural-log mel magnitudes, row-major `mels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f64>,
    mels: usize,
    frames: usize,
}

impl MelSpectrogram {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mels(&self) -> usize {
        self.mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.data[mel * self.frames + frame]
    }

    /// First `frames` columns (all of them if fewer exist).
    pub fn take_frames(&self, frames: usize) -> MelSpectrogram {
        let n = frames.min(self.frames);
        let mut data = Vec::with_capacity(self.mels * n);
        for m in 0..self.mels {
            data.extend_from_slice(&self.data[m * self.frames..m * self.frames + n]);
        }
        MelSpectrogram { data, mels: self.mels, frames: n }
    }
}

/// Intermediate values kept from [`MelAnalyzer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MelTrace {
    spec: ComplexSpectrogram,
    linear: Vec<f64>,
    len: usize,
    pub log_mel: MelSpectrogram,
}

#[derive(Debug, Clone)]
pub struct MelAnalyzer {
    cfg: MelConfig,
    filters: Vec<f64>,
}

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.stft.validate()?;
        let filters = mel_filterbank(cfg.n_mels, cfg.stft.n_fft, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
        Ok(Self { cfg, filters })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    pub fn forward(&self, buf: &AudioBuffer) -> Result<MelTrace> {
        if buf.sample_rate() != self.cfg.sample_rate {
            return Err(Error::domain(format!(
                "mel analysis expects {} Hz audio, got {} Hz",
                self.cfg.sample_rate,
                buf.sample_rate()
            )));
        }
        let spec = stft(buf, &self.cfg.stft)?;
        let (bins, frames, mels) = (spec.bins(), spec.frames(), self.cfg.n_mels);
        let mag = spec.magnitudes();
        let mut linear = vec![0.0; mels * frames];
        for m in 0..mels {
            let row = &mut linear[m * frames..(m + 1) * frames];
            for k in 0..bins {
                let w = self.filters[m * bins + k];
                if w == 0.0 {
                    continue;
                }
                for (acc, v) in row.iter_mut().zip(&mag[k * frames..(k + 1) * frames]) {
                    *acc += w * v;
                }
            }
        }
        let data = linear.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
        Ok(MelTrace { spec, linear, len: buf.len(), log_mel: MelSpectrogram { data, mels, frames } })
    }

    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<MelSpectrogram> {
        Ok(self.forward(buf)?.log_mel)
    }

    /// Maps `∂L/∂(log-mel)` to `∂L/∂x` through the magnitude STFT.
    pub fn backward(&self, trace: &MelTrace, grad: &[f64]) -> Result<Vec<f64>> {
        let (bins, frames, mels) = (trace.spec.bins(), trace.spec.frames(), self.cfg.n_mels);
        if grad.len() != mels * frames {
            return Err(Error::shape(format!("mel gradient has {} cells, expected {mels} x {frames}", grad.len())));
        }
        // Clipped cells pass no gradient.
        let d_lin: Vec<f64> =
            grad.iter().zip(&trace.linear).map(|(g, v)| if *v > LOG_FLOOR { g / v } else { 0.0 }).collect();
        let mut d_spec = vec![Complex64::new(0.0, 0.0); bins * frames];
        for k in 0..bins {
            for m in 0..mels {
                let w = self.filters[m * bins + k];
                if w == 0.0 {
                    continue;
                }
                for t in 0..frames {
                    d_spec[k * frames + t].re += w * d_lin[m * frames + t];
                }
            }
        }
        for (g, x) in d_spec.iter_mut().zip(trace.spec.data()) {
            let n = x.norm();
            *g = if n > 0.0 { x * (g.re / n) } else { Complex64::new(0.0, 0.0) };
        }
        stft_adjoint(&d_spec, trace.len, &self.cfg.stft)
    }
}

/// Log-mel spectrogram with the default 24 kHz analysis settings.
pub fn mel_spectrogram(buf: &AudioBuffer) -> Result<MelSpectrogram> {
    MelAnalyzer::new(MelConfig::default())?.log_mel(buf)
}
