//! Constant-Q transform: plan construction, a literal-summation reference and
//! an octave-recursive fast path with its transpose.

mod fast;
mod oracle;

pub use fast::{cqt_fast, cqt_fast_adjoint};
pub use oracle::cqt_oracle;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, Resampler};
use crate::error::{Error, Result};
use crate::tfr::ComplexSpectrogram;

/// C1, the lowest note the default plans resolve.
pub const DEFAULT_F1: f64 = 32.7;
pub const DEFAULT_OCTAVES: usize = 9;
/// Frame hop relative to the caller's (pre-upsampling) audio.
pub const DEFAULT_HOP: usize = 256;
pub const DEFAULT_BINS_PER_OCTAVE: [usize; 3] = [24, 36, 48];

/// Kernel of one bin resampled for evaluation at `rate / 2^level`.
#[derive(Debug, Clone)]
pub(crate) struct OctaveKernel {
    pub half: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CqtPlan {
    bins_per_octave: usize,
    n_octaves: usize,
    f1: f64,
    hop: usize,
    rate: u32,
    q: f64,
    freqs: Vec<f64>,
    lengths: Vec<usize>,
    octave_kernels: Vec<OctaveKernel>,
}

fn nearest_odd(r: f64) -> usize {
    let n = r.round();
    let n = if n % 2.0 == 0.0 {
        if r >= n {
            n + 1.0
        } else {
            n - 1.0
        }
    } else {
        n
    };
    n.max(1.0) as usize
}

pub fn build_plan(bins_per_octave: usize, f1: f64, n_octaves: usize, hop: usize, rate: u32) -> Result<CqtPlan> {
    if bins_per_octave == 0 || n_octaves == 0 || hop == 0 || rate == 0 {
        return Err(Error::domain("bins per octave, octave count, hop and rate must be positive"));
    }
    if !(f1 > 0.0 && f1.is_finite()) {
        return Err(Error::domain(format!("f1 must be positive, got {f1}")));
    }
    let b = bins_per_octave as f64;
    let k_total = bins_per_octave * n_octaves;
    let freqs: Vec<f64> = (0..k_total).map(|k| f1 * 2f64.powf(k as f64 / b)).collect();
    let nyquist = f64::from(rate) / 2.0;
    if let Some((k, f)) = freqs.iter().enumerate().find(|(_, f)| **f >= nyquist) {
        return Err(Error::domain(format!("bin {k} centre {f:.2} Hz reaches the Nyquist frequency {nyquist} Hz")));
    }
    let q = 1.0 / (2f64.powf(1.0 / b) - 1.0);
    let lengths: Vec<usize> = freqs.iter().map(|f| nearest_odd(f64::from(rate) / f * q)).collect();
    let mut plan = CqtPlan { bins_per_octave, n_octaves, f1, hop, rate, q, freqs, lengths, octave_kernels: Vec::new() };
    plan.octave_kernels = (0..k_total)
        .map(|k| {
            let level = plan.level_of(k);
            let step = 1usize << level;
            let half = plan.half_len(k) / step;
            let mut re = Vec::with_capacity(2 * half + 1);
            let mut im = Vec::with_capacity(2 * half + 1);
            for i in 0..=2 * half {
                let tau = (i as i64 - half as i64) * step as i64;
                let a = plan.kernel_at(k, tau);
                re.push(a.0 * step as f64);
                im.push(a.1 * step as f64);
            }
            OctaveKernel { half, re, im }
        })
        .collect();
    Ok(plan)
}

impl CqtPlan {
    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn bins_per_octave(&self) -> usize {
        self.bins_per_octave
    }

    pub fn n_octaves(&self) -> usize {
        self.n_octaves
    }

    pub fn f1(&self) -> f64 {
        self.f1
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Window length `N_k` in samples at the plan rate.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Bandwidth of bin `k` from the closed form `f1·2^(k/B) / Q`.
    pub fn bandwidth(&self, k: usize) -> f64 {
        self.f1 * 2f64.powf(k as f64 / self.bins_per_octave as f64) / self.q
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub(crate) fn half_len(&self, k: usize) -> usize {
        (self.lengths[k] - 1) / 2
    }

    /// Octave counted down from the top; 0 is evaluated at full rate.
    pub(crate) fn level_of(&self, k: usize) -> usize {
        (self.bins() - 1 - k) / self.bins_per_octave
    }

    /// `a_k(τ)` for τ in `[-h, h]`, returned as (re, im).
    pub fn kernel_at(&self, k: usize, tau: i64) -> (f64, f64) {
        let n = self.lengths[k] as f64;
        let u = tau as f64 / n + 0.5;
        let w = (0.5 - 0.5 * (2.0 * PI * u).cos()) / n;
        let phase = -2.0 * PI * tau as f64 * self.q / n;
        (w * phase.cos(), w * phase.sin())
    }

    /// Full-rate kernel of bin `k`, centre sample at index `h`.
    pub fn kernel(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.half_len(k) as i64;
        (-h..=h).map(|tau| self.kernel_at(k, tau)).unzip()
    }

    pub(crate) fn octave_kernel(&self, k: usize) -> &OctaveKernel {
        &self.octave_kernels[k]
    }
}

/// Settings shared by every resolution of a multi-resolution CQT set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqtSettings {
    pub f1: f64,
    pub n_octaves: usize,
    pub hop: usize,
    pub bins_per_octave: Vec<usize>,
}

impl Default for CqtSettings {
    fn default() -> Self {
        Self {
            f1: DEFAULT_F1,
            n_octaves: DEFAULT_OCTAVES,
            hop: DEFAULT_HOP,
            bins_per_octave: DEFAULT_BINS_PER_OCTAVE.to_vec(),
        }
    }
}

/// Upsample ×2, run the fast CQT, report timing at the input rate.
///
/// Linear in the waveform, so [`CqtPipeline::adjoint`] is its exact transpose.
#[derive(Debug, Clone)]
pub struct CqtPipeline {
    plan: CqtPlan,
    upsampler: Resampler,
    source_rate: u32,
    hop: usize,
}

impl CqtPipeline {
    pub fn new(bins_per_octave: usize, f1: f64, n_octaves: usize, hop: usize, source_rate: u32) -> Result<Self> {
        let plan = build_plan(bins_per_octave, f1, n_octaves, hop * 2, source_rate * 2)?;
        Ok(Self { plan, upsampler: Resampler::new(source_rate, source_rate * 2)?, source_rate, hop })
    }

    pub fn plan(&self) -> &CqtPlan {
        &self.plan
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn forward(&self, samples: &[f64]) -> Result<ComplexSpectrogram> {
        let up = AudioBuffer::new(self.upsampler.process(samples), self.plan.rate)?;
        Ok(cqt_fast(&up, &self.plan)?.with_timing(self.hop, self.source_rate))
    }

    /// Gradient w.r.t. the `len` input samples given `∂L/∂Re + i ∂L/∂Im`.
    pub fn adjoint(&self, grad: &[rustfft::num_complex::Complex64], len: usize) -> Result<Vec<f64>> {
        let up_len = self.upsampler.output_len(len);
        let g_up = cqt_fast_adjoint(grad, up_len, &self.plan)?;
        Ok(self.upsampler.adjoint(&g_up, len))
    }
}

pub fn multi_res_cqt_set_with(buf: &AudioBuffer, settings: &CqtSettings) -> Result<Vec<ComplexSpectrogram>> {
    settings
        .bins_per_octave
        .iter()
        .map(|&b| {
            CqtPipeline::new(b, settings.f1, settings.n_octaves, settings.hop, buf.sample_rate())?
                .forward(buf.samples())
        })
        .collect()
}

/// One CQT per entry of `bins_per_octave` with the default f1, octaves and hop.
pub fn multi_res_cqt_set(buf: &AudioBuffer, bins_per_octave: &[usize]) -> Result<Vec<ComplexSpectrogram>> {
    multi_res_cqt_set_with(buf, &CqtSettings { bins_per_octave: bins_per_octave.to_vec(), ..CqtSettings::default() })
}
