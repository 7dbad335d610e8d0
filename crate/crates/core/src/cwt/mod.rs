//! Continuous wavelet transform at unit hop with complex Morlet and complex
//! Gaussian mother wavelets.

mod square;
mod wavelet;

pub use square::{square_wave_error, SquareWaveBasis, SQUARE_PERIOD, TRANSIENT_WINDOW};
pub use wavelet::{Wavelet, WaveletBasis, NORM_DT};

use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::exec;
use crate::tfr::{ComplexSpectrogram, TransformKind};

/// `count` values evenly spaced from 1 to `max_scale`, both ends included.
pub fn make_scales(max_scale: usize, count: usize) -> Result<Vec<f64>> {
    if max_scale < 1 || count < 2 {
        return Err(Error::domain(format!("need max_scale >= 1 and count >= 2, got {max_scale} and {count}")));
    }
    let step = (max_scale as f64 - 1.0) / (count as f64 - 1.0);
    Ok((0..count).map(|i| if i + 1 == count { max_scale as f64 } else { 1.0 + step * i as f64 }).collect())
}

#[derive(Debug, Clone)]
pub struct CwtPlan {
    wavelet: Wavelet,
    scales: Vec<f64>,
    rate: u32,
    /// Filter spectra for the last signal length, shared between clones.
    bank: Arc<Mutex<Option<Arc<Bank>>>>,
}

/// Largest filter bank kept in memory, in complex values.
const BANK_LIMIT: usize = 1 << 22;

#[derive(Debug)]
struct Bank {
    len: usize,
    spectra: Vec<Vec<Complex64>>,
}

impl CwtPlan {
    pub fn new(basis: WaveletBasis, scales: Vec<f64>, rate: u32) -> Result<Self> {
        if scales.is_empty() || scales[0] < 1.0 || scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("scales must be strictly increasing and at least 1"));
        }
        if rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        Ok(Self { wavelet: Wavelet::new(basis)?, scales, rate, bank: Arc::default() })
    }

    pub fn wavelet(&self) -> &Wavelet {
        &self.wavelet
    }

    pub fn basis(&self) -> WaveletBasis {
        self.wavelet.basis()
    }

    /// Scales in increasing order.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn rows(&self) -> usize {
        self.scales.len()
    }

    /// Output rows run from the largest scale down so frequency increases.
    pub fn scale_of_row(&self, row: usize) -> f64 {
        self.scales[self.scales.len() - 1 - row]
    }

    pub fn frequency_of_scale(&self, a: f64) -> f64 {
        f64::from(self.rate) * self.wavelet.center_frequency() / a
    }

    pub fn bandwidth_of_scale(&self, a: f64) -> f64 {
        f64::from(self.rate) * self.wavelet.bandwidth() / a
    }

    /// Implied centre frequencies, one per output row (ascending).
    pub fn center_freqs(&self) -> Vec<f64> {
        (0..self.rows()).map(|r| self.frequency_of_scale(self.scale_of_row(r))).collect()
    }

    /// `a^{-1/2} ψ(τ/a)` for τ in `[-M, M]`.
    fn taps(&self, a: f64) -> Vec<Complex64> {
        let norm = a.sqrt().recip();
        self.wavelet.child(a).into_iter().map(|c| c * norm).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::domain("cannot analyse an empty buffer"));
        }
        let widest = *self.scales.last().unwrap_or(&1.0);
        let taps = 2 * self.wavelet.child_half_len(widest) + 1;
        if taps > 4 * len {
            return Err(Error::domain(format!(
                "child wavelet at scale {widest} spans {taps} samples, more than 4x the {len}-sample signal"
            )));
        }
        Ok(())
    }

    fn spectrogram(&self, data: Vec<Complex64>, frames: usize) -> Result<ComplexSpectrogram> {
        ComplexSpectrogram::new(data, self.rows(), frames, self.center_freqs(), 1, self.rate, TransformKind::Cwt)
    }
}

struct Conv {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Conv {
    fn new(plan: &CwtPlan, len: usize) -> Self {
        let widest = *plan.scales.last().unwrap_or(&1.0);
        let n = (len + plan.wavelet.child_half_len(widest) + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Spectrum of the correlation filter of row `r`: `conj ψ` reversed,
    /// placed at `m mod n`.
    fn filter(&self, plan: &CwtPlan, r: usize) -> Vec<Complex64> {
        let taps = plan.taps(plan.scale_of_row(r));
        let half = (taps.len() - 1) / 2;
        let mut g = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, t) in taps.iter().enumerate() {
            let m = half as i64 - i as i64;
            g[m.rem_euclid(self.n as i64) as usize] = t.conj();
        }
        self.forward.process(&mut g);
        g
    }

    /// Row filter spectra, cached on the plan when small enough.
    fn filters(&self, plan: &CwtPlan, len: usize) -> Arc<Bank> {
        let build = || Arc::new(Bank { len, spectra: exec::map_range(plan.rows(), |r| self.filter(plan, r)) });
        if plan.rows() * self.n > BANK_LIMIT {
            return build();
        }
        let mut slot = plan.bank.lock().unwrap_or_else(|e| e.into_inner());
        match slot.as_ref() {
            Some(b) if b.len == len => b.clone(),
            _ => {
                let b = build();
                *slot = Some(b.clone());
                b
            }
        }
    }

    /// First `len` samples of the circular product `spec · filter` (or its
    /// conjugate) back in the time domain.
    fn apply(&self, spec: &[Complex64], filter: &[Complex64], conj: bool, len: usize) -> Vec<Complex64> {
        let mut g: Vec<Complex64> =
            spec.iter().zip(filter).map(|(a, b)| if conj { a * b.conj() } else { a * b }).collect();
        self.inverse.process(&mut g);
        let scale = 1.0 / self.n as f64;
        g.truncate(len);
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }
}

/// FFT-convolution CWT, `X(k, n) = a_k^{-1/2} Σ_j x(j) conj(ψ((j - n)/a_k))`
/// with zeros outside the signal; one column per sample.
pub fn cwt(buf: &AudioBuffer, plan: &CwtPlan) -> Result<ComplexSpectrogram> {
    let x = buf.samples();
    plan.check(x.len())?;
    let conv = Conv::new(plan, x.len());
    let spec = conv.spectrum(x);
    let bank = conv.filters(plan, x.len());
    let rows = exec::map_range(plan.rows(), |r| conv.apply(&spec, &bank.spectra[r], false, x.len()));
    plan.spectrogram(rows.concat(), x.len())
}

/// Literal summation reference for [`cwt`].
pub fn cwt_direct(buf: &AudioBuffer, plan: &CwtPlan) -> Result<ComplexSpectrogram> {
    let x = buf.samples();
    plan.check(x.len())?;
    let len = x.len() as i64;
    let mut data = Vec::with_capacity(plan.rows() * x.len());
    for r in 0..plan.rows() {
        let taps = plan.taps(plan.scale_of_row(r));
        let half = ((taps.len() - 1) / 2) as i64;
        for n in 0..len {
            let mut acc = Complex64::new(0.0, 0.0);
            for tau in (-half).max(-n)..=half.min(len - 1 - n) {
                acc += taps[(tau + half) as usize].conj() * x[(n + tau) as usize];
            }
            data.push(acc);
        }
    }
    plan.spectrogram(data, x.len())
}

/// Transpose of [`cwt`]: maps `∂L/∂Re X + i ∂L/∂Im X` to `∂L/∂x`.
pub fn cwt_adjoint(grad: &[Complex64], len: usize, plan: &CwtPlan) -> Result<Vec<f64>> {
    plan.check(len)?;
    if grad.len() != plan.rows() * len {
        return Err(Error::shape(format!("gradient has {} cells, expected {} x {len}", grad.len(), plan.rows())));
    }
    let conv = Conv::new(plan, len);
    let bank = conv.filters(plan, len);
    let parts = exec::map_range(plan.rows(), |r| {
        // Correlation transposes to convolution: multiply by the conjugate
        // filter spectrum.
        let mut buf = vec![Complex64::new(0.0, 0.0); conv.n];
        buf[..len].copy_from_slice(&grad[r * len..(r + 1) * len]);
        conv.forward.process(&mut buf);
        conv.apply(&buf, &bank.spectra[r], true, len)
    });
    let mut out = vec![0.0; len];
    for part in parts {
        for (o, v) in out.iter_mut().zip(&part) {
            *o += v.re;
        }
    }
    Ok(out)
}

/// Scale range and mother wavelet of one member of a multi-scale set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleBasis {
    pub max_scale: usize,
    /// Number of scales; defaults to `max_scale` (unit spacing).
    #[serde(default)]
    pub count: Option<usize>,
    pub basis: WaveletBasis,
}

impl ScaleBasis {
    pub const fn new(max_scale: usize, basis: WaveletBasis) -> Self {
        Self { max_scale, count: None, basis }
    }

    pub fn plan(&self, rate: u32) -> Result<CwtPlan> {
        let scales = make_scales(self.max_scale, self.count.unwrap_or(self.max_scale))?;
        CwtPlan::new(self.basis, scales, rate)
    }
}

pub const DEFAULT_SCALE_BASES: [ScaleBasis; 3] = [
    ScaleBasis::new(512, WaveletBasis::CMOR),
    ScaleBasis::new(256, WaveletBasis::CGAU1),
    ScaleBasis::new(128, WaveletBasis::CGAU8),
];

pub fn multi_scale_basis_set(buf: &AudioBuffer, pairs: &[ScaleBasis]) -> Result<Vec<ComplexSpectrogram>> {
    pairs.iter().map(|p| cwt(buf, &p.plan(buf.sample_rate())?)).collect()
}
