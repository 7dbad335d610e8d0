//! Short-time Fourier analysis, overlap-add synthesis and the transpose map
//! used to push gradients from a spectrogram back onto the waveform.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::exec;
use crate::tfr::{ComplexSpectrogram, TransformKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_len: usize,
}

impl StftConfig {
    pub const fn new(n_fft: usize, hop: usize, win_len: usize) -> Self {
        Self { n_fft, hop, win_len }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0 && self.hop <= self.win_len && self.win_len <= self.n_fft) {
            return Err(Error::domain(format!(
                "need 0 < hop ({}) <= win_len ({}) <= n_fft ({})",
                self.hop, self.win_len, self.n_fft
            )));
        }
        Ok(())
    }

    /// Number of centred frames for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Periodic Hann of `win_len`, zero-padded symmetrically to `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_len) / 2;
        for (i, v) in w[offset..offset + self.win_len].iter_mut().enumerate() {
            *v = 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win_len as f64).cos();
        }
        w
    }

    fn check_signal(&self, len: usize) -> Result<()> {
        self.validate()?;
        if len <= self.n_fft / 2 {
            return Err(Error::domain(format!(
                "signal of {len} samples too short for reflect padding of {}",
                self.n_fft / 2
            )));
        }
        Ok(())
    }
}

/// Default multi-resolution set: n_fft ∈ {2048, 1024, 512}, hop = win / 4.
pub const DEFAULT_RESOLUTIONS: [StftConfig; 3] =
    [StftConfig::new(2048, 512, 2048), StftConfig::new(1024, 256, 1024), StftConfig::new(512, 128, 512)];

/// Reflect-mode index into a signal of length `len` (edge sample not repeated).
pub(crate) fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as i64 {
        r = period - r;
    }
    r as usize
}

fn center_freqs(cfg: &StftConfig, rate: u32) -> Vec<f64> {
    (0..cfg.bins()).map(|k| k as f64 * f64::from(rate) / cfg.n_fft as f64).collect()
}

struct Plan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plan {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }
}

/// Centred, reflect-padded STFT with a periodic Hann window.
pub fn stft(buf: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let x = buf.samples();
    cfg.check_signal(x.len())?;
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let frames = cfg.frames(x.len());
    let window = cfg.window();
    let plan = Plan::new(n);
    let columns: Vec<Vec<Complex64>> = exec::map_range(frames, |t| {
        let start = (t * cfg.hop) as i64 - (n / 2) as i64;
        let mut frame: Vec<Complex64> = (0..n)
            .map(|j| {
                let s = x[reflect_index(start + j as i64, x.len())];
                Complex64::new(s * window[j], 0.0)
            })
            .collect();
        plan.forward.process(&mut frame);
        frame.truncate(bins);
        frame
    });
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    for (t, col) in columns.iter().enumerate() {
        for (k, c) in col.iter().enumerate() {
            data[k * frames + t] = *c;
        }
    }
    ComplexSpectrogram::new(
        data,
        bins,
        frames,
        center_freqs(cfg, buf.sample_rate()),
        cfg.hop,
        buf.sample_rate(),
        TransformKind::Stft,
    )
}

/// Literal frame-by-frame DFT summation. Reference path for [`stft`].
pub fn stft_direct(buf: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let x = buf.samples();
    cfg.check_signal(x.len())?;
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let frames = cfg.frames(x.len());
    let window = cfg.window();
    let twiddle: Vec<Complex64> = (0..n).map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64)).collect();
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    for t in 0..frames {
        let start = (t * cfg.hop) as i64 - (n / 2) as i64;
        let frame: Vec<f64> = (0..n).map(|j| x[reflect_index(start + j as i64, x.len())] * window[j]).collect();
        for k in 0..bins {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in frame.iter().enumerate() {
                acc += twiddle[(j * k) % n] * *v;
            }
            data[k * frames + t] = acc;
        }
    }
    ComplexSpectrogram::new(
        data,
        bins,
        frames,
        center_freqs(cfg, buf.sample_rate()),
        cfg.hop,
        buf.sample_rate(),
        TransformKind::Stft,
    )
}

/// Window-squared weighted overlap-add inverse of [`stft`].
///
/// `length` trims or zero-extends the output; by default `(T - 1) * hop`.
pub fn istft(spec: &ComplexSpectrogram, win_len: usize, hop: usize, length: Option<usize>) -> Result<AudioBuffer> {
    if spec.bins() < 2 {
        return Err(Error::domain("spectrogram needs at least two bins"));
    }
    let n = (spec.bins() - 1) * 2;
    let cfg = StftConfig::new(n, hop, win_len);
    cfg.validate()?;
    if hop > win_len / 2 {
        return Err(Error::domain(format!("hop {hop} > win_len/2 violates the Hann overlap-add condition")));
    }
    let frames = spec.frames();
    let window = cfg.window();
    let plan = Plan::new(n);
    let padded_len = n + hop * frames.saturating_sub(1);
    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let blocks: Vec<Vec<f64>> = exec::map_range(frames, |t| {
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..spec.bins() {
            full[k] = spec.get(k, t);
        }
        for k in 1..n / 2 {
            full[n - k] = full[k].conj();
        }
        plan.inverse.process(&mut full);
        full.iter().zip(&window).map(|(c, w)| c.re / n as f64 * w).collect()
    });
    for (t, block) in blocks.iter().enumerate() {
        let start = t * hop;
        for j in 0..n {
            out[start + j] += block[j];
            norm[start + j] += window[j] * window[j];
        }
    }
    let len = length.unwrap_or(hop * frames.saturating_sub(1));
    let samples = (0..len)
        .map(|i| {
            let p = i + n / 2;
            if p < padded_len && norm[p] > 1e-11 {
                out[p] / norm[p]
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(samples, spec.source_rate())
}

/// Transpose of [`stft`] for a real input of `len` samples.
///
/// `grad` holds `∂L/∂Re X + i ∂L/∂Im X` in the spectrogram's bin-major
/// layout; the result is `∂L/∂x`.
pub fn stft_adjoint(grad: &[Complex64], len: usize, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.check_signal(len)?;
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let frames = cfg.frames(len);
    if grad.len() != bins * frames {
        return Err(Error::shape(format!("gradient has {} cells, expected {bins} x {frames}", grad.len())));
    }
    let window = cfg.window();
    let plan = Plan::new(n);
    let blocks: Vec<Vec<f64>> = exec::map_range(frames, |t| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..bins {
            buf[k] = grad[k * frames + t];
        }
        plan.inverse.process(&mut buf);
        buf.iter().zip(&window).map(|(c, w)| c.re * w).collect()
    });
    let mut out = vec![0.0; len];
    for (t, block) in blocks.iter().enumerate() {
        let start = (t * cfg.hop) as i64 - (n / 2) as i64;
        for (j, g) in block.iter().enumerate() {
            out[reflect_index(start + j as i64, len)] += g;
        }
    }
    Ok(out)
}

pub fn multi_res_stft_set(buf: &AudioBuffer, configs: &[StftConfig]) -> Result<Vec<ComplexSpectrogram>> {
    configs.iter().map(|c| stft(buf, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_tone, ToneKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, rate: u32, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), rate).unwrap()
    }

    #[test]
    fn reflect_matches_numpy_convention() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = stft(&AudioBuffer::silence(4000, 24000).unwrap(), &StftConfig::new(1024, 256, 1024)).unwrap();
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
        assert_eq!(s.bins(), 513);
        assert_eq!(s.frames(), 1 + 4000 / 256);
    }

    #[test]
    fn bin_center_frequency() {
        let s = stft(&AudioBuffer::silence(2048, 24000).unwrap(), &StftConfig::new(1024, 256, 1024)).unwrap();
        assert_eq!(s.center_freqs()[100], 2343.75);
    }

    #[test]
    fn khz_tone_peaks_at_bin_43() {
        let tone = synth_tone(1000.0, 0.5, 24000, ToneKind::Sine).unwrap();
        let s = stft(&tone, &StftConfig::new(1024, 256, 1024)).unwrap();
        for t in 4..s.frames() - 4 {
            assert_eq!(s.argmax_bin(t), 43);
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let cfg = StftConfig::new(1024, 256, 1024);
        assert!(matches!(stft(&AudioBuffer::silence(512, 24000).unwrap(), &cfg), Err(Error::Domain(_))));
        assert!(matches!(
            stft(&AudioBuffer::silence(4000, 24000).unwrap(), &StftConfig::new(512, 600, 512)),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]
        #[test]
        fn fft_path_equals_direct_summation(seed in 0u64..10_000, win in prop::sample::select(vec![256usize, 200, 128])) {
            let cfg = StftConfig::new(256, 64, win);
            let buf = noise(1000, 16000, seed);
            let fast = stft(&buf, &cfg).unwrap();
            let direct = stft_direct(&buf, &cfg).unwrap();
            let worst = fast.data().iter().zip(direct.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(worst < 1e-9, "worst {}", worst);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::new(512, 128, 512);
        let buf = noise(4096, 16000, 4);
        let s = stft(&buf, &cfg).unwrap();
        let w = cfg.window();
        let x = buf.samples();
        for t in 0..s.frames() {
            let start = (t * cfg.hop) as i64 - 256;
            let time_energy: f64 = (0..512).map(|j| (x[reflect_index(start + j as i64, x.len())] * w[j]).powi(2)).sum();
            let mut spec_energy = 0.0;
            for k in 0..s.bins() {
                let weight = if k == 0 || k == 256 { 1.0 } else { 2.0 };
                spec_energy += weight * s.get(k, t).norm_sqr();
            }
            spec_energy /= 512.0;
            assert!((spec_energy - time_energy).abs() <= 1e-6 * time_energy);
        }
    }

    #[test]
    fn istft_reconstructs() {
        let buf = noise(24000, 24000, 11);
        let s = stft(&buf, &StftConfig::new(1024, 256, 1024)).unwrap();
        let back = istft(&s, 1024, 256, Some(buf.len())).unwrap();
        let (mut sig, mut err) = (0.0, 0.0);
        for i in 1024..buf.len() - 1024 {
            sig += buf.samples()[i].powi(2);
            err += (buf.samples()[i] - back.samples()[i]).powi(2);
        }
        assert!(10.0 * (sig / err).log10() > 60.0);
    }

    #[test]
    fn istft_of_zeros_and_non_cola_hop() {
        let s = stft(&AudioBuffer::silence(3000, 24000).unwrap(), &StftConfig::new(512, 128, 512)).unwrap();
        let back = istft(&s, 512, 128, None).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
        assert!(matches!(istft(&s, 512, 512, None), Err(Error::Domain(_))));
    }

    #[test]
    fn adjoint_dot_product() {
        let cfg = StftConfig::new(256, 64, 200);
        let x = noise(700, 8000, 2);
        let s = stft(&x, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<Complex64> = (0..s.data().len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let lhs: f64 = s.data().iter().zip(&g).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let adj = stft_adjoint(&g, x.len(), &cfg).unwrap();
        let rhs: f64 = x.samples().iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn multi_resolution_set() {
        let buf = noise(8192, 24000, 1);
        let set = multi_res_stft_set(&buf, &DEFAULT_RESOLUTIONS).unwrap();
        assert_eq!(set.iter().map(|s| s.bins()).collect::<Vec<_>>(), vec![1025, 513, 257]);
        let twice = multi_res_stft_set(&buf, &[StftConfig::new(1024, 256, 1024); 2]).unwrap();
        assert_eq!(twice[0], twice[1]);
    }
}
