//! YIN-style pitch tracking.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::exec;

/// Candidate lags are the first dip of the normalized difference below this.
const DIP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    pub frame: usize,
    pub hop: usize,
    /// A frame is voiced when its confidence exceeds this.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self { fmin: 50.0, fmax: 1100.0, frame: 2048, hop: 256, voicing_threshold: 0.5 }
    }
}

impl PitchConfig {
    /// Rate-independent checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax.is_finite()) {
            return Err(Error::Config(format!("need 0 < fmin < fmax, got fmin {} fmax {}", self.fmin, self.fmax)));
        }
        if self.hop == 0 || self.frame < 8 {
            return Err(Error::Config("pitch hop must be positive and frame at least 8".into()));
        }
        if !(0.0..1.0).contains(&self.voicing_threshold) {
            return Err(Error::Config("voicing threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Lag search range `[min, max]` in samples at `rate`.
    fn lags(&self, rate: u32) -> Result<(usize, usize)> {
        let fs = f64::from(rate);
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax < fs / 2.0) {
            return Err(Error::domain(format!(
                "need 0 < fmin < fmax < {} Hz, got fmin {} fmax {}",
                fs / 2.0,
                self.fmin,
                self.fmax
            )));
        }
        self.validate()?;
        let lo = ((fs / self.fmax).floor() as usize).max(2);
        let hi = (fs / self.fmin).ceil() as usize;
        if hi + 1 > self.frame / 2 {
            return Err(Error::domain(format!(
                "fmin {} Hz needs lags up to {hi}, more than half the {}-sample frame",
                self.fmin, self.frame
            )));
        }
        Ok((lo, hi))
    }
}

/// Per-frame pitch estimates. `f0` is 0 exactly on unvoiced frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    pub confidence: Vec<f64>,
    pub hop: usize,
    pub rate: u32,
}

impl F0Track {
    pub fn new(f0: Vec<f64>, voiced: Vec<bool>, confidence: Vec<f64>, hop: usize, rate: u32) -> Result<Self> {
        if voiced.len() != f0.len() || confidence.len() != f0.len() {
            return Err(Error::shape("f0, voiced and confidence lengths differ"));
        }
        for i in 0..f0.len() {
            if voiced[i] != (f0[i] > 0.0) || !f0[i].is_finite() {
                return Err(Error::domain(format!("frame {i}: f0 must be positive exactly when voiced")));
            }
            if !(0.0..=1.0).contains(&confidence[i]) {
                return Err(Error::domain(format!("frame {i}: confidence {} outside [0, 1]", confidence[i])));
            }
        }
        Ok(Self { f0, voiced, confidence, hop, rate })
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Median f0 over voiced frames.
    pub fn median_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.f0.iter().copied().filter(|&f| f > 0.0).collect();
        median(&mut v)
    }

    /// Every voiced frame's f0 multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::domain("pitch scale factor must be positive"));
        }
        let mut t = self.clone();
        t.f0.iter_mut().for_each(|f| *f *= factor);
        Ok(t)
    }
}

pub(crate) fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

struct Tracker {
    cfg: PitchConfig,
    lo: usize,
    hi: usize,
    window: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Tracker {
    fn new(cfg: PitchConfig, rate: u32) -> Result<Self> {
        let (lo, hi) = cfg.lags(rate)?;
        let window = cfg.frame / 2;
        let n = (cfg.frame + window).next_power_of_two();
        let mut planner = FftPlanner::new();
        Ok(Self { cfg, lo, hi, window, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
    }

    /// Difference function `d(τ) = Σ_{j<w} (x[j] − x[j+τ])²` for τ ≤ hi + 1.
    fn difference(&self, x: &[f64]) -> Vec<f64> {
        let n = self.fwd.len();
        let w = self.window;
        let mut a: Vec<Complex64> = (0..n).map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
        let mut b: Vec<Complex64> = (0..n).map(|i| Complex64::new(if i < w { x[i] } else { 0.0 }, 0.0)).collect();
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p *= q.conj();
        }
        self.inv.process(&mut a);
        let scale = 1.0 / n as f64;
        let mut prefix = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let e0 = prefix[w];
        (0..=self.hi + 1)
            .map(|tau| {
                let e = prefix[tau + w] - prefix[tau];
                (e0 + e - 2.0 * a[tau].re * scale).max(0.0)
            })
            .collect()
    }

    /// `(f0, confidence)` for one frame; f0 is 0 when unvoiced.
    fn frame(&self, x: &[f64], rate: u32) -> (f64, f64) {
        let d = self.difference(x);
        // cumulative-mean normalization
        let mut norm = vec![1.0; d.len()];
        let mut sum = 0.0;
        for tau in 1..d.len() {
            sum += d[tau];
            norm[tau] = if sum > 0.0 { d[tau] * tau as f64 / sum } else { 1.0 };
        }
        let (lo, hi) = (self.lo, self.hi);
        let best = match (lo..=hi).find(|&t| norm[t] < DIP_THRESHOLD) {
            Some(mut t) => {
                while t < hi && norm[t + 1] < norm[t] {
                    t += 1;
                }
                t
            }
            None => (lo..=hi).min_by(|&a, &b| norm[a].total_cmp(&norm[b])).expect("non-empty lag range"),
        };
        let confidence = (1.0 - norm[best]).clamp(0.0, 1.0);
        if confidence <= self.cfg.voicing_threshold {
            return (0.0, confidence);
        }
        let period = best as f64 + vertex(&d, best);
        // Interpolation error is a fraction of a sample whatever the lag, so
        // measuring k periods at once divides it by k.
        let k = (hi as f64 / period).floor();
        let period = if k >= 2.0 {
            let guess = (k * period).round() as usize;
            let near = guess.saturating_sub(2).max(1)..=(guess + 2).min(hi);
            let at = near.min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("non-empty window");
            (at as f64 + vertex(&d, at)) / k
        } else {
            period
        };
        (f64::from(rate) / period, confidence)
    }
}

/// Offset of the parabola through `d[t-1..=t+1]` from `t`, within ±1.
fn vertex(d: &[f64], t: usize) -> f64 {
    let (l, c, r) = (d[t - 1], d[t], d[t + 1]);
    let curve = l - 2.0 * c + r;
    if curve > 0.0 {
        (0.5 * (l - r) / curve).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Frames of `cfg.frame` samples every `cfg.hop` samples; only whole frames.
pub fn frame_count(len: usize, cfg: &PitchConfig) -> usize {
    if len < cfg.frame {
        0
    } else {
        1 + (len - cfg.frame) / cfg.hop
    }
}

pub fn extract_f0(buf: &AudioBuffer, fmin: f64, fmax: f64) -> Result<F0Track> {
    extract_f0_with(buf, &PitchConfig { fmin, fmax, ..PitchConfig::default() })
}

pub fn extract_f0_with(buf: &AudioBuffer, cfg: &PitchConfig) -> Result<F0Track> {
    let rate = buf.sample_rate();
    let tracker = Tracker::new(*cfg, rate)?;
    let frames = frame_count(buf.len(), cfg);
    if frames == 0 {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            buf.len(),
            cfg.frame
        )));
    }
    let x = buf.samples();
    let est = exec::map_range(frames, |i| tracker.frame(&x[i * cfg.hop..i * cfg.hop + cfg.frame], rate));
    let (f0, confidence): (Vec<f64>, Vec<f64>) = est.into_iter().unzip();
    let voiced = f0.iter().map(|&f| f > 0.0).collect();
    F0Track::new(f0, voiced, confidence, cfg.hop, rate)
}
