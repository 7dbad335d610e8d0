//! Polyphase windowed-sinc sample-rate conversion.
//!
//! The interpolation kernel is a Kaiser-windowed sinc (beta 8.6) spanning 64
//! zero crossings on each side. For rational ratios with a modest numerator
//! the kernel is tabulated per phase; otherwise it is evaluated on the fly.

use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.6;
const ZERO_CROSSINGS: f64 = 64.0;
/// Cutoff as a fraction of the lower Nyquist limit.
const ROLLOFF: f64 = 0.945;
const MAX_TABLE_PHASES: u64 = 1024;

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub(crate) fn kaiser(x: f64, beta: f64) -> f64 {
    if x.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - x * x).sqrt()) / bessel_i0(beta)
}

pub(crate) fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A reusable rate converter between two fixed rates.
#[derive(Debug, Clone)]
pub struct Resampler {
    src: u32,
    dst: u32,
    up: u64,
    down: u64,
    cutoff: f64,
    /// Taps on each side of the interpolation point, in input samples.
    half_taps: usize,
    /// `table[p][j]` is the weight of input `base + j + 1 - half_taps` at phase `p`.
    table: Option<Vec<Vec<f64>>>,
}

impl Resampler {
    pub fn new(src: u32, dst: u32) -> Result<Self> {
        if src == 0 || dst == 0 {
            return Err(Error::domain("sample rates must be positive"));
        }
        let g = gcd(u64::from(src), u64::from(dst));
        let up = u64::from(dst) / g;
        let down = u64::from(src) / g;
        let cutoff = (f64::from(dst) / f64::from(src)).min(1.0) * ROLLOFF;
        let half_taps = (ZERO_CROSSINGS / cutoff).ceil() as usize + 1;
        let mut rs = Self { src, dst, up, down, cutoff, half_taps, table: None };
        if up <= MAX_TABLE_PHASES {
            let table = (0..up)
                .map(|p| {
                    let frac = p as f64 / up as f64;
                    (0..2 * half_taps).map(|j| rs.kernel(frac - (j as f64 + 1.0 - half_taps as f64))).collect()
                })
                .collect();
            rs.table = Some(table);
        }
        Ok(rs)
    }

    fn kernel(&self, d: f64) -> f64 {
        let support = ZERO_CROSSINGS / self.cutoff;
        if d.abs() >= support {
            return 0.0;
        }
        self.cutoff * sinc(self.cutoff * d) * kaiser(d / support, KAISER_BETA)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let num = input_len as u128 * u128::from(self.dst) + u128::from(self.src) / 2;
        (num / u128::from(self.src)) as usize
    }

    /// Calls `f(input_index, weight)` for every tap of output sample `m`
    /// that lands inside `0..input_len`.
    fn taps(&self, m: usize, input_len: usize, mut f: impl FnMut(usize, f64)) {
        let pos = m as u128 * u128::from(self.down);
        let base = (pos / u128::from(self.up)) as i64;
        let phase = (pos % u128::from(self.up)) as usize;
        let first = base + 1 - self.half_taps as i64;
        let lo = (-first).max(0) as usize;
        let hi = ((input_len as i64 - first).max(0) as usize).min(2 * self.half_taps);
        match &self.table {
            Some(table) => {
                let row = &table[phase];
                for j in lo..hi {
                    f((first + j as i64) as usize, row[j]);
                }
            }
            None => {
                let frac = phase as f64 / self.up as f64;
                for j in lo..hi {
                    let w = self.kernel(frac - (j as f64 + 1.0 - self.half_taps as f64));
                    f((first + j as i64) as usize, w);
                }
            }
        }
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.src == self.dst {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        crate::exec::map_range(n_out, |m| {
            let mut acc = 0.0;
            self.taps(m, input.len(), |i, w| acc += w * input[i]);
            acc
        })
    }

    /// Transpose of [`Resampler::process`] for an input of `input_len` samples.
    pub fn adjoint(&self, grad_out: &[f64], input_len: usize) -> Vec<f64> {
        if self.src == self.dst {
            return grad_out.to_vec();
        }
        let mut grad_in = vec![0.0; input_len];
        for (m, &g) in grad_out.iter().enumerate() {
            if g != 0.0 {
                self.taps(m, input_len, |i, w| grad_in[i] += w * g);
            }
        }
        grad_in
    }
}

/// Band-limited conversion of `buf` to `target_rate`.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == buf.sample_rate() {
        return Ok(buf.clone());
    }
    let rs = Resampler::new(buf.sample_rate(), target_rate)?;
    AudioBuffer::new(rs.process(buf.samples()), target_rate)
}

/// Gradient of a scalar loss with respect to the input of [`resample`].
pub fn resample_adjoint(grad_out: &[f64], source_rate: u32, target_rate: u32, input_len: usize) -> Result<Vec<f64>> {
    let rs = Resampler::new(source_rate, target_rate)?;
    if grad_out.len() != rs.output_len(input_len) {
        return Err(Error::shape(format!(
            "gradient length {} does not match resampled length {}",
            grad_out.len(),
            rs.output_len(input_len)
        )));
    }
    Ok(rs.adjoint(grad_out, input_len))
}
