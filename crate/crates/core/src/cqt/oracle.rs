use rustfft::num_complex::Complex64;

use super::CqtPlan;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::exec;
use crate::stft::reflect_index;
use crate::tfr::{ComplexSpectrogram, TransformKind};

/// Direct evaluation of `X(k, n) = Σ_τ x(n + τ)·conj(a_k(τ))` at every frame
/// centre `n = hop·t`, reflecting the signal at both edges.
pub fn cqt_oracle(buf: &AudioBuffer, plan: &CqtPlan) -> Result<ComplexSpectrogram> {
    if buf.sample_rate() != plan.rate() {
        return Err(Error::domain(format!("plan expects {} Hz audio, got {} Hz", plan.rate(), buf.sample_rate())));
    }
    let x = buf.samples();
    if x.is_empty() {
        return Err(Error::domain("cannot analyse an empty buffer"));
    }
    let pad = plan.half_len(0);
    let ext: Vec<f64> = (0..x.len() + 2 * pad + 1).map(|i| x[reflect_index(i as i64 - pad as i64, x.len())]).collect();
    let frames = plan.frames(x.len());
    let rows: Vec<Vec<Complex64>> = exec::map_range(plan.bins(), |k| {
        let (re, im) = plan.kernel(k);
        let h = plan.half_len(k);
        (0..frames)
            .map(|t| {
                let start = pad + t * plan.hop() - h;
                let seg = &ext[start..start + re.len()];
                Complex64::new(dot(seg, &re), -dot(seg, &im))
            })
            .collect()
    });
    ComplexSpectrogram::new(
        rows.concat(),
        plan.bins(),
        frames,
        plan.center_freqs().to_vec(),
        plan.hop(),
        plan.rate(),
        TransformKind::Cqt,
    )
}

/// Dot product with eight independent accumulators so the loop vectorises.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f64>() + tail
}
