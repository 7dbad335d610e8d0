use std::sync::OnceLock;

use rustfft::num_complex::Complex64;

use super::oracle::dot;
use super::CqtPlan;
use crate::audio::resample::{kaiser, sinc};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::exec;
use crate::stft::reflect_index;
use crate::tfr::{ComplexSpectrogram, TransformKind};

const HALF_TAPS: usize = 63;
const KAISER_BETA: f64 = 8.6;

/// 127-tap half-band low-pass, centre tap at index `HALF_TAPS`, unit DC gain.
fn halfband() -> &'static [f64] {
    static TAPS: OnceLock<Vec<f64>> = OnceLock::new();
    TAPS.get_or_init(|| {
        let mut h: Vec<f64> = (0..=2 * HALF_TAPS)
            .map(|i| {
                let j = i as f64 - HALF_TAPS as f64;
                0.5 * sinc(j / 2.0) * kaiser(j / HALF_TAPS as f64, KAISER_BETA)
            })
            .collect();
        let sum: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v /= sum);
        h
    })
}

/// Padding and per-level lengths for a signal of `len` samples.
struct Layout {
    pad: usize,
    lens: Vec<usize>,
}

impl Layout {
    fn new(plan: &CqtPlan, len: usize) -> Self {
        let levels = plan.n_octaves();
        let coarsest = 1usize << (levels - 1);
        // Each decimation stage smears the zero boundary inward by HALF_TAPS
        // samples of its input rate; frames must stay clear of that region.
        let need = (0..plan.bins())
            .map(|k| {
                let o = plan.level_of(k);
                HALF_TAPS * ((2usize << o) - 1) + plan.half_len(k) + (1 << o)
            })
            .max()
            .unwrap_or(0);
        let pad = need.div_ceil(coarsest) * coarsest;
        let mut lens = vec![len + 2 * pad];
        for o in 1..levels {
            lens.push(lens[o - 1].div_ceil(2));
        }
        Self { pad, lens }
    }

    fn centre(&self, plan: &CqtPlan, t: usize, level: usize) -> usize {
        (self.pad + t * plan.hop()) >> level
    }
}

fn check(plan: &CqtPlan, rate: u32, len: usize) -> Result<()> {
    if rate != plan.rate() {
        return Err(Error::domain(format!("plan expects {} Hz audio, got {rate} Hz", plan.rate())));
    }
    if len == 0 {
        return Err(Error::domain("cannot analyse an empty buffer"));
    }
    let step = 1usize << (plan.n_octaves() - 1);
    if !plan.hop().is_multiple_of(step) {
        return Err(Error::domain(format!("hop {} is not divisible by {step} = 2^(octaves - 1)", plan.hop())));
    }
    Ok(())
}

/// Nonzero half-band taps as `(offset from centre, weight)`; every other
/// tap of a half-band filter vanishes.
fn sparse_taps() -> &'static [(i64, f64)] {
    static TAPS: OnceLock<Vec<(i64, f64)>> = OnceLock::new();
    TAPS.get_or_init(|| {
        halfband()
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > 1e-12)
            .map(|(i, &w)| (i as i64 - HALF_TAPS as i64, w))
            .collect()
    })
}

fn decimate(s: &[f64], out_len: usize) -> Vec<f64> {
    let taps = sparse_taps();
    let n = s.len() as i64;
    exec::map_range(out_len, |m| {
        let c = 2 * m as i64;
        if c >= HALF_TAPS as i64 && c + (HALF_TAPS as i64) < n {
            taps.iter().map(|&(d, w)| w * s[(c - d) as usize]).sum()
        } else {
            taps.iter().filter(|&&(d, _)| (0..n).contains(&(c - d))).map(|&(d, w)| w * s[(c - d) as usize]).sum()
        }
    })
}

fn decimate_adjoint(g: &[f64], into: &mut [f64]) {
    let taps = sparse_taps();
    let n = into.len() as i64;
    for (m, gm) in g.iter().enumerate() {
        let c = 2 * m as i64;
        for &(d, w) in taps {
            let idx = c - d;
            if (0..n).contains(&idx) {
                into[idx as usize] += w * gm;
            }
        }
    }
}

fn octave_bins(plan: &CqtPlan, level: usize) -> std::ops::Range<usize> {
    let hi = plan.bins() - level * plan.bins_per_octave();
    hi - plan.bins_per_octave()..hi
}

/// Octave-recursive CQT: the top octave runs at the plan rate, then the
/// signal is half-band filtered and decimated by two for each lower octave.
/// Kernels are evaluated only at frame centres.
pub fn cqt_fast(buf: &AudioBuffer, plan: &CqtPlan) -> Result<ComplexSpectrogram> {
    let x = buf.samples();
    check(plan, buf.sample_rate(), x.len())?;
    let layout = Layout::new(plan, x.len());
    let frames = plan.frames(x.len());
    let mut data = vec![Complex64::new(0.0, 0.0); plan.bins() * frames];
    let mut s: Vec<f64> =
        (0..layout.lens[0]).map(|i| x[reflect_index(i as i64 - layout.pad as i64, x.len())]).collect();
    for level in 0..plan.n_octaves() {
        if level > 0 {
            s = decimate(&s, layout.lens[level]);
        }
        let range = octave_bins(plan, level);
        let lo = range.start;
        let rows: Vec<Vec<Complex64>> = exec::map_range(range.len(), |i| {
            let kern = plan.octave_kernel(lo + i);
            (0..frames)
                .map(|t| {
                    let start = layout.centre(plan, t, level) - kern.half;
                    let seg = &s[start..start + kern.re.len()];
                    Complex64::new(dot(seg, &kern.re), -dot(seg, &kern.im))
                })
                .collect()
        });
        for (i, row) in rows.into_iter().enumerate() {
            data[(lo + i) * frames..(lo + i + 1) * frames].copy_from_slice(&row);
        }
    }
    ComplexSpectrogram::new(
        data,
        plan.bins(),
        frames,
        plan.center_freqs().to_vec(),
        plan.hop(),
        plan.rate(),
        TransformKind::Cqt,
    )
}

/// Transpose of [`cqt_fast`] for a real input of `len` samples.
pub fn cqt_fast_adjoint(grad: &[Complex64], len: usize, plan: &CqtPlan) -> Result<Vec<f64>> {
    check(plan, plan.rate(), len)?;
    let frames = plan.frames(len);
    if grad.len() != plan.bins() * frames {
        return Err(Error::shape(format!("gradient has {} cells, expected {} x {frames}", grad.len(), plan.bins())));
    }
    let layout = Layout::new(plan, len);
    let mut below: Option<Vec<f64>> = None;
    for level in (0..plan.n_octaves()).rev() {
        let mut g = vec![0.0; layout.lens[level]];
        if let Some(lower) = below.take() {
            decimate_adjoint(&lower, &mut g);
        }
        for k in octave_bins(plan, level) {
            let kern = plan.octave_kernel(k);
            for t in 0..frames {
                let gk = grad[k * frames + t];
                if gk.re == 0.0 && gk.im == 0.0 {
                    continue;
                }
                let start = layout.centre(plan, t, level) - kern.half;
                for (i, v) in g[start..start + kern.re.len()].iter_mut().enumerate() {
                    *v += gk.re * kern.re[i] - gk.im * kern.im[i];
                }
            }
        }
        below = Some(g);
    }
    let g0 = below.unwrap_or_default();
    let mut out = vec![0.0; len];
    for (i, v) in g0.iter().enumerate() {
        out[reflect_index(i as i64 - layout.pad as i64, len)] += v;
    }
    Ok(out)
}
