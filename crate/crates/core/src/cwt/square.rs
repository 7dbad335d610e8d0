//! Approximating a square wave's step transients with a truncated Fourier
//! series versus a truncated orthogonal wavelet expansion.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per period of the test square wave.
pub const SQUARE_PERIOD: usize = 512;
/// Errors are measured within this many samples either side of each step.
pub const TRANSIENT_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SquareWaveBasis {
    Fourier,
    WaveletDb,
}

fn square() -> Vec<f64> {
    (0..SQUARE_PERIOD).map(|i| if i < SQUARE_PERIOD / 2 { 1.0 } else { -1.0 }).collect()
}

/// Partial sum of the first `n` odd harmonics, evaluated at cell centres.
fn fourier_partial(n: usize) -> Vec<f64> {
    (0..SQUARE_PERIOD)
        .map(|i| {
            let t = (i as f64 + 0.5) / SQUARE_PERIOD as f64;
            4.0 / PI
                * (0..n)
                    .map(|m| {
                        let h = (2 * m + 1) as f64;
                        (2.0 * PI * h * t).sin() / h
                    })
                    .sum::<f64>()
        })
        .collect()
}

fn db2_filters() -> ([f64; 4], [f64; 4]) {
    let s3 = 3f64.sqrt();
    let d = 4.0 * SQRT_2;
    let h = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
    let g = [h[3], -h[2], h[1], -h[0]];
    (h, g)
}

/// Full-depth periodic DWT; layout `[a_J, d_J, d_{J-1}, …, d_1]`.
pub(crate) fn dwt(x: &[f64]) -> Vec<f64> {
    let (h, g) = db2_filters();
    let mut out = x.to_vec();
    let mut n = x.len();
    while n > 1 {
        let half = n / 2;
        let mut next = vec![0.0; n];
        for m in 0..half {
            for k in 0..4 {
                let v = out[(2 * m + k) % n];
                next[m] += h[k] * v;
                next[half + m] += g[k] * v;
            }
        }
        out[..n].copy_from_slice(&next);
        n = half;
    }
    out
}

pub(crate) fn idwt(c: &[f64]) -> Vec<f64> {
    let (h, g) = db2_filters();
    let mut out = c.to_vec();
    let mut n = 1;
    while n < c.len() {
        let full = 2 * n;
        let mut next = vec![0.0; full];
        for m in 0..n {
            for k in 0..4 {
                next[(2 * m + k) % full] += h[k] * out[m] + g[k] * out[n + m];
            }
        }
        out[..full].copy_from_slice(&next);
        n = full;
    }
    out
}

fn wavelet_partial(n: usize) -> Vec<f64> {
    let coeffs = dwt(&square());
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()));
    let mut kept = vec![0.0; coeffs.len()];
    for &i in order.iter().take(n) {
        kept[i] = coeffs[i];
    }
    idwt(&kept)
}

/// Largest reconstruction error within ±[`TRANSIENT_WINDOW`] samples of the
/// square wave's two steps, keeping `n_components` terms of the expansion.
pub fn square_wave_error(basis: SquareWaveBasis, n_components: usize) -> Result<f64> {
    let limit = match basis {
        SquareWaveBasis::Fourier => SQUARE_PERIOD / 2,
        SquareWaveBasis::WaveletDb => SQUARE_PERIOD,
    };
    if n_components == 0 || n_components > limit {
        return Err(Error::domain(format!("component count must be in 1..={limit}, got {n_components}")));
    }
    let target = square();
    let approx = match basis {
        SquareWaveBasis::Fourier => fourier_partial(n_components),
        SquareWaveBasis::WaveletDb => wavelet_partial(n_components),
    };
    let w = TRANSIENT_WINDOW as i64;
    let p = SQUARE_PERIOD as i64;
    let mut worst: f64 = 0.0;
    for step in [0, p / 2] {
        for off in -w..w {
            let i = (step + off).rem_euclid(p) as usize;
            worst = worst.max((approx[i] - target[i]).abs());
        }
    }
    Ok(worst)
}
