use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid step (in wavelet time units) used to normalise the mother wavelet.
pub const NORM_DT: f64 = 1.0 / 256.0;
/// Relative envelope level beyond which the wavelet is truncated.
const TAIL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WaveletBasis {
    /// Complex Morlet `e^{i2πCt} e^{-t²/b}`.
    Cmor { center: f64, bandwidth: f64 },
    /// n-th derivative of `e^{-it} e^{-t²}`.
    Cgau { order: u32 },
}

impl WaveletBasis {
    pub const CMOR: WaveletBasis = WaveletBasis::Cmor { center: 1.0, bandwidth: 1.5 };
    pub const CGAU1: WaveletBasis = WaveletBasis::Cgau { order: 1 };
    pub const CGAU8: WaveletBasis = WaveletBasis::Cgau { order: 8 };
}

impl fmt::Display for WaveletBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            w if w == WaveletBasis::CMOR => write!(f, "cmor"),
            WaveletBasis::Cmor { center, bandwidth } => write!(f, "cmor{bandwidth}-{center}"),
            WaveletBasis::Cgau { order } => write!(f, "cgau{order}"),
        }
    }
}

impl FromStr for WaveletBasis {
    type Err = Error;

    /// Accepts `cmor`, `cmorB-C` and `cgauN`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown wavelet basis {s:?}"));
        if s == "cmor" {
            return Ok(WaveletBasis::CMOR);
        }
        if let Some(rest) = s.strip_prefix("cmor") {
            let (b, c) = rest.split_once('-').ok_or_else(bad)?;
            let bandwidth: f64 = b.parse().map_err(|_| bad())?;
            let center: f64 = c.parse().map_err(|_| bad())?;
            if !(bandwidth > 0.0 && center > 0.0) {
                return Err(bad());
            }
            return Ok(WaveletBasis::Cmor { center, bandwidth });
        }
        if let Some(rest) = s.strip_prefix("cgau") {
            let order: u32 = rest.parse().map_err(|_| bad())?;
            if order == 0 {
                return Err(bad());
            }
            return Ok(WaveletBasis::Cgau { order });
        }
        Err(bad())
    }
}

impl TryFrom<String> for WaveletBasis {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WaveletBasis> for String {
    fn from(w: WaveletBasis) -> String {
        w.to_string()
    }
}

/// Coefficients of the polynomial `P_n` with `d^n/dt^n g = P_n · g`, `g = e^{-it-t²}`.
fn cgau_polynomial(order: u32) -> Vec<Complex64> {
    let mut p = vec![Complex64::new(1.0, 0.0)];
    for _ in 0..order {
        let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            if i > 0 {
                next[i - 1] += c * i as f64;
            }
            next[i] += c * Complex64::new(0.0, -1.0);
            next[i + 1] += c * -2.0;
        }
        p = next;
    }
    p
}

/// Mother wavelet normalised to unit energy on the [`NORM_DT`] grid.
#[derive(Debug, Clone)]
pub struct Wavelet {
    basis: WaveletBasis,
    poly: Vec<Complex64>,
    scale: f64,
    support: f64,
}

impl Wavelet {
    pub fn new(basis: WaveletBasis) -> Result<Self> {
        let poly = match basis {
            WaveletBasis::Cmor { center, bandwidth } => {
                if !(center > 0.0 && bandwidth > 0.0 && center.is_finite() && bandwidth.is_finite()) {
                    return Err(Error::domain("cmor centre and bandwidth must be positive"));
                }
                Vec::new()
            }
            WaveletBasis::Cgau { order } => {
                if order == 0 || order > 16 {
                    return Err(Error::domain(format!("cgau order {order} outside 1..=16")));
                }
                cgau_polynomial(order)
            }
        };
        let mut w = Self { basis, poly, scale: 1.0, support: 0.0 };
        let peak = (0..=4096).map(|i| w.raw(i as f64 * 0.005).norm()).fold(0.0, f64::max);
        // Walk inwards from far out until the envelope exceeds the tolerance.
        let mut t = 40.0;
        while t > 0.0 && w.raw(t).norm().max(w.raw(-t).norm()) < TAIL_TOLERANCE * peak {
            t -= NORM_DT;
        }
        w.support = t + NORM_DT;
        let n = (w.support / NORM_DT).round() as i64;
        let energy: f64 = (-n..=n).map(|i| w.raw(i as f64 * NORM_DT).norm_sqr()).sum::<f64>() * NORM_DT;
        w.scale = 1.0 / energy.sqrt();
        Ok(w)
    }

    fn raw(&self, t: f64) -> Complex64 {
        match self.basis {
            WaveletBasis::Cmor { center, bandwidth } => {
                Complex64::from_polar((-t * t / bandwidth).exp(), 2.0 * PI * center * t)
            }
            WaveletBasis::Cgau { .. } => {
                let mut p = Complex64::new(0.0, 0.0);
                for c in self.poly.iter().rev() {
                    p = p * t + c;
                }
                p * Complex64::from_polar((-t * t).exp(), -t)
            }
        }
    }

    pub fn basis(&self) -> WaveletBasis {
        self.basis
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        if t.abs() > self.support {
            Complex64::new(0.0, 0.0)
        } else {
            self.raw(t) * self.scale
        }
    }

    /// Half-width of the truncated support in wavelet time units.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Magnitude of the spectral peak frequency, cycles per unit time.
    pub fn center_frequency(&self) -> f64 {
        match self.basis {
            WaveletBasis::Cmor { center, .. } => center,
            WaveletBasis::Cgau { order } => {
                let c = 1.0 / (2.0 * PI);
                (c + (c * c + 2.0 * f64::from(order) / (PI * PI)).sqrt()) / 2.0
            }
        }
    }

    /// Width of the band where the spectrum stays within 3 dB of its peak,
    /// cycles per unit time.
    pub fn bandwidth(&self) -> f64 {
        match self.basis {
            WaveletBasis::Cmor { bandwidth, .. } => (2.0 * 2f64.ln() / bandwidth).sqrt() / PI,
            WaveletBasis::Cgau { order } => {
                // log |Ψ(ω)| = p·ln|ω| − (ω + 1)²/4 around the dominant peak at ω < 0.
                let p = f64::from(order);
                let log_mag = |w: f64| p * w.abs().ln() - (w + 1.0).powi(2) / 4.0;
                let w0 = -(1.0 + (1.0 + 8.0 * p).sqrt()) / 2.0;
                let target = log_mag(w0) - 0.5 * 2f64.ln();
                let solve = |mut inside: f64, mut outside: f64| {
                    for _ in 0..200 {
                        let mid = 0.5 * (inside + outside);
                        if log_mag(mid) > target {
                            inside = mid;
                        } else {
                            outside = mid;
                        }
                    }
                    0.5 * (inside + outside)
                };
                let lo = solve(w0, w0 - 50.0);
                let hi = solve(w0, -1e-12);
                (hi - lo) / (2.0 * PI)
            }
        }
    }

    /// Samples `ψ(τ/a)` for τ in `[-M, M]`, `M = ⌊support·a⌋`.
    pub fn child(&self, a: f64) -> Vec<Complex64> {
        let m = self.child_half_len(a) as i64;
        (-m..=m).map(|tau| self.eval(tau as f64 / a)).collect()
    }

    pub fn child_half_len(&self, a: f64) -> usize {
        (self.support * a).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn grid(w: &Wavelet) -> Vec<Complex64> {
        let n = (w.support() / NORM_DT).round() as i64;
        (-n..=n).map(|i| w.eval(i as f64 * NORM_DT)).collect()
    }

    #[test]
    fn zero_mean_and_unit_energy() {
        for basis in [WaveletBasis::CMOR, WaveletBasis::CGAU1, WaveletBasis::CGAU8] {
            let w = Wavelet::new(basis).unwrap();
            let g = grid(&w);
            let mean: Complex64 = g.iter().sum::<Complex64>() * NORM_DT;
            let energy: f64 = g.iter().map(|c| c.norm_sqr()).sum::<f64>() * NORM_DT;
            assert!(mean.norm() < 1e-6, "{basis}: mean {}", mean.norm());
            assert!((energy - 1.0).abs() < 1e-9, "{basis}: energy {energy}");
        }
    }

    #[test]
    fn first_derivative_polynomial() {
        // d/dt e^{-it-t²} = (-i - 2t) e^{-it-t²}
        let p = cgau_polynomial(1);
        assert_eq!(p, vec![Complex64::new(0.0, -1.0), Complex64::new(-2.0, 0.0)]);
        let eval = |order: u32, t: f64| {
            let p = cgau_polynomial(order);
            let v = p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * t + c);
            v * Complex64::from_polar((-t * t).exp(), -t)
        };
        let h = 1e-5;
        for order in 1..=8 {
            for t in [-1.3, 0.2, 0.9] {
                let fd = (eval(order - 1, t + h) - eval(order - 1, t - h)) / (2.0 * h);
                let exact = eval(order, t);
                assert!((fd - exact).norm() < 1e-6 * exact.norm().max(1.0), "order {order} t {t}");
            }
        }
    }

    /// Peak and −3 dB width of the sampled wavelet's DFT.
    fn dft_peak_and_width(w: &Wavelet) -> (f64, f64) {
        let n = 1 << 17;
        let dt = 1.0 / 64.0;
        let half = (w.support() / dt) as i64;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for i in -half..=half {
            buf[i.rem_euclid(n as i64) as usize] = w.eval(i as f64 * dt);
        }
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
        let (peak_bin, peak) = mags.iter().enumerate().fold((0, 0.0), |b, (i, &m)| if m > b.1 { (i, m) } else { b });
        let df = 1.0 / (n as f64 * dt);
        let freq = |i: usize| if i > n / 2 { i as f64 - n as f64 } else { i as f64 } * df;
        let level = peak / 2f64.sqrt();
        let (mut lo, mut hi) = (peak_bin, peak_bin);
        while mags[(lo + n - 1) % n] >= level {
            lo = (lo + n - 1) % n;
        }
        while mags[(hi + 1) % n] >= level {
            hi = (hi + 1) % n;
        }
        let width = (hi as i64 - lo as i64).rem_euclid(n as i64) as f64 * df;
        (freq(peak_bin).abs(), width)
    }

    #[test]
    fn closed_forms_match_dft() {
        for (basis, expect) in [
            (WaveletBasis::CMOR, 1.0),
            (WaveletBasis::CGAU1, std::f64::consts::FRAC_1_PI),
            (WaveletBasis::CGAU8, 0.721),
        ] {
            let w = Wavelet::new(basis).unwrap();
            assert!((w.center_frequency() - expect).abs() < 1e-3);
            let (peak, width) = dft_peak_and_width(&w);
            let df = 1.0 / ((1 << 17) as f64 / 64.0);
            assert!((peak - w.center_frequency()).abs() <= df, "{basis}: {peak}");
            assert!((width - w.bandwidth()).abs() <= 2.0 * df, "{basis}: {width} vs {}", w.bandwidth());
        }
    }

    #[test]
    fn parse_and_display() {
        for s in ["cmor", "cgau1", "cgau8", "cmor2-0.5"] {
            let b: WaveletBasis = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("cgau0".parse::<WaveletBasis>().is_err());
        assert!("haar".parse::<WaveletBasis>().is_err());
    }
}
