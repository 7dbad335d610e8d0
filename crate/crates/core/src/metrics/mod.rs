//! Objective vocoder metrics: pitch error in cents, pitch correlation,
//! periodicity error and log-mel distance.
//!
//! Pitch metrics use frames voiced in both tracks. Periodicity is the
//! tracker confidence and is compared over all frames.

mod pitch;

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::mel::MelConfig;
use crate::train::MelLoss;

pub use pitch::{extract_f0, extract_f0_with, frame_count, F0Track, PitchConfig};

/// Report flag: the tracks share no voiced frame, so the cent error is 0.
pub const FLAG_NO_CO_VOICED: &str = "no_co_voiced_frames";
/// Report flag: pitch correlation is undefined and reported as null.
pub const FLAG_FPC_UNDEFINED: &str = "fpc_undefined";
/// Report flag: trailing samples of the longer signal were dropped.
pub const FLAG_TRIMMED: &str = "trimmed";

fn check_frames(a: &F0Track, b: &F0Track) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("tracks have {} and {} frames", a.len(), b.len())));
    }
    Ok(())
}

/// Indices voiced in both tracks.
pub fn co_voiced(a: &F0Track, b: &F0Track) -> Result<Vec<usize>> {
    check_frames(a, b)?;
    Ok((0..a.len()).filter(|&i| a.voiced[i] && b.voiced[i]).collect())
}

/// RMSE of `1200·log2(deg/ref)` over co-voiced frames; 0 when there are none.
pub fn f0_rmse_cents(reference: &F0Track, degraded: &F0Track) -> Result<f64> {
    let idx = co_voiced(reference, degraded)?;
    if idx.is_empty() {
        warn!("no co-voiced frames, reporting 0 cents");
        return Ok(0.0);
    }
    let ss: f64 = idx.iter().map(|&i| (1200.0 * (degraded.f0[i].log2() - reference.f0[i].log2())).powi(2)).sum();
    Ok((ss / idx.len() as f64).sqrt())
}

/// Pearson correlation of co-voiced f0 values.
pub fn fpc(reference: &F0Track, degraded: &F0Track) -> Result<f64> {
    let idx = co_voiced(reference, degraded)?;
    if idx.len() < 2 {
        return Err(Error::Undefined(format!("{} co-voiced frames, need at least 2", idx.len())));
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| reference.f0[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| degraded.f0[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (a, b) = (reference.f0[i] - ma, degraded.f0[i] - mb);
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("f0 track has zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// RMSE between confidence sequences over all frames.
pub fn periodicity_rmse(reference: &F0Track, degraded: &F0Track) -> Result<f64> {
    check_frames(reference, degraded)?;
    if reference.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = reference.confidence.iter().zip(&degraded.confidence).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / reference.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub pitch: PitchConfig,
    pub n_mels: usize,
    pub n_fft: usize,
    pub mel_hop: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { pitch: PitchConfig::default(), n_mels: 100, n_fft: 1024, mel_hop: 256 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.pitch.validate()?;
        if self.n_mels == 0 || self.mel_hop == 0 || self.n_fft < 2 {
            return Err(Error::Config("n_mels and mel_hop must be positive and n_fft at least 2".into()));
        }
        Ok(())
    }

    fn mel(&self, rate: u32) -> MelConfig {
        let base = MelConfig::default();
        MelConfig {
            n_mels: self.n_mels,
            sample_rate: rate,
            fmax: base.fmax.min(f64::from(rate) / 2.0),
            stft: crate::stft::StftConfig::new(self.n_fft, self.mel_hop, self.n_fft),
            ..base
        }
    }
}

/// One reference/degraded comparison. `fpc` is null when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub file: String,
    pub f0rmse_cents: f64,
    pub fpc: Option<f64>,
    pub periodicity_rmse: f64,
    pub mel_l1: f64,
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Metric name to value, leaving out undefined entries.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("f0rmse_cents", self.f0rmse_cents)];
        if let Some(r) = self.fpc {
            v.push(("fpc", r));
        }
        v.push(("periodicity_rmse", self.periodicity_rmse));
        v.push(("mel_l1", self.mel_l1));
        v
    }
}

pub fn evaluate_pair(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<MetricReport> {
    evaluate_pair_with(reference, degraded, &MetricsConfig::default())
}

/// Both signals are trimmed to the shorter length, which must be within
/// one pitch hop of the longer.
pub fn evaluate_pair_with(
    reference: &AudioBuffer,
    degraded: &AudioBuffer,
    cfg: &MetricsConfig,
) -> Result<MetricReport> {
    if reference.sample_rate() != degraded.sample_rate() {
        return Err(Error::domain(format!(
            "sample rates differ: {} Hz and {} Hz",
            reference.sample_rate(),
            degraded.sample_rate()
        )));
    }
    let (la, lb) = (reference.len(), degraded.len());
    if la.abs_diff(lb) > cfg.pitch.hop {
        return Err(Error::shape(format!(
            "lengths {la} and {lb} differ by more than one {}-sample hop",
            cfg.pitch.hop
        )));
    }
    let mut flags = Vec::new();
    let len = la.min(lb);
    let (r, d) = if la == lb {
        (reference.clone(), degraded.clone())
    } else {
        flags.push(FLAG_TRIMMED.to_string());
        (reference.segment(0, len), degraded.segment(0, len))
    };
    let tr = extract_f0_with(&r, &cfg.pitch)?;
    let td = extract_f0_with(&d, &cfg.pitch)?;
    if co_voiced(&tr, &td)?.is_empty() {
        flags.push(FLAG_NO_CO_VOICED.to_string());
    }
    let f0rmse_cents = f0_rmse_cents(&tr, &td)?;
    let fpc = match fpc(&tr, &td) {
        Ok(v) => Some(v),
        Err(Error::Undefined(why)) => {
            warn!("pitch correlation undefined: {why}");
            flags.push(FLAG_FPC_UNDEFINED.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        file: String::new(),
        f0rmse_cents,
        fpc,
        periodicity_rmse: periodicity_rmse(&tr, &td)?,
        mel_l1: MelLoss::new(cfg.mel(r.sample_rate()))?.value(&r, &d)?,
        flags,
    })
}

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-pair rows followed by `mean` and `median` rows. Undefined values are
/// left empty and excluded from the aggregates.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("file,f0rmse_cents,fpc,periodicity_rmse,mel_l1,flags\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.file,
            r.f0rmse_cents,
            csv_num(r.fpc),
            r.periodicity_rmse,
            r.mel_l1,
            r.flags.join(";")
        );
    }
    let columns: [Vec<f64>; 4] = [
        reports.iter().map(|r| r.f0rmse_cents).collect(),
        reports.iter().filter_map(|r| r.fpc).collect(),
        reports.iter().map(|r| r.periodicity_rmse).collect(),
        reports.iter().map(|r| r.mel_l1).collect(),
    ];
    for (label, agg) in [("mean", mean as fn(&mut [f64]) -> Option<f64>), ("median", pitch::median)] {
        let vals: Vec<String> = columns.iter().map(|c| csv_num(agg(&mut c.clone()))).collect();
        let _ = writeln!(out, "{label},{},", vals.join(","));
    }
    out
}

fn mean(v: &mut [f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
