//! Run configuration: one TOML document with a section per subsystem.
//!
//! Every section and key is optional and falls back to its default; unknown
//! keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::cqt::{CqtPipeline, DEFAULT_F1, DEFAULT_HOP, DEFAULT_OCTAVES};
use crate::cwt::{cwt, make_scales, ScaleBasis, WaveletBasis};
use crate::disc::DiscConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::stft::{stft, StftConfig};
use crate::tfr::{ComplexSpectrogram, TransformKind};
use crate::train::TrainConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "TFRDISC_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub n_fft: usize,
    pub hop: usize,
    pub win_len: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        Self { n_fft: 1024, hop: 256, win_len: 1024 }
    }
}

impl StftSection {
    pub fn stft(&self) -> StftConfig {
        StftConfig::new(self.n_fft, self.hop, self.win_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqtSection {
    pub bins_per_octave: usize,
    pub f1: f64,
    pub n_octaves: usize,
    pub hop: usize,
}

impl Default for CqtSection {
    fn default() -> Self {
        Self { bins_per_octave: 24, f1: DEFAULT_F1, n_octaves: DEFAULT_OCTAVES, hop: DEFAULT_HOP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CwtSection {
    pub max_scale: usize,
    /// Number of scales; `max_scale` when absent.
    pub count: Option<usize>,
    pub basis: WaveletBasis,
}

impl Default for CwtSection {
    fn default() -> Self {
        Self { max_scale: 512, count: None, basis: WaveletBasis::CMOR }
    }
}

impl CqtSection {
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_octave == 0 || self.n_octaves == 0 || self.hop == 0 {
            return Err(Error::Config("bins_per_octave, n_octaves and hop must be positive".into()));
        }
        if !(self.f1 > 0.0 && self.f1.is_finite()) {
            return Err(Error::Config(format!("f1 must be positive, got {}", self.f1)));
        }
        Ok(())
    }
}

impl CwtSection {
    pub fn validate(&self) -> Result<()> {
        make_scales(self.max_scale, self.count.unwrap_or(self.max_scale)).map(drop)
    }

    pub fn scale_basis(&self) -> ScaleBasis {
        ScaleBasis { max_scale: self.max_scale, count: self.count, basis: self.basis }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub stft: StftSection,
    pub cqt: CqtSection,
    pub cwt: CwtSection,
    pub disc: DiscConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The file named by `path`, else by [`CONFIG_ENV`], else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section without audio; rate-dependent limits are
    /// checked when a transform is planned. Failures are config errors
    /// naming the section.
    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("[{name}] {m}")),
                other => Error::Config(format!("[{name}] {other}")),
            })
        };
        section("stft", self.stft.stft().validate())?;
        section("cqt", self.cqt.validate())?;
        section("cwt", self.cwt.validate())?;
        section("disc", self.disc.validate())?;
        section("train", self.train.validate())?;
        section("metrics", self.metrics.validate())
    }

    /// One transform of `buf` with this config's settings for `kind`.
    pub fn transform(&self, buf: &AudioBuffer, kind: TransformKind) -> Result<ComplexSpectrogram> {
        match kind {
            TransformKind::Stft => stft(buf, &self.stft.stft()),
            TransformKind::Cqt => {
                let c = &self.cqt;
                CqtPipeline::new(c.bins_per_octave, c.f1, c.n_octaves, c.hop, buf.sample_rate())?.forward(buf.samples())
            }
            TransformKind::Cwt => cwt(buf, &self.cwt.scale_basis().plan(buf.sample_rate())?),
        }
    }
}
