//! Flat-array entry points for foreign callers.
//!
//! Everything crosses as owned `f32` buffers with an explicit shape, so a
//! binding layer only has to copy bytes. Values equal the native `f64`
//! results rounded to `f32`.

use std::collections::BTreeMap;

use crate::audio::AudioBuffer;
use crate::config::Config;
use crate::disc::Discriminator;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair_with, MetricsConfig};
use crate::tfr::TransformKind;

/// Row-major `f32` array. The shape product always equals the data length.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    fn narrow(shape: Vec<usize>, data: impl Iterator<Item = f64>) -> Result<Self> {
        Self::new(shape, data.map(|v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Little-endian bytes of the data, without the shape.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Format(format!("{} bytes is not a whole number of f32", bytes.len())));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(shape, data)
    }
}

fn audio(samples: &[f32], rate: u32) -> Result<AudioBuffer> {
    AudioBuffer::new(samples.iter().map(|&v| f64::from(v)).collect(), rate)
}

/// Real and imaginary parts, each shaped `[bins, frames]`. `kind` is
/// `stft`, `cqt` or `cwt`.
pub fn transform(samples: &[f32], rate: u32, kind: &str, config: &Config) -> Result<(Array, Array)> {
    let kind: TransformKind = kind.parse()?;
    let spec = config.transform(&audio(samples, rate)?, kind)?;
    let shape = vec![spec.bins(), spec.frames()];
    Ok((
        Array::narrow(shape.clone(), spec.data().iter().map(|c| c.re))?,
        Array::narrow(shape, spec.data().iter().map(|c| c.im))?,
    ))
}

/// One sub-discriminator's outputs for a single waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SubOutput {
    pub name: String,
    pub logits: Array,
    /// Every feature map in order, ending with the logits.
    pub features: Vec<Array>,
}

pub fn discriminator_forward(samples: &[f32], rate: u32, disc: &Discriminator) -> Result<Vec<SubOutput>> {
    let outs = disc.forward_detached(&[audio(samples, rate)?])?;
    outs.into_iter()
        .map(|o| {
            let features = o
                .features
                .iter()
                .map(|f| Array::narrow(f.shape().to_vec(), f.data().iter().copied()))
                .collect::<Result<Vec<_>>>()?;
            Ok(SubOutput { name: o.name, logits: features.last().cloned().expect("at least one feature"), features })
        })
        .collect()
}

/// Metric name to value. Undefined metrics are absent.
pub fn evaluate_pair(
    reference: &[f32],
    degraded: &[f32],
    rate: u32,
    config: &MetricsConfig,
) -> Result<BTreeMap<String, f64>> {
    let report = evaluate_pair_with(&audio(reference, rate)?, &audio(degraded, rate)?, config)?;
    Ok(report.values().into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}
