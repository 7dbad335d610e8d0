use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mel::MelSpectrogram;
use crate::nn::{
    scoped, upsample_time, upsample_time_backward, Conv2d, ConvSpec, LeakyRelu, Module, Param, Tanh, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    pub hidden: [usize; 2],
    pub kernel: usize,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { n_mels: 100, hidden: [32, 16], kernel: 7, init_std: 0.01 }
    }
}

/// Two ×16 upsampling stages between time-only convolutions, so every mel
/// frame becomes 256 samples.
pub struct ToyGenerator {
    cfg: GeneratorConfig,
    convs: [Conv2d; 3],
    acts: [LeakyRelu; 2],
    tanh: Tanh,
}

pub const UPSAMPLE: usize = 16;

impl ToyGenerator {
    pub fn new(cfg: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.kernel.is_multiple_of(2) {
            return Err(Error::Config("generator kernel must be odd".into()));
        }
        let p = cfg.kernel / 2;
        let conv =
            |i, o, rng: &mut _| Conv2d::new(ConvSpec::new(i, o, (1, cfg.kernel)).padding(0, p), cfg.init_std, rng);
        let [h1, h2] = cfg.hidden;
        Ok(Self {
            cfg,
            convs: [conv(cfg.n_mels, h1, rng)?, conv(h1, h2, rng)?, conv(h2, 1, rng)?],
            acts: [LeakyRelu::default(), LeakyRelu::default()],
            tanh: Tanh::default(),
        })
    }

    pub fn samples_per_frame() -> usize {
        UPSAMPLE * UPSAMPLE
    }

    /// Mel bands become channels: `(1, n_mels, 1, frames)`.
    pub fn input_from_mel(&self, mel: &MelSpectrogram) -> Result<Tensor4> {
        if mel.mels() != self.cfg.n_mels {
            return Err(Error::shape(format!("generator expects {} mel bands, got {}", self.cfg.n_mels, mel.mels())));
        }
        Tensor4::new([1, mel.mels(), 1, mel.frames()], mel.data().to_vec())
    }

    /// Returns `(1, 1, 1, 256·frames)`.
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let h = self.convs[0].forward(x)?;
        let h = upsample_time(&self.acts[0].forward(&h), UPSAMPLE);
        let h = self.convs[1].forward(&h)?;
        let h = upsample_time(&self.acts[1].forward(&h), UPSAMPLE);
        let h = self.convs[2].forward(&h)?;
        Ok(self.tanh.forward(&h))
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let g = self.tanh.backward(grad)?;
        let g = self.convs[2].backward(&g)?;
        let g = self.acts[1].backward(&upsample_time_backward(&g, UPSAMPLE)?)?;
        let g = self.convs[1].backward(&g)?;
        let g = self.acts[0].backward(&upsample_time_backward(&g, UPSAMPLE)?)?;
        self.convs[0].backward(&g)
    }
}

impl Module for ToyGenerator {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&mut |n, p| f(&scoped(&format!("conv{i}"), n), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&mut |n, p| f(&scoped(&format!("conv{i}"), n), p));
        }
    }
}
