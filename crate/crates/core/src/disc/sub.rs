use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{scoped, Conv2d, ConvSpec, LeakyRelu, Module, Param, Tensor4};

pub const SUB_LAYERS: usize = 5;
pub const DILATIONS: [usize; 3] = [1, 2, 4];

/// Entry conv, three time-dilated frequency-strided convs, exit conv.
pub struct SubDiscriminator {
    convs: Vec<Conv2d>,
    acts: Vec<LeakyRelu>,
}

impl SubDiscriminator {
    pub fn new(in_ch: usize, channels: usize, slope: f64, init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = vec![Conv2d::new(
            ConvSpec::new(in_ch, channels, (3, 8)).padding(1, ConvSpec::same_padding(8, 1)),
            init_std,
            rng,
        )?];
        for d in DILATIONS {
            convs.push(Conv2d::new(
                ConvSpec::new(channels, channels, (3, 8))
                    .stride(2, 1)
                    .dilation(1, d)
                    .padding(1, ConvSpec::same_padding(8, d)),
                init_std,
                rng,
            )?);
        }
        convs.push(Conv2d::new(ConvSpec::new(channels, 1, (3, 3)).padding(1, 1), init_std, rng)?);
        Ok(Self { convs, acts: (0..SUB_LAYERS - 1).map(|_| LeakyRelu::new(slope)).collect() })
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    /// Feature maps after every layer; the last one is the logit map.
    pub fn forward(&mut self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let mut feats = Vec::with_capacity(SUB_LAYERS);
        let mut h = x.clone();
        for i in 0..SUB_LAYERS {
            h = self.convs[i].forward(&h)?;
            if i + 1 < SUB_LAYERS {
                h = self.acts[i].forward(&h);
            }
            feats.push(h.clone());
        }
        Ok(feats)
    }

    pub fn forward_detached(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let mut feats = Vec::with_capacity(SUB_LAYERS);
        let mut h = x.clone();
        for i in 0..SUB_LAYERS {
            h = self.convs[i].forward_detached(&h)?;
            if i + 1 < SUB_LAYERS {
                h = self.acts[i].apply(&h);
            }
            feats.push(h.clone());
        }
        Ok(feats)
    }

    /// `grads[i]` is `∂L/∂feature_i`; returns `∂L/∂x`.
    pub fn backward(&mut self, grads: &[Tensor4]) -> Result<Tensor4> {
        if grads.len() != SUB_LAYERS {
            return Err(Error::shape(format!("expected {SUB_LAYERS} feature gradients, got {}", grads.len())));
        }
        let mut g = grads[SUB_LAYERS - 1].clone();
        for i in (0..SUB_LAYERS).rev() {
            if i + 1 < SUB_LAYERS {
                g.add_assign(&grads[i])?;
                g = self.acts[i].backward(&g)?;
            }
            g = self.convs[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for SubDiscriminator {
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

/// Per-octave (3, 9) convolutions over a CQT, re-concatenated along frequency.
pub struct SubBandProcessor {
    bins_per_octave: usize,
    convs: Vec<Conv2d>,
}

impl SubBandProcessor {
    pub fn new(
        octaves: usize,
        bins_per_octave: usize,
        channels: usize,
        init_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let convs = (0..octaves)
            .map(|_| Conv2d::new(ConvSpec::new(2, channels, (3, 9)).padding(1, 4), init_std, rng))
            .collect::<Result<_>>()?;
        Ok(Self { bins_per_octave, convs })
    }

    pub fn octaves(&self) -> usize {
        self.convs.len()
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.height() != self.bins_per_octave * self.convs.len() {
            return Err(Error::shape(format!(
                "sub-band input has {} rows, expected {} octaves of {}",
                x.height(),
                self.convs.len(),
                self.bins_per_octave
            )));
        }
        Ok(())
    }

    /// Output of each octave's convolution before concatenation.
    pub fn forward_bands(&mut self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        self.check(x)?;
        let b = self.bins_per_octave;
        self.convs.iter_mut().enumerate().map(|(j, c)| c.forward(&x.slice_height(j * b, b)?)).collect()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        Tensor4::concat_height(&self.forward_bands(x)?)
    }

    pub fn forward_detached(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let b = self.bins_per_octave;
        let bands = self
            .convs
            .iter()
            .enumerate()
            .map(|(j, c)| c.forward_detached(&x.slice_height(j * b, b)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor4::concat_height(&bands)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let b = self.bins_per_octave;
        let parts = self
            .convs
            .iter_mut()
            .enumerate()
            .map(|(j, c)| c.backward(&grad.slice_height(j * b, b)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor4::concat_height(&parts)
    }
}

impl Module for SubBandProcessor {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&mut |n, p| f(&scoped(&format!("octave{i}"), n), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&mut |n, p| f(&scoped(&format!("octave{i}"), n), p));
        }
    }
}

/// Time kernels, strides and paddings of the three compressor layers.
pub const TC_LAYERS: [(usize, usize, usize); 3] = [(16, 8, 8), (16, 8, 8), (8, 4, 4)];

/// Three strided convolutions along time that shrink a unit-hop CWT by 256.
pub struct TemporalCompressor {
    convs: Vec<Conv2d>,
}

impl TemporalCompressor {
    pub fn new(channels: usize, init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut in_ch = 2;
        let mut convs = Vec::new();
        for (k, s, p) in TC_LAYERS {
            convs.push(Conv2d::new(ConvSpec::new(in_ch, channels, (1, k)).stride(1, s).padding(0, p), init_std, rng)?);
            in_ch = channels;
        }
        Ok(Self { convs })
    }

    /// Output frame count for `t` input samples.
    pub fn output_frames(t: usize) -> usize {
        TC_LAYERS.iter().fold(t, |t, (k, s, p)| (t + 2 * p - k) / s + 1)
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let mut feats = Vec::with_capacity(3);
        let mut h = x.clone();
        for c in &mut self.convs {
            h = c.forward(&h)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }

    pub fn forward_detached(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        let mut feats = Vec::with_capacity(3);
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward_detached(&h)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }

    pub fn backward(&mut self, grads: &[Tensor4]) -> Result<Tensor4> {
        if grads.len() != self.convs.len() {
            return Err(Error::shape("one gradient per compressor layer required"));
        }
        let mut g = grads[grads.len() - 1].clone();
        for i in (0..self.convs.len()).rev() {
            if i + 1 < self.convs.len() {
                g.add_assign(&grads[i])?;
            }
            g = self.convs[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for TemporalCompressor {
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
