//! STFT, sub-band CQT and temporally compressed CWT discriminators.
//!
//! Every branch maps audio to a complex TFR, splits it into real and
//! imaginary channels, optionally runs a pre-stage (SBP for CQT, TC for CWT)
//! and ends in a [`SubDiscriminator`]. Branches of all kinds live in one
//! [`Discriminator`] so a training step can treat them uniformly.

mod sub;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::cqt::{CqtPipeline, CqtSettings};
use crate::cwt::{cwt, cwt_adjoint, CwtPlan, ScaleBasis, WaveletBasis, DEFAULT_SCALE_BASES};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{scoped, Module, Param, Tensor4, INIT_STD, LEAKY_SLOPE};
use crate::stft::{stft, stft_adjoint, StftConfig, DEFAULT_RESOLUTIONS};

pub use sub::{SubBandProcessor, SubDiscriminator, TemporalCompressor, DILATIONS, SUB_LAYERS, TC_LAYERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiscKind {
    Stft,
    Cqt,
    Cwt,
}

impl DiscKind {
    pub fn letter(self) -> char {
        match self {
            DiscKind::Stft => 'S',
            DiscKind::Cqt => 'C',
            DiscKind::Cwt => 'W',
        }
    }

    /// Parse a selection such as `"SCW"` or `"C"`; order is normalised.
    pub fn parse_set(s: &str) -> Result<Vec<DiscKind>> {
        let mut kinds = Vec::new();
        for ch in s.chars() {
            let k = match ch.to_ascii_uppercase() {
                'S' => DiscKind::Stft,
                'C' => DiscKind::Cqt,
                'W' => DiscKind::Cwt,
                other => return Err(Error::Config(format!("unknown discriminator letter {other:?} (use S, C, W)"))),
            };
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if kinds.is_empty() {
            return Err(Error::Config("empty discriminator selection".into()));
        }
        kinds.sort();
        Ok(kinds)
    }
}

impl fmt::Display for DiscKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for DiscKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match DiscKind::parse_set(s)?.as_slice() {
            [k] if s.len() == 1 => Ok(*k),
            _ => Err(Error::Config(format!("expected a single discriminator letter, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    /// Width of every sub-discriminator conv.
    pub channels: usize,
    pub sbp_channels: usize,
    pub tc_channels: usize,
    pub slope: f64,
    pub init_std: f64,
    pub sample_rate: u32,
    pub stft: Vec<StftConfig>,
    pub cqt: CqtSettings,
    pub cwt: Vec<ScaleBasis>,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            sbp_channels: 32,
            tc_channels: 32,
            slope: LEAKY_SLOPE,
            init_std: INIT_STD,
            sample_rate: 24000,
            stft: DEFAULT_RESOLUTIONS.to_vec(),
            cqt: CqtSettings::default(),
            cwt: DEFAULT_SCALE_BASES.to_vec(),
        }
    }
}

impl DiscConfig {
    /// Tiny 8 kHz configuration for finite-difference checks:
    /// one branch per kind, two CQT octaves of four bins, four channels.
    pub fn miniature() -> Self {
        Self {
            channels: 4,
            sbp_channels: 4,
            tc_channels: 4,
            sample_rate: 8000,
            stft: vec![StftConfig::new(64, 16, 64)],
            cqt: CqtSettings { f1: 1000.0, n_octaves: 2, hop: 16, bins_per_octave: vec![4] },
            cwt: vec![ScaleBasis { max_scale: 16, count: Some(6), basis: WaveletBasis::CMOR }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.sbp_channels == 0 || self.tc_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        if !self.slope.is_finite() {
            return Err(Error::Config("slope must be finite".into()));
        }
        for c in &self.stft {
            c.validate()?;
        }
        Ok(())
    }

    pub fn branch_count(&self, kind: DiscKind) -> usize {
        match kind {
            DiscKind::Stft => self.stft.len(),
            DiscKind::Cqt => self.cqt.bins_per_octave.len(),
            DiscKind::Cwt => self.cwt.len(),
        }
    }
}

/// Logits and ordered feature maps of one sub-discriminator.
///
/// `features` holds the pre-stage outputs (none for STFT, one for the SBP,
/// three for the TC) followed by all five sub-discriminator layer outputs;
/// the last feature is the logit map.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscOutput {
    pub name: String,
    pub kind: DiscKind,
    pub features: Vec<Tensor4>,
}

impl DiscOutput {
    pub fn logits(&self) -> &Tensor4 {
        self.features.last().expect("a discriminator output always has features")
    }

    /// Number of leading pre-stage features.
    pub fn pre_stage_len(&self) -> usize {
        self.features.len() - SUB_LAYERS
    }

    /// Zero gradients shaped like `features`, ready to be filled in.
    pub fn zero_grads(&self) -> Vec<Tensor4> {
        self.features.iter().map(|f| Tensor4::zeros(f.shape())).collect()
    }

    /// Batch item `b` only.
    pub fn item(&self, b: usize) -> DiscOutput {
        DiscOutput {
            name: self.name.clone(),
            kind: self.kind,
            features: self.features.iter().map(|f| f.item(b)).collect(),
        }
    }
}

enum Front {
    Stft(StftConfig),
    Cqt { pipeline: CqtPipeline, sbp: SubBandProcessor },
    Cwt { plan: CwtPlan, tc: TemporalCompressor },
}

struct Branch {
    name: String,
    kind: DiscKind,
    front: Front,
    sub: SubDiscriminator,
    /// Item lengths of the last recorded forward.
    recorded: Option<Vec<usize>>,
}

impl Branch {
    fn transform(&self, buf: &AudioBuffer) -> Result<Tensor4> {
        let spec = match &self.front {
            Front::Stft(cfg) => stft(buf, cfg)?,
            Front::Cqt { pipeline, .. } => pipeline.forward(buf.samples())?,
            Front::Cwt { plan, .. } => cwt(buf, plan)?,
        };
        Ok(Tensor4::from_spectrogram(&spec))
    }

    fn adjoint(&self, grad: &Tensor4, b: usize, len: usize) -> Result<Vec<f64>> {
        let g = grad.to_complex(b)?;
        match &self.front {
            Front::Stft(cfg) => stft_adjoint(&g, len, cfg),
            Front::Cqt { pipeline, .. } => pipeline.adjoint(&g, len),
            Front::Cwt { plan, .. } => cwt_adjoint(&g, len, plan),
        }
    }

    fn input(&self, items: &[AudioBuffer]) -> Result<Tensor4> {
        let tfrs = items.iter().map(|b| self.transform(b)).collect::<Result<Vec<_>>>()?;
        Tensor4::stack_batch(&tfrs)
    }

    fn forward(&mut self, x: &Tensor4, lens: &[usize]) -> Result<DiscOutput> {
        let mut features = match &mut self.front {
            Front::Stft(_) => vec![],
            Front::Cqt { sbp, .. } => vec![sbp.forward(x)?],
            Front::Cwt { tc, .. } => tc.forward(x)?,
        };
        let h = features.last().unwrap_or(x).clone();
        features.extend(self.sub.forward(&h)?);
        self.recorded = Some(lens.to_vec());
        Ok(self.output(features))
    }

    fn forward_detached(&self, x: &Tensor4) -> Result<DiscOutput> {
        let mut features = match &self.front {
            Front::Stft(_) => vec![],
            Front::Cqt { sbp, .. } => vec![sbp.forward_detached(x)?],
            Front::Cwt { tc, .. } => tc.forward_detached(x)?,
        };
        let h = features.last().unwrap_or(x).clone();
        features.extend(self.sub.forward_detached(&h)?);
        Ok(self.output(features))
    }

    fn output(&self, features: Vec<Tensor4>) -> DiscOutput {
        DiscOutput { name: self.name.clone(), kind: self.kind, features }
    }

    fn pre_len(&self) -> usize {
        match &self.front {
            Front::Stft(_) => 0,
            Front::Cqt { .. } => 1,
            Front::Cwt { .. } => TC_LAYERS.len(),
        }
    }

    /// Parameter gradients accumulate; returns `∂L/∂audio` per item, or
    /// nothing when `audio` is false.
    fn backward(&mut self, grads: &[Tensor4], audio: bool) -> Result<Vec<Vec<f64>>> {
        let lens = self
            .recorded
            .take()
            .ok_or_else(|| Error::State(format!("{} backward called before forward", self.name)))?;
        let p = self.pre_len();
        if grads.len() != p + SUB_LAYERS {
            return Err(Error::shape(format!(
                "{} expects {} feature gradients, got {}",
                self.name,
                p + SUB_LAYERS,
                grads.len()
            )));
        }
        let g_sub = self.sub.backward(&grads[p..])?;
        let g_x = match &mut self.front {
            Front::Stft(_) => g_sub,
            Front::Cqt { sbp, .. } => {
                let mut g = g_sub;
                g.add_assign(&grads[0])?;
                sbp.backward(&g)?
            }
            Front::Cwt { tc, .. } => {
                let mut gs = grads[..p].to_vec();
                gs[p - 1].add_assign(&g_sub)?;
                tc.backward(&gs)?
            }
        };
        if !audio {
            return Ok(Vec::new());
        }
        lens.iter().enumerate().map(|(b, &len)| self.adjoint(&g_x, b, len)).collect()
    }
}

impl Module for Branch {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        match &self.front {
            Front::Stft(_) => {}
            Front::Cqt { sbp, .. } => sbp.visit_params(&mut |n, p| f(&scoped("sbp", n), p)),
            Front::Cwt { tc, .. } => tc.visit_params(&mut |n, p| f(&scoped("tc", n), p)),
        }
        self.sub.visit_params(&mut |n, p| f(&scoped("sub", n), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        match &mut self.front {
            Front::Stft(_) => {}
            Front::Cqt { sbp, .. } => sbp.visit_params_mut(&mut |n, p| f(&scoped("sbp", n), p)),
            Front::Cwt { tc, .. } => tc.visit_params_mut(&mut |n, p| f(&scoped("tc", n), p)),
        }
        self.sub.visit_params_mut(&mut |n, p| f(&scoped("sub", n), p));
    }
}

/// Transformed inputs of a batch, as produced by [`Discriminator::analyze`].
#[derive(Debug, Clone)]
pub struct Analysis {
    inputs: Vec<Tensor4>,
    lens: Vec<usize>,
}

impl Analysis {
    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    /// Input tensor of sub-discriminator `i`, shaped `(batch, 2, rows, frames)`.
    pub fn input(&self, i: usize) -> &Tensor4 {
        &self.inputs[i]
    }

    /// The items in `range`, in order.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Analysis> {
        if range.end > self.batch() || range.is_empty() {
            return Err(Error::shape(format!("item range {range:?} outside a batch of {}", self.batch())));
        }
        let inputs = self
            .inputs
            .iter()
            .map(|x| Tensor4::stack_batch(&range.clone().map(|b| x.item(b)).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(Analysis { inputs, lens: self.lens[range].to_vec() })
    }
}

/// An ensemble of sub-discriminators over any subset of {STFT, CQT, CWT}.
pub struct Discriminator {
    config: DiscConfig,
    kinds: Vec<DiscKind>,
    branches: Vec<Branch>,
}

impl Discriminator {
    /// Parameters are drawn from a generator seeded with `seed`, branch by
    /// branch in kind order, so construction is deterministic.
    pub fn new(config: DiscConfig, kinds: &[DiscKind], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut kinds = kinds.to_vec();
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(Error::Config("no discriminator kinds selected".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, std) = (config.channels, config.init_std);
        let rate = config.sample_rate;
        let mut branches = Vec::new();
        for &kind in &kinds {
            if config.branch_count(kind) == 0 {
                return Err(Error::Config(format!("discriminator {kind} has no resolutions configured")));
            }
            match kind {
                DiscKind::Stft => {
                    for (i, cfg) in config.stft.iter().enumerate() {
                        branches.push(Branch {
                            name: format!("stft{i}"),
                            kind,
                            front: Front::Stft(*cfg),
                            sub: SubDiscriminator::new(2, c, config.slope, std, &mut rng)?,
                            recorded: None,
                        });
                    }
                }
                DiscKind::Cqt => {
                    let s = &config.cqt;
                    for (i, &b) in s.bins_per_octave.iter().enumerate() {
                        let pipeline = CqtPipeline::new(b, s.f1, s.n_octaves, s.hop, rate)?;
                        let sbp = SubBandProcessor::new(s.n_octaves, b, config.sbp_channels, std, &mut rng)?;
                        branches.push(Branch {
                            name: format!("cqt{i}"),
                            kind,
                            front: Front::Cqt { pipeline, sbp },
                            sub: SubDiscriminator::new(config.sbp_channels, c, config.slope, std, &mut rng)?,
                            recorded: None,
                        });
                    }
                }
                DiscKind::Cwt => {
                    for (i, sb) in config.cwt.iter().enumerate() {
                        let plan = sb.plan(rate)?;
                        let tc = TemporalCompressor::new(config.tc_channels, std, &mut rng)?;
                        branches.push(Branch {
                            name: format!("cwt{i}"),
                            kind,
                            front: Front::Cwt { plan, tc },
                            sub: SubDiscriminator::new(config.tc_channels, c, config.slope, std, &mut rng)?,
                            recorded: None,
                        });
                    }
                }
            }
        }
        Ok(Self { config, kinds, branches })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn kinds(&self) -> &[DiscKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.branches.iter().map(|b| b.name.clone()).collect()
    }

    fn check_items(&self, items: &[AudioBuffer]) -> Result<()> {
        let first = items.first().ok_or_else(|| Error::domain("empty batch"))?;
        for b in items {
            if b.sample_rate() != self.config.sample_rate {
                return Err(Error::domain(format!(
                    "discriminator expects {} Hz audio, got {} Hz",
                    self.config.sample_rate,
                    b.sample_rate()
                )));
            }
            if b.len() != first.len() {
                return Err(Error::shape("batch items must have equal length"));
            }
        }
        Ok(())
    }

    /// Real and imaginary TFR channels of every item, one batch per
    /// sub-discriminator. Reusable across several forward passes.
    pub fn analyze(&self, items: &[AudioBuffer]) -> Result<Analysis> {
        self.check_items(items)?;
        let inputs = exec::map_slice(&self.branches, |b| b.input(items)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Analysis { inputs, lens: items.iter().map(|b| b.len()).collect() })
    }

    fn check_analysis(&self, a: &Analysis) -> Result<()> {
        if a.inputs.len() != self.branches.len() {
            return Err(Error::shape(format!(
                "analysis has {} inputs for {} sub-discriminators",
                a.inputs.len(),
                self.branches.len()
            )));
        }
        Ok(())
    }

    /// Forward pass recording what [`Discriminator::backward`] needs.
    /// One output per sub-discriminator, each batched over `items`.
    pub fn forward(&mut self, items: &[AudioBuffer]) -> Result<Vec<DiscOutput>> {
        let a = self.analyze(items)?;
        self.forward_analysis(&a)
    }

    pub fn forward_analysis(&mut self, a: &Analysis) -> Result<Vec<DiscOutput>> {
        self.check_analysis(a)?;
        let mut pairs: Vec<(&mut Branch, &Tensor4)> = self.branches.iter_mut().zip(&a.inputs).collect();
        exec::map_mut(&mut pairs, |(b, x)| b.forward(x, &a.lens)).into_iter().collect()
    }

    pub fn forward_detached(&self, items: &[AudioBuffer]) -> Result<Vec<DiscOutput>> {
        self.forward_detached_analysis(&self.analyze(items)?)
    }

    pub fn forward_detached_analysis(&self, a: &Analysis) -> Result<Vec<DiscOutput>> {
        self.check_analysis(a)?;
        let pairs: Vec<(&Branch, &Tensor4)> = self.branches.iter().zip(&a.inputs).collect();
        exec::map_slice(&pairs, |(b, x)| b.forward_detached(x)).into_iter().collect()
    }

    /// `grads[i][j]` is `∂L/∂features_j` of sub-discriminator `i`. Parameter
    /// gradients accumulate; the return value is `∂L/∂audio` per batch item,
    /// summed over sub-discriminators.
    pub fn backward(&mut self, grads: &[Vec<Tensor4>]) -> Result<Vec<Vec<f64>>> {
        self.backward_inner(grads, true)
    }

    /// Like [`Discriminator::backward`] but skips the transform adjoints.
    pub fn backward_params(&mut self, grads: &[Vec<Tensor4>]) -> Result<()> {
        self.backward_inner(grads, false).map(|_| ())
    }

    fn backward_inner(&mut self, grads: &[Vec<Tensor4>], audio: bool) -> Result<Vec<Vec<f64>>> {
        if grads.len() != self.branches.len() {
            return Err(Error::shape(format!(
                "{} gradient lists for {} sub-discriminators",
                grads.len(),
                self.branches.len()
            )));
        }
        let mut pairs: Vec<(&mut Branch, &Vec<Tensor4>)> = self.branches.iter_mut().zip(grads).collect();
        let per_branch =
            exec::map_mut(&mut pairs, |(b, g)| b.backward(g, audio)).into_iter().collect::<Result<Vec<_>>>()?;
        if !audio {
            return Ok(Vec::new());
        }
        let mut total = per_branch[0].clone();
        for item_grads in &per_branch[1..] {
            for (acc, g) in total.iter_mut().zip(item_grads) {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
            }
        }
        Ok(total)
    }

    /// Drop recorded activations without running backward.
    pub fn clear(&mut self) {
        for b in &mut self.branches {
            b.recorded = None;
        }
    }
}

impl Module for Discriminator {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for b in &self.branches {
            b.visit_params(&mut |n, p| f(&scoped(&b.name, n), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for b in &mut self.branches {
            let name = b.name.clone();
            b.visit_params_mut(&mut |n, p| f(&scoped(&name, n), p));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_tone, ToneKind};
    use rand::Rng;

    fn narrow() -> DiscConfig {
        DiscConfig { channels: 2, sbp_channels: 2, tc_channels: 2, ..DiscConfig::default() }
    }

    fn noise(len: usize, rate: u32, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), rate).unwrap()
    }

    #[test]
    fn parse_selection() {
        assert_eq!(DiscKind::parse_set("WCS").unwrap(), vec![DiscKind::Stft, DiscKind::Cqt, DiscKind::Cwt]);
        assert_eq!(DiscKind::parse_set("c").unwrap(), vec![DiscKind::Cqt]);
        assert!(DiscKind::parse_set("SX").is_err());
        assert!(DiscKind::parse_set("").is_err());
        assert_eq!("W".parse::<DiscKind>().unwrap(), DiscKind::Cwt);
    }

    #[test]
    fn three_branches_per_kind() {
        let d = Discriminator::new(narrow(), &[DiscKind::Stft, DiscKind::Cqt, DiscKind::Cwt], 0).unwrap();
        assert_eq!(d.len(), 9);
        assert_eq!(d.names()[3], "cqt0");
    }

    #[test]
    fn cqt_shapes_one_second() {
        let cfg = DiscConfig { cqt: CqtSettings { bins_per_octave: vec![24], ..CqtSettings::default() }, ..narrow() };
        let d = Discriminator::new(cfg, &[DiscKind::Cqt], 0).unwrap();
        let tone = synth_tone(440.0, 1.0, 24000, ToneKind::Sine).unwrap();
        let out = d.forward_detached(&[tone]).unwrap();
        assert_eq!(out.len(), 1);
        let f = &out[0].features;
        assert_eq!(f.len(), 1 + SUB_LAYERS);
        assert_eq!(f[0].shape(), [1, 2, 216, 94]);
        // strided layers halve frequency rows: 216 → 108 → 54 → 27
        let rows: Vec<usize> = f.iter().map(|t| t.height()).collect();
        assert_eq!(rows, vec![216, 216, 108, 54, 27, 27]);
        assert_eq!(out[0].logits().channels(), 1);
    }

    #[test]
    fn stft_shapes() {
        let d = Discriminator::new(narrow(), &[DiscKind::Stft], 0).unwrap();
        let out = d.forward_detached(&[noise(8192, 24000, 1)]).unwrap();
        assert_eq!(out.len(), 3);
        for (o, cfg) in out.iter().zip(&DEFAULT_RESOLUTIONS) {
            assert_eq!(o.features.len(), SUB_LAYERS);
            assert_eq!(o.features[0].height(), cfg.bins());
            // an even time kernel under symmetric padding drops one frame
            assert_eq!(o.features[0].width(), cfg.frames(8192) - 1);
            let k = cfg.bins();
            let expect = [k, k.div_ceil(2), k.div_ceil(4), k.div_ceil(8), k.div_ceil(8)];
            let got: Vec<usize> = o.features.iter().map(|t| t.height()).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn tc_compresses_by_256() {
        // stride 8·8·4 = 256; the quoted paddings add one frame over ceil(T/256)
        assert_eq!(TC_LAYERS.iter().map(|l| l.1).product::<usize>(), 256);
        assert_eq!(TemporalCompressor::output_frames(24000), 95);
        assert_eq!(TemporalCompressor::output_frames(8192), 33);
        let cfg = DiscConfig { cwt: vec![ScaleBasis::new(128, WaveletBasis::CGAU8)], ..narrow() };
        let d = Discriminator::new(cfg, &[DiscKind::Cwt], 0).unwrap();
        let out = d.forward_detached(&[noise(8192, 24000, 2)]).unwrap();
        let f = &out[0].features;
        assert_eq!(f.len(), 3 + SUB_LAYERS);
        assert_eq!(f[2].shape(), [1, 2, 128, 33]);
    }

    #[test]
    fn sbp_octaves_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sbp = SubBandProcessor::new(3, 4, 3, 0.1, &mut rng).unwrap();
        let x = Tensor4::new([1, 2, 12, 10], (0..240).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let base = sbp.forward_bands(&x).unwrap();
        for j in 0..3 {
            let mut z = x.clone();
            for c in 0..2 {
                for h in j * 4..(j + 1) * 4 {
                    for w in 0..10 {
                        let o = z.offset(0, c, h, w);
                        z.data_mut()[o] = 0.0;
                    }
                }
            }
            let bands = sbp.forward_bands(&z).unwrap();
            for (i, (a, b)) in base.iter().zip(&bands).enumerate() {
                assert_eq!(a == b, i != j, "octave {j} leaked into band {i}");
            }
        }
    }

    #[test]
    fn tc_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tc = TemporalCompressor::new(2, 0.1, &mut rng).unwrap();
        let t = 4096;
        let x = Tensor4::new([1, 2, 1, t], (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let base = tc.forward_detached(&x).unwrap().pop().unwrap();
        let n = 2000;
        let mut y = x.clone();
        y.data_mut()[n] += 1.0;
        let moved = tc.forward_detached(&y).unwrap().pop().unwrap();
        let frames = base.width();
        let changed: Vec<usize> =
            (0..frames).filter(|&w| (0..2).any(|c| base.get(0, c, 0, w) != moved.get(0, c, 0, w))).collect();
        assert!(!changed.is_empty());
        // receptive field: 16 + 15·8 + 7·64 = 584 samples, stride 256
        for w in changed {
            let centre = w as f64 * 256.0;
            assert!((centre - n as f64).abs() <= 584.0, "frame {w} changed");
        }
    }

    #[test]
    fn zero_audio_gives_constant_logits_and_is_deterministic() {
        let kinds = [DiscKind::Stft, DiscKind::Cqt];
        let a = Discriminator::new(narrow(), &kinds, 7).unwrap();
        let b = Discriminator::new(narrow(), &kinds, 7).unwrap();
        let silence = AudioBuffer::silence(4096, 24000).unwrap();
        let oa = a.forward_detached(std::slice::from_ref(&silence)).unwrap();
        let ob = b.forward_detached(&[silence]).unwrap();
        assert_eq!(oa, ob);
        for o in &oa {
            // zero bias everywhere → zero logits
            assert!(o.logits().data().iter().all(|&v| v == 0.0));
        }
        let n = noise(4096, 24000, 5);
        assert_eq!(a.forward_detached(std::slice::from_ref(&n)).unwrap(), b.forward_detached(&[n]).unwrap());
    }

    #[test]
    fn backward_contracts() {
        let cfg = DiscConfig::miniature();
        let mut d = Discriminator::new(cfg, &[DiscKind::Stft, DiscKind::Cqt, DiscKind::Cwt], 1).unwrap();
        assert!(matches!(d.backward(&[vec![], vec![], vec![]]), Err(Error::State(_))));
        let x = noise(1024, 8000, 6);
        let out = d.forward(std::slice::from_ref(&x)).unwrap();
        let zeros: Vec<Vec<Tensor4>> = out.iter().map(|o| o.zero_grads()).collect();
        let g = d.backward(&zeros).unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0));
        let mut all_zero = true;
        d.visit_params(&mut |_, p| all_zero &= p.grad.iter().all(|&v| v == 0.0));
        assert!(all_zero);

        let out = d.forward(&[x]).unwrap();
        let ones: Vec<Vec<Tensor4>> = out.iter().map(|o| o.features.iter().map(|f| f.map(|_| 1.0)).collect()).collect();
        let g = d.backward(&ones).unwrap();
        assert!(g[0].iter().any(|&v| v != 0.0));
        d.visit_params(&mut |name, p| {
            if name.contains("sbp") || name.contains("tc") {
                assert!(p.grad.iter().any(|&v| v != 0.0), "{name} received no gradient");
            }
        });
    }

    #[test]
    fn wrong_rate_rejected() {
        let d = Discriminator::new(narrow(), &[DiscKind::Stft], 0).unwrap();
        assert!(matches!(d.forward_detached(&[noise(4096, 16000, 0)]), Err(Error::Domain(_))));
    }
}
