//! Joint GAN objective and a desk-scale training loop around a toy
//! generator.

mod generator;
mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, save_wav, synth_tone, AudioBuffer, ToneKind};
use crate::cwt::ScaleBasis;
use crate::disc::{DiscConfig, DiscKind, DiscOutput, Discriminator};
use crate::error::{Error, Result};
use crate::mel::{MelAnalyzer, MelConfig};
use crate::nn::{AdamW, AdamWConfig, Checkpoint, Module, Tensor4};

pub use generator::{GeneratorConfig, ToyGenerator, UPSAMPLE};
pub use loss::{
    adv_d_grad, adv_g_grad, adv_loss, adv_losses, feature_matching, feature_matching_grad, mel_loss, AdvLoss, MelLoss,
    FM_WEIGHT, MEL_WEIGHT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Discriminator selection, any of `S`, `C`, `W`.
    pub discs: String,
    pub crop: usize,
    pub batch: usize,
    /// Learning rates are multiplied by γ every this many steps.
    pub decay_every: usize,
    /// Fixed-crop mel loss is measured at step 1, every this many steps and
    /// at the last step.
    pub eval_every: usize,
    pub optimizer: AdamWConfig,
    pub generator: GeneratorConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            seed: 0,
            discs: "SCW".into(),
            crop: 4096,
            batch: 1,
            decay_every: 100,
            eval_every: 20,
            optimizer: AdamWConfig::default(),
            generator: GeneratorConfig::default(),
            disc: desk_disc_config(),
        }
    }
}

/// Full transform settings with narrow convs and 32 scales per wavelet, small
/// enough to train on one CPU core.
pub fn desk_disc_config() -> DiscConfig {
    let full = DiscConfig::default();
    DiscConfig {
        channels: 4,
        sbp_channels: 4,
        tc_channels: 4,
        cwt: full.cwt.iter().map(|sb| ScaleBasis { count: Some(32), ..*sb }).collect(),
        ..full
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frame = ToyGenerator::samples_per_frame();
        if self.crop == 0 || !self.crop.is_multiple_of(frame) {
            return Err(Error::Config(format!("crop must be a positive multiple of {frame}, got {}", self.crop)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.decay_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("decay_every and eval_every must be positive".into()));
        }
        DiscKind::parse_set(&self.discs)?;
        self.disc.validate()
    }
}

/// Losses of one step. Per-sub-discriminator terms are kept so the totals
/// can be checked term by term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub names: Vec<String>,
    pub adv_g: Vec<f64>,
    pub adv_d: Vec<f64>,
    pub fm: Vec<f64>,
    pub mel: f64,
    pub total_g: f64,
    pub total_d: f64,
    /// Mel loss on the fixed evaluation crops, on rows where it was measured.
    pub eval_mel: Option<f64>,
}

impl LossBreakdown {
    /// Builds the totals `Σ(adv_g + 2·fm) + 45·mel` and `Σ adv_d`.
    pub fn new(step: usize, names: Vec<String>, adv_g: Vec<f64>, adv_d: Vec<f64>, fm: Vec<f64>, mel: f64) -> Self {
        let total_g = generator_total(&adv_g, &fm, mel);
        let total_d = discriminator_total(&adv_d);
        Self { step, names, adv_g, adv_d, fm, mel, total_g, total_d, eval_mel: None }
    }

    pub fn adv_g_sum(&self) -> f64 {
        self.adv_g.iter().sum()
    }

    pub fn adv_d_sum(&self) -> f64 {
        self.adv_d.iter().sum()
    }

    pub fn fm_sum(&self) -> f64 {
        self.fm.iter().sum()
    }

    /// Distinct discriminator kinds, from the sub-discriminator names.
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> =
            self.names.iter().map(|n| n.trim_end_matches(|c: char| c.is_ascii_digit()).to_string()).collect();
        g.dedup();
        g
    }

    pub fn is_finite(&self) -> bool {
        self.adv_g.iter().chain(&self.adv_d).chain(&self.fm).all(|v| v.is_finite())
            && self.mel.is_finite()
            && self.total_g.is_finite()
            && self.total_d.is_finite()
            && self.eval_mel.is_none_or(f64::is_finite)
    }

    pub fn csv_header(names: &[String]) -> String {
        let mut h = String::from("step,adv_g,adv_d,fm,mel,total_g,total_d,eval_mel");
        for prefix in ["adv_g", "adv_d", "fm"] {
            for n in names {
                let _ = write!(h, ",{prefix}.{n}");
            }
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.adv_g_sum(),
            self.adv_d_sum(),
            self.fm_sum(),
            self.mel,
            self.total_g,
            self.total_d,
            self.eval_mel.map(|v| v.to_string()).unwrap_or_default()
        );
        for v in self.adv_g.iter().chain(&self.adv_d).chain(&self.fm) {
            let _ = write!(r, ",{v}");
        }
        r
    }
}

pub fn generator_total(adv_g: &[f64], fm: &[f64], mel: f64) -> f64 {
    adv_g.iter().zip(fm).map(|(a, f)| a + FM_WEIGHT * f).sum::<f64>() + MEL_WEIGHT * mel
}

pub fn discriminator_total(adv_d: &[f64]) -> f64 {
    adv_d.iter().sum()
}

pub fn losses_csv(rows: &[LossBreakdown]) -> String {
    let names = rows.first().map(|r| r.names.clone()).unwrap_or_default();
    let mut out = LossBreakdown::csv_header(&names);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Every `.wav` in `dir`, sorted by file name, resampled to `rate` if needed.
pub fn load_corpus(dir: impl AsRef<Path>, rate: u32) -> Result<Vec<(PathBuf, AudioBuffer)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no WAV files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let buf = load_wav(&p)?;
            let buf = if buf.sample_rate() == rate { buf } else { resample(&buf, rate)? };
            Ok((p, buf))
        })
        .collect()
}

/// Four one-second tones: two sines and two sawtooths.
pub fn write_toy_corpus(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let tones =
        [(220.0, ToneKind::Sine), (330.0, ToneKind::Sawtooth), (440.0, ToneKind::Sine), (150.0, ToneKind::Sawtooth)];
    tones
        .iter()
        .enumerate()
        .map(|(i, &(f, kind))| {
            let path = dir.join(format!("clip{i}.wav"));
            save_wav(&synth_tone(f, 1.0, 24000, kind)?, &path)?;
            Ok(path)
        })
        .collect()
}

fn stack_items(outs: &[DiscOutput], range: std::ops::Range<usize>) -> Result<Vec<Vec<Tensor4>>> {
    outs.iter()
        .map(|o| {
            o.features
                .iter()
                .map(|f| {
                    let items: Vec<Tensor4> = range.clone().map(|b| f.item(b)).collect();
                    Tensor4::stack_batch(&items)
                })
                .collect()
        })
        .collect()
}

/// Generator, discriminator ensemble and their optimizers.
pub struct Trainer {
    cfg: TrainConfig,
    generator: ToyGenerator,
    disc: Discriminator,
    opt_g: AdamW,
    opt_d: AdamW,
    mel: MelLoss,
    analyzer: MelAnalyzer,
    corpus: Vec<AudioBuffer>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, corpus: Vec<AudioBuffer>) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let rate = cfg.disc.sample_rate;
        if let Some(b) = corpus.iter().find(|b| b.sample_rate() != rate) {
            return Err(Error::Config(format!("corpus clip at {} Hz, expected {rate} Hz", b.sample_rate())));
        }
        let mel_cfg = MelConfig { n_mels: cfg.generator.n_mels, sample_rate: rate, ..MelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = ToyGenerator::new(cfg.generator, &mut rng)?;
        let kinds = DiscKind::parse_set(&cfg.discs)?;
        let disc = Discriminator::new(cfg.disc.clone(), &kinds, cfg.seed.wrapping_add(1))?;
        Ok(Self {
            opt_g: AdamW::new(cfg.optimizer),
            opt_d: AdamW::new(cfg.optimizer),
            mel: MelLoss::new(mel_cfg)?,
            analyzer: MelAnalyzer::new(mel_cfg)?,
            generator,
            disc,
            corpus,
            rng,
            step: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn generator(&self) -> &ToyGenerator {
        &self.generator
    }

    pub fn corpus(&self) -> &[AudioBuffer] {
        &self.corpus
    }

    fn sample_batch(&mut self) -> Vec<AudioBuffer> {
        (0..self.cfg.batch)
            .map(|_| {
                let clip = &self.corpus[self.rng.random_range(0..self.corpus.len())];
                let start =
                    if clip.len() > self.cfg.crop { self.rng.random_range(0..=clip.len() - self.cfg.crop) } else { 0 };
                clip.segment(start, self.cfg.crop)
            })
            .collect()
    }

    fn generator_input(&self, real: &[AudioBuffer]) -> Result<Tensor4> {
        let frames = self.cfg.crop / ToyGenerator::samples_per_frame();
        let inputs = real
            .iter()
            .map(|r| self.generator.input_from_mel(&self.analyzer.log_mel(r)?.take_frames(frames)))
            .collect::<Result<Vec<_>>>()?;
        Tensor4::stack_batch(&inputs)
    }

    fn generate(&mut self, real: &[AudioBuffer]) -> Result<Vec<AudioBuffer>> {
        let x = self.generator_input(real)?;
        let y = self.generator.forward(&x)?;
        let rate = self.cfg.disc.sample_rate;
        (0..y.batch()).map(|b| AudioBuffer::new(y.plane(b, 0).to_vec(), rate)).collect()
    }

    /// Waveform for a whole clip, conditioned on its own log-mel.
    pub fn synthesize(&mut self, clip: &AudioBuffer) -> Result<AudioBuffer> {
        let frame = ToyGenerator::samples_per_frame();
        let len = clip.len() / frame * frame;
        if len == 0 {
            return Err(Error::domain("clip shorter than one generator frame"));
        }
        let x = self.generator.input_from_mel(&self.analyzer.log_mel(clip)?.take_frames(len / frame))?;
        let y = self.generator.forward(&x)?;
        AudioBuffer::new(y.into_data(), clip.sample_rate())
    }

    fn mel_terms(&self, real: &[AudioBuffer], fake: &[AudioBuffer], grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = real.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::new();
        for (r, f) in real.iter().zip(fake) {
            if grad {
                let (v, g) = self.mel.value_and_grad(r, f)?;
                total += v;
                grads.push(g.into_iter().map(|x| x / n).collect());
            } else {
                total += self.mel.value(r, f)?;
            }
        }
        Ok((total / n, grads))
    }

    fn adversarial(&self, real: &[Vec<Tensor4>], fake: &[Vec<Tensor4>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (mut ag, mut ad, mut fm) = (Vec::new(), Vec::new(), Vec::new());
        for (r, f) in real.iter().zip(fake) {
            let l = adv_loss(r.last().expect("features"), f.last().expect("features"))?;
            ag.push(l.g);
            ad.push(l.d);
            fm.push(feature_matching(r, f)?);
        }
        Ok((ag, ad, fm))
    }

    /// Losses on a fresh batch without touching any parameter.
    pub fn evaluate(&mut self) -> Result<LossBreakdown> {
        let real = self.sample_batch();
        let fake = self.generate(&real)?;
        let b = real.len();
        let items: Vec<AudioBuffer> = real.iter().chain(&fake).cloned().collect();
        let outs = self.disc.forward_detached(&items)?;
        let (r, f) = (stack_items(&outs, 0..b)?, stack_items(&outs, b..2 * b)?);
        let (ag, ad, fm) = self.adversarial(&r, &f)?;
        let (mel, _) = self.mel_terms(&real, &fake, false)?;
        let mut row = LossBreakdown::new(self.step, self.disc.names(), ag, ad, fm, mel);
        row.eval_mel = Some(self.eval_mel()?);
        self.finish(row)
    }

    /// Mean mel loss over the first crop of every corpus clip. The crops
    /// never change, so values from different steps are comparable.
    pub fn eval_mel(&mut self) -> Result<f64> {
        let crop = self.cfg.crop;
        let real: Vec<AudioBuffer> = self.corpus.iter().map(|c| c.segment(0, crop)).collect();
        let mut total = 0.0;
        for r in &real {
            let fake = self.generate(std::slice::from_ref(r))?;
            total += self.mel.value(r, &fake[0])?;
        }
        Ok(total / real.len() as f64)
    }

    fn finish(&self, row: LossBreakdown) -> Result<LossBreakdown> {
        if !row.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}", row.step)));
        }
        Ok(row)
    }

    /// One discriminator update followed by one generator update. The
    /// returned losses are those seen by each update, before it is applied.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.step += 1;
        let real = self.sample_batch();
        let fake = self.generate(&real)?;
        let b = real.len();

        // Discriminator: real and fake share one batch, and one analysis
        // serves both updates since the audio does not change in between.
        self.disc.zero_grad();
        let items: Vec<AudioBuffer> = real.iter().chain(&fake).cloned().collect();
        let analysis = self.disc.analyze(&items)?;
        let outs = self.disc.forward_analysis(&analysis)?;
        let (r, f) = (stack_items(&outs, 0..b)?, stack_items(&outs, b..2 * b)?);
        let adv_d: Vec<f64> = r
            .iter()
            .zip(&f)
            .map(|(r, f)| adv_loss(r.last().expect("features"), f.last().expect("features")).map(|l| l.d))
            .collect::<Result<_>>()?;
        let grads = outs
            .iter()
            .zip(r.iter().zip(&f))
            .map(|(o, (r, f))| {
                let mut g = o.zero_grads();
                let (gr, gf) = adv_d_grad(r.last().expect("features"), f.last().expect("features"))?;
                let last = g.len() - 1;
                g[last] = Tensor4::stack_batch(
                    &[(0..b).map(|i| gr.item(i)).collect::<Vec<_>>(), (0..b).map(|i| gf.item(i)).collect()].concat(),
                )?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        self.disc.backward_params(&grads)?;
        self.opt_d.step_module(&mut self.disc)?;
        self.disc.zero_grad();

        // Generator: real features are targets only.
        let real_outs = self.disc.forward_detached_analysis(&analysis.select(0..b)?)?;
        let fake_outs = self.disc.forward_analysis(&analysis.select(b..2 * b)?)?;
        let rf: Vec<Vec<Tensor4>> = real_outs.into_iter().map(|o| o.features).collect();
        let ff: Vec<Vec<Tensor4>> = fake_outs.iter().map(|o| o.features.clone()).collect();
        let (adv_g, _, fm) = self.adversarial(&rf, &ff)?;
        let grads = rf
            .iter()
            .zip(&ff)
            .map(|(r, f)| {
                let mut g: Vec<Tensor4> =
                    feature_matching_grad(r, f)?.into_iter().map(|t| t.map(|v| FM_WEIGHT * v)).collect();
                let last = g.len() - 1;
                g[last].add_assign(&adv_g_grad(f.last().expect("features")))?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let audio_grads = self.disc.backward(&grads)?;
        self.disc.zero_grad();
        let (mel, mel_grads) = self.mel_terms(&real, &fake, true)?;
        let len = self.cfg.crop;
        let mut g = vec![0.0; b * len];
        for (i, (ga, gm)) in audio_grads.iter().zip(&mel_grads).enumerate() {
            for (j, dst) in g[i * len..(i + 1) * len].iter_mut().enumerate() {
                *dst = ga[j] + MEL_WEIGHT * gm[j];
            }
        }
        self.generator.zero_grad();
        self.generator.backward(&Tensor4::new([b, 1, 1, len], g)?)?;
        self.opt_g.step_module(&mut self.generator)?;

        if self.step.is_multiple_of(self.cfg.decay_every) {
            self.opt_g.decay_lr();
            self.opt_d.decay_lr();
        }
        let mut row = LossBreakdown::new(self.step, self.disc.names(), adv_g, adv_d, fm, mel);
        if self.step == 1 || self.step.is_multiple_of(self.cfg.eval_every) {
            row.eval_mel = Some(self.eval_mel()?);
        }
        debug!("step {}: total_g {:.4} total_d {:.4} mel {:.4}", row.step, row.total_g, row.total_d, row.mel);
        self.finish(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_module("generator", &self.generator);
        ck.add_module("disc", &self.disc);
        ck.add_optimizer("opt_g", &self.opt_g);
        ck.add_optimizer("opt_d", &self.opt_d);
        ck
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub rows: Vec<LossBreakdown>,
}

impl TrainReport {
    pub fn mel_at(&self, step: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.step == step).map(|r| r.mel)
    }

    /// Fixed-crop mel loss at `step`, when it was measured there.
    pub fn eval_mel_at(&self, step: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.step == step).and_then(|r| r.eval_mel)
    }

    pub fn csv(&self) -> String {
        losses_csv(&self.rows)
    }
}

/// `steps = 0` yields one row of initial losses; otherwise one row per step.
pub fn run(trainer: &mut Trainer, steps: usize) -> Result<Vec<LossBreakdown>> {
    if steps == 0 {
        return Ok(vec![trainer.evaluate()?]);
    }
    let mut rows = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut row = trainer.step()?;
        if rows.len() + 1 == steps && row.eval_mel.is_none() {
            row.eval_mel = Some(trainer.eval_mel()?);
        }
        if row.step % 50 == 0 {
            info!("step {} mel {:.4} total_g {:.4} total_d {:.4}", row.step, row.mel, row.total_g, row.total_d);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Train on every WAV in `corpus_dir` for `cfg.steps` steps.
pub fn train_toy(corpus_dir: impl AsRef<Path>, cfg: &TrainConfig) -> Result<(TrainReport, Trainer)> {
    let corpus = load_corpus(corpus_dir, cfg.disc.sample_rate)?.into_iter().map(|(_, b)| b).collect();
    let mut trainer = Trainer::new(cfg.clone(), corpus)?;
    let rows = run(&mut trainer, cfg.steps)?;
    Ok((TrainReport { config: cfg.clone(), rows }, trainer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<AudioBuffer> {
        [(220.0, ToneKind::Sine), (330.0, ToneKind::Sawtooth)]
            .iter()
            .map(|&(f, k)| synth_tone(f, 0.5, 24000, k).unwrap())
            .collect()
    }

    fn small(discs: &str) -> TrainConfig {
        TrainConfig { discs: discs.into(), crop: 2048, ..TrainConfig::default() }
    }

    #[test]
    fn totals_follow_the_weights() {
        let row = LossBreakdown::new(
            1,
            vec!["stft0".into(), "cqt0".into()],
            vec![0.5, 0.25],
            vec![1.0, 2.0],
            vec![0.1, 0.2],
            0.3,
        );
        assert_eq!(row.total_g, (0.5 + 2.0 * 0.1) + (0.25 + 2.0 * 0.2) + 45.0 * 0.3);
        assert_eq!(row.total_d, 3.0);
        assert_eq!(row.groups(), vec!["stft", "cqt"]);
    }

    #[test]
    fn csv_columns_track_sub_discriminators() {
        let mut t = Trainer::new(small("S"), corpus()).unwrap();
        let row = t.step().unwrap();
        assert_eq!(row.groups(), vec!["stft"]);
        let header = LossBreakdown::csv_header(&row.names);
        assert_eq!(header.split(',').count(), 8 + 3 * 3);
        assert_eq!(row.csv_row().split(',').count(), 8 + 3 * 3);
    }

    #[test]
    fn zero_steps_reports_initial_losses() {
        let mut t = Trainer::new(small("S"), corpus()).unwrap();
        let rows = run(&mut t, 0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].step, 0);
        assert!(rows[0].mel > 0.0);
    }

    #[test]
    fn reruns_are_identical() {
        let a = run(&mut Trainer::new(small("S"), corpus()).unwrap(), 3).unwrap();
        let b = run(&mut Trainer::new(small("S"), corpus()).unwrap(), 3).unwrap();
        assert_eq!(losses_csv(&a), losses_csv(&b));
    }

    #[test]
    fn bad_configs() {
        assert!(matches!(Trainer::new(small("S"), vec![]), Err(Error::Config(_))));
        let cfg = TrainConfig { crop: 1000, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(matches!(small("SQ").validate(), Err(Error::Config(_))));
    }
}
