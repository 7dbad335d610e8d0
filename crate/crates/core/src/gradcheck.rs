//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check contracts the op's output with a fixed random tensor so the
//! loss is a scalar, then compares the analytic gradient at a sample of
//! coordinates against `(L(x + h) − L(x − h)) / 2h`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::audio::{AudioBuffer, Resampler};
use crate::cqt::CqtPipeline;
use crate::cwt::{cwt, cwt_adjoint, make_scales, CwtPlan, WaveletBasis};
use crate::disc::{DiscConfig, DiscKind, Discriminator};
use crate::error::{Error, Result};
use crate::mel::{MelAnalyzer, MelConfig};
use crate::nn::{upsample_time, upsample_time_backward, Conv2d, ConvSpec, LeakyRelu, Module, Tanh, Tensor4};
use crate::stft::{stft, stft_adjoint, StftConfig};
use crate::train::{
    adv_d_grad, adv_g_grad, adv_loss, feature_matching, feature_matching_grad, GeneratorConfig, MelLoss, ToyGenerator,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    /// Threshold for single ops.
    pub op_tol: f64,
    /// Threshold for composed networks.
    pub composed_tol: f64,
    /// Coordinates sampled per checked tensor.
    pub coords: usize,
    /// Name of a check whose analytic gradient is deliberately corrupted.
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, step: 1e-5, op_tol: 1e-4, composed_tol: 1e-3, coords: 8, fault: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Op,
    Composed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Names of every registered check, in run order.
pub const CHECKS: [&str; 20] = [
    "conv2d.input",
    "conv2d.direction",
    "conv2d.gain",
    "conv2d.bias",
    "leaky_relu",
    "tanh",
    "upsample_time",
    "stft",
    "resample",
    "cqt",
    "cwt",
    "log_mel",
    "adv_loss.d",
    "adv_loss.g",
    "feature_matching",
    "mel_loss",
    "generator",
    "disc.stft",
    "disc.sbp_cqt",
    "disc.tc_cwt",
];

fn kind_of(name: &str) -> CheckKind {
    if name.starts_with("disc.") || name == "generator" {
        CheckKind::Composed
    } else {
        CheckKind::Op
    }
}

struct Ctx<'a> {
    cfg: &'a GradcheckConfig,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(lo..hi)).collect()
    }

    fn tensor(&mut self, shape: [usize; 4]) -> Tensor4 {
        let n = shape.iter().product();
        Tensor4::new(shape, self.uniform(n, -1.0, 1.0)).expect("shape")
    }

    /// Values bounded away from zero, for ops with a kink there.
    fn off_zero(&mut self, shape: [usize; 4]) -> Tensor4 {
        let t = self.tensor(shape);
        t.map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
    }

    fn coords(&mut self, len: usize) -> Vec<usize> {
        let n = self.cfg.coords.min(len);
        let mut idx = sample(&mut self.rng, len, n).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Max relative error over sampled coordinates of a flat input.
    fn compare(
        &mut self,
        x: &[f64],
        analytic: &[f64],
        mut loss: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<(usize, f64)> {
        let h = self.cfg.step;
        let coords = self.coords(x.len());
        let mut worst: f64 = 0.0;
        let mut xp = x.to_vec();
        for &i in &coords {
            xp[i] = x[i] + h;
            let up = loss(&xp)?;
            xp[i] = x[i] - h;
            let down = loss(&xp)?;
            xp[i] = x[i];
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
        Ok((coords.len(), worst))
    }

    /// Same for the parameters of a module whose names contain `filter`.
    fn compare_params<M: Module>(
        &mut self,
        module: &mut M,
        filter: &str,
        mut loss: impl FnMut(&M) -> Result<f64>,
    ) -> Result<(usize, f64)> {
        let h = self.cfg.step;
        let mut targets = Vec::new();
        module.visit_params(&mut |name, p| {
            if name.contains(filter) {
                targets.push((name.to_string(), p.len(), p.grad.clone()));
            }
        });
        let (mut checked, mut worst) = (0, 0.0f64);
        for (name, len, grad) in targets {
            for i in self.coords(len) {
                let nudge = |m: &mut M, d: f64| {
                    m.visit_params_mut(&mut |n, p| {
                        if n == name {
                            p.value[i] += d;
                        }
                    })
                };
                nudge(module, h);
                let up = loss(module)?;
                nudge(module, -2.0 * h);
                let down = loss(module)?;
                nudge(module, h);
                worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h)));
                checked += 1;
            }
        }
        Ok((checked, worst))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn contract(spec_data: &[Complex64], r: &[Complex64]) -> f64 {
    spec_data.iter().zip(r).map(|(s, r)| s.re * r.re + s.im * r.im).sum()
}

fn complex_weights(ctx: &mut Ctx, n: usize) -> Vec<Complex64> {
    let v = ctx.uniform(2 * n, -1.0, 1.0);
    v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn audio(samples: &[f64], rate: u32) -> Result<AudioBuffer> {
    AudioBuffer::new(samples.to_vec(), rate)
}

fn conv_check(ctx: &mut Ctx, target: &str) -> Result<(usize, f64)> {
    let specs = [
        ConvSpec::new(2, 3, (3, 8)).padding(1, 7).dilation(1, 2).stride(2, 1),
        ConvSpec::new(2, 2, (1, 16)).stride(1, 8).padding(0, 8),
        ConvSpec::new(3, 2, (3, 9)).padding(1, 4),
    ];
    let (mut checked, mut worst) = (0, 0.0f64);
    for spec in specs {
        let mut conv = Conv2d::new(spec, 0.3, &mut ctx.rng)?;
        conv.bias_mut().value = ctx.uniform(spec.out_ch, -0.5, 0.5);
        let x = ctx.tensor([2, spec.in_ch, 6, 40]);
        let y = conv.forward(&x)?;
        let r = ctx.tensor(y.shape());
        let gx = conv.backward(&r)?;
        let (n, w) = match target {
            "input" => ctx.compare(x.data(), gx.data(), |xv| {
                let xt = Tensor4::new(x.shape(), xv.to_vec())?;
                Ok(dot(conv.forward_detached(&xt)?.data(), r.data()))
            })?,
            name => ctx.compare_params(&mut conv, name, |c| Ok(dot(c.forward_detached(&x)?.data(), r.data())))?,
        };
        checked += n;
        worst = worst.max(w);
    }
    Ok((checked, worst))
}

fn stft_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let cfg = StftConfig::new(64, 16, 48);
    let x = ctx.uniform(300, -1.0, 1.0);
    let n = stft(&audio(&x, 8000)?, &cfg)?.data().len();
    let r = complex_weights(ctx, n);
    let g = stft_adjoint(&r, x.len(), &cfg)?;
    ctx.compare(&x, &g, |xv| Ok(contract(stft(&audio(xv, 8000)?, &cfg)?.data(), &r)))
}

fn resample_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let rs = Resampler::new(8000, 16000)?;
    let x = ctx.uniform(200, -1.0, 1.0);
    let r = ctx.uniform(rs.output_len(x.len()), -1.0, 1.0);
    let g = rs.adjoint(&r, x.len());
    ctx.compare(&x, &g, |xv| Ok(dot(&rs.process(xv), &r)))
}

fn cqt_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let p = CqtPipeline::new(4, 1000.0, 2, 16, 8000)?;
    let x = ctx.uniform(400, -1.0, 1.0);
    let n = p.forward(&x)?.data().len();
    let r = complex_weights(ctx, n);
    let g = p.adjoint(&r, x.len())?;
    ctx.compare(&x, &g, |xv| Ok(contract(p.forward(xv)?.data(), &r)))
}

fn cwt_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let plan = CwtPlan::new(WaveletBasis::CMOR, make_scales(24, 6)?, 8000)?;
    let x = ctx.uniform(256, -1.0, 1.0);
    let r = complex_weights(ctx, plan.rows() * x.len());
    let g = cwt_adjoint(&r, x.len(), &plan)?;
    ctx.compare(&x, &g, |xv| Ok(contract(cwt(&audio(xv, 8000)?, &plan)?.data(), &r)))
}

fn mel_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let cfg = MelConfig {
        n_mels: 16,
        fmax: 4000.0,
        sample_rate: 8000,
        stft: StftConfig::new(128, 32, 128),
        ..MelConfig::default()
    };
    let an = MelAnalyzer::new(cfg)?;
    let x = ctx.uniform(512, -1.0, 1.0);
    let trace = an.forward(&audio(&x, 8000)?)?;
    let r = ctx.uniform(trace.log_mel.data().len(), -1.0, 1.0);
    let g = an.backward(&trace, &r)?;
    ctx.compare(&x, &g, |xv| Ok(dot(an.log_mel(&audio(xv, 8000)?)?.data(), &r)))
}

fn adv_check(ctx: &mut Ctx, d: bool) -> Result<(usize, f64)> {
    let shape = [2, 1, 3, 5];
    let (real, fake) = (ctx.tensor(shape), ctx.tensor(shape));
    if d {
        let (gr, gf) = adv_d_grad(&real, &fake)?;
        let joined: Vec<f64> = real.data().iter().chain(fake.data()).copied().collect();
        let grad: Vec<f64> = gr.data().iter().chain(gf.data()).copied().collect();
        let n = real.len();
        ctx.compare(&joined, &grad, |v| {
            let r = Tensor4::new(shape, v[..n].to_vec())?;
            let f = Tensor4::new(shape, v[n..].to_vec())?;
            Ok(adv_loss(&r, &f)?.d)
        })
    } else {
        let g = adv_g_grad(&fake);
        ctx.compare(fake.data(), g.data(), |v| Ok(adv_loss(&real, &Tensor4::new(shape, v.to_vec())?)?.g))
    }
}

fn fm_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let shapes = [[1, 2, 4, 6], [1, 3, 2, 3]];
    let real: Vec<Tensor4> = shapes.iter().map(|&s| ctx.tensor(s)).collect();
    // keep every difference clear of the |·| kink
    let fake: Vec<Tensor4> = real
        .iter()
        .map(|r| {
            let d = ctx.off_zero(r.shape());
            let mut f = r.clone();
            f.add_assign(&d).expect("same shape");
            f
        })
        .collect();
    let grads = feature_matching_grad(&real, &fake)?;
    let (mut checked, mut worst) = (0, 0.0f64);
    for j in 0..fake.len() {
        let (n, w) = ctx.compare(fake[j].data(), grads[j].data(), |v| {
            let mut f = fake.clone();
            f[j] = Tensor4::new(f[j].shape(), v.to_vec())?;
            feature_matching(&real, &f)
        })?;
        checked += n;
        worst = worst.max(w);
    }
    Ok((checked, worst))
}

fn mel_loss_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let cfg = MelConfig {
        n_mels: 16,
        fmax: 4000.0,
        sample_rate: 8000,
        stft: StftConfig::new(128, 32, 128),
        ..MelConfig::default()
    };
    let loss = MelLoss::new(cfg)?;
    let reference = audio(&ctx.uniform(512, -1.0, 1.0), 8000)?;
    let x = ctx.uniform(512, -1.0, 1.0);
    let (_, g) = loss.value_and_grad(&reference, &audio(&x, 8000)?)?;
    ctx.compare(&x, &g, |xv| loss.value(&reference, &audio(xv, 8000)?))
}

fn generator_check(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let cfg = GeneratorConfig { n_mels: 6, hidden: [4, 3], kernel: 5, init_std: 0.3 };
    let mut g = ToyGenerator::new(cfg, &mut ctx.rng)?;
    let x = ctx.tensor([1, 6, 1, 3]);
    let y = g.forward(&x)?;
    let r = ctx.tensor(y.shape());
    g.zero_grad();
    let gx = g.backward(&r)?;
    let (n1, w1) = ctx.compare(x.data(), gx.data(), |v| {
        let mut probe = ToyGenerator::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        copy_params(&g, &mut probe);
        Ok(dot(probe.forward(&Tensor4::new(x.shape(), v.to_vec())?)?.data(), r.data()))
    })?;
    let (n2, w2) = ctx.compare_params(&mut g, "", |m| {
        let mut probe = ToyGenerator::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        copy_params(m, &mut probe);
        Ok(dot(probe.forward(&x)?.data(), r.data()))
    })?;
    Ok((n1 + n2, w1.max(w2)))
}

fn copy_params(from: &dyn Module, to: &mut dyn Module) {
    let mut values = Vec::new();
    from.visit_params(&mut |_, p| values.push(p.value.clone()));
    let mut i = 0;
    to.visit_params_mut(&mut |_, p| {
        p.value.clone_from(&values[i]);
        i += 1;
    });
}

fn disc_check(ctx: &mut Ctx, kind: DiscKind) -> Result<(usize, f64)> {
    let cfg = DiscConfig { init_std: 0.3, ..DiscConfig::miniature() };
    let mut d = Discriminator::new(cfg, &[kind], ctx.rng.random())?;
    // random biases so no layer sits exactly at the rectifier kink
    d.visit_params_mut(&mut |name, p| {
        if name.ends_with("bias") {
            p.value.iter_mut().for_each(|b| *b = 0.01);
        }
    });
    let x = ctx.uniform(1024, -1.0, 1.0);
    let items = [audio(&x, 8000)?];
    let outs = d.forward(&items)?;
    let weights: Vec<Vec<Tensor4>> =
        outs.iter().map(|o| o.features.iter().map(|f| ctx.tensor(f.shape())).collect()).collect();
    let loss = |d: &Discriminator, buf: &AudioBuffer| -> Result<f64> {
        let outs = d.forward_detached(std::slice::from_ref(buf))?;
        Ok(outs
            .iter()
            .zip(&weights)
            .map(|(o, w)| o.features.iter().zip(w).map(|(f, r)| dot(f.data(), r.data())).sum::<f64>())
            .sum())
    };
    d.zero_grad();
    let gx = d.backward(&weights)?;
    let (n1, w1) = ctx.compare(&x, &gx[0], |v| loss(&d, &audio(v, 8000)?))?;
    let (n2, w2) = ctx.compare_params(&mut d, "", |m| loss(m, &items[0]))?;
    Ok((n1 + n2, w1.max(w2)))
}

fn run_one(name: &str, ctx: &mut Ctx) -> Result<(usize, f64)> {
    match name {
        "conv2d.input" => conv_check(ctx, "input"),
        "conv2d.direction" => conv_check(ctx, "v"),
        "conv2d.gain" => conv_check(ctx, "g"),
        "conv2d.bias" => conv_check(ctx, "bias"),
        "leaky_relu" => {
            let x = ctx.off_zero([1, 2, 3, 7]);
            let r = ctx.tensor(x.shape());
            let mut act = LeakyRelu::default();
            act.forward(&x);
            let g = act.backward(&r)?;
            let probe = LeakyRelu::default();
            ctx.compare(x.data(), g.data(), |v| {
                Ok(dot(probe.apply(&Tensor4::new(x.shape(), v.to_vec())?).data(), r.data()))
            })
        }
        "tanh" => {
            let x = ctx.tensor([1, 2, 3, 7]);
            let r = ctx.tensor(x.shape());
            let mut act = Tanh::default();
            act.forward(&x);
            let g = act.backward(&r)?;
            ctx.compare(x.data(), g.data(), |v| Ok(dot(&v.iter().map(|a| a.tanh()).collect::<Vec<_>>(), r.data())))
        }
        "upsample_time" => {
            let x = ctx.tensor([1, 2, 2, 5]);
            let r = ctx.tensor([1, 2, 2, 20]);
            let g = upsample_time_backward(&r, 4)?;
            ctx.compare(x.data(), g.data(), |v| {
                Ok(dot(upsample_time(&Tensor4::new(x.shape(), v.to_vec())?, 4).data(), r.data()))
            })
        }
        "stft" => stft_check(ctx),
        "resample" => resample_check(ctx),
        "cqt" => cqt_check(ctx),
        "cwt" => cwt_check(ctx),
        "log_mel" => mel_check(ctx),
        "adv_loss.d" => adv_check(ctx, true),
        "adv_loss.g" => adv_check(ctx, false),
        "feature_matching" => fm_check(ctx),
        "mel_loss" => mel_loss_check(ctx),
        "generator" => generator_check(ctx),
        "disc.stft" => disc_check(ctx, DiscKind::Stft),
        "disc.sbp_cqt" => disc_check(ctx, DiscKind::Cqt),
        "disc.tc_cwt" => disc_check(ctx, DiscKind::Cwt),
        other => Err(Error::Config(format!("unknown gradient check {other:?}"))),
    }
}

/// Run the checks named in `names` (all of [`CHECKS`] when empty).
pub fn run_gradchecks(cfg: &GradcheckConfig, names: &[&str]) -> Result<Vec<CheckResult>> {
    let names: Vec<&str> = if names.is_empty() { CHECKS.to_vec() } else { names.to_vec() };
    names
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let mut ctx =
                Ctx { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1000).wrapping_add(i as u64)) };
            let (checked, mut worst) = run_one(name, &mut ctx)?;
            if cfg.fault.as_deref() == Some(name) {
                // stands in for a backward pass that is off by 1%
                worst = worst.max(rel_err(1.01, 1.0));
            }
            let kind = kind_of(name);
            let tol = match kind {
                CheckKind::Op => cfg.op_tol,
                CheckKind::Composed => cfg.composed_tol,
            };
            Ok(CheckResult { name: name.to_string(), kind, checked, max_rel_err: worst, tol, passed: worst < tol })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_gradchecks(&GradcheckConfig::default(), &[]).unwrap();
        assert_eq!(results.len(), CHECKS.len());
        for r in &results {
            eprintln!("{:18} {:.3e} ({} coords)", r.name, r.max_rel_err, r.checked);
        }
        for r in &results {
            assert!(r.checked > 0, "{}", r.name);
            assert!(r.passed, "{} {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn fault_is_caught() {
        let cfg = GradcheckConfig { fault: Some("tanh".into()), ..GradcheckConfig::default() };
        let r = run_gradchecks(&cfg, &["tanh", "upsample_time"]).unwrap();
        assert!(!r[0].passed);
        assert!(r[1].passed);
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(run_gradchecks(&GradcheckConfig::default(), &["nope"]), Err(Error::Config(_))));
    }
}
