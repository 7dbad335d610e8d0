use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::mel::{MelAnalyzer, MelConfig};
use crate::nn::Tensor4;

/// Weight of the feature-matching term in the generator objective.
pub const FM_WEIGHT: f64 = 2.0;
/// Weight of the mel reconstruction term in the generator objective.
pub const MEL_WEIGHT: f64 = 45.0;

/// Least-squares adversarial losses of one sub-discriminator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvLoss {
    pub g: f64,
    pub d: f64,
}

fn same_shape(a: &Tensor4, b: &Tensor4, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `d = mean((real−1)²) + mean(fake²)`, `g = mean((fake−1)²)`.
pub fn adv_loss(real: &Tensor4, fake: &Tensor4) -> Result<AdvLoss> {
    same_shape(real, fake, "adversarial logits")?;
    let n = real.len() as f64;
    let d = real.data().iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / n
        + fake.data().iter().map(|f| f * f).sum::<f64>() / n;
    let g = fake.data().iter().map(|f| (f - 1.0).powi(2)).sum::<f64>() / n;
    Ok(AdvLoss { g, d })
}

/// Summed over sub-discriminators, with the per-sub terms.
pub fn adv_losses(real: &[Tensor4], fake: &[Tensor4]) -> Result<(f64, f64, Vec<AdvLoss>)> {
    if real.len() != fake.len() {
        return Err(Error::shape(format!("{} real vs {} fake logit maps", real.len(), fake.len())));
    }
    let per = real.iter().zip(fake).map(|(r, f)| adv_loss(r, f)).collect::<Result<Vec<_>>>()?;
    let g = per.iter().map(|l| l.g).sum();
    let d = per.iter().map(|l| l.d).sum();
    Ok((g, d, per))
}

/// `∂d/∂real` and `∂d/∂fake`.
pub fn adv_d_grad(real: &Tensor4, fake: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    same_shape(real, fake, "adversarial logits")?;
    let n = real.len() as f64;
    Ok((real.map(|r| 2.0 * (r - 1.0) / n), fake.map(|f| 2.0 * f / n)))
}

/// `∂g/∂fake`.
pub fn adv_g_grad(fake: &Tensor4) -> Tensor4 {
    let n = fake.len() as f64;
    fake.map(|f| 2.0 * (f - 1.0) / n)
}

fn check_features(real: &[Tensor4], fake: &[Tensor4]) -> Result<()> {
    if real.is_empty() {
        return Err(Error::domain("feature matching needs at least one feature map"));
    }
    if real.len() != fake.len() {
        return Err(Error::shape(format!("{} real vs {} fake feature maps", real.len(), fake.len())));
    }
    real.iter().zip(fake).try_for_each(|(r, f)| same_shape(r, f, "feature map"))
}

/// Mean absolute difference per map, averaged over the maps of one
/// sub-discriminator.
pub fn feature_matching(real: &[Tensor4], fake: &[Tensor4]) -> Result<f64> {
    check_features(real, fake)?;
    let total: f64 = real
        .iter()
        .zip(fake)
        .map(|(r, f)| r.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64)
        .sum();
    Ok(total / real.len() as f64)
}

/// `∂fm/∂fake`, using sign(0) = 0.
pub fn feature_matching_grad(real: &[Tensor4], fake: &[Tensor4]) -> Result<Vec<Tensor4>> {
    check_features(real, fake)?;
    let layers = real.len() as f64;
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            let scale = 1.0 / (layers * r.len() as f64);
            let data = f
                .data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| {
                    let d = a - b;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            Tensor4::new(f.shape(), data)
        })
        .collect()
}

/// L1 distance between log-mel spectrograms, with its waveform gradient.
#[derive(Debug, Clone)]
pub struct MelLoss {
    analyzer: MelAnalyzer,
}

impl MelLoss {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        Ok(Self { analyzer: MelAnalyzer::new(cfg)? })
    }

    fn check(reference: &AudioBuffer, generated: &AudioBuffer) -> Result<()> {
        if reference.len() != generated.len() {
            return Err(Error::shape(format!(
                "mel loss needs equal lengths, got {} and {}",
                reference.len(),
                generated.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, reference: &AudioBuffer, generated: &AudioBuffer) -> Result<f64> {
        Self::check(reference, generated)?;
        let a = self.analyzer.log_mel(reference)?;
        let b = self.analyzer.log_mel(generated)?;
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64)
    }

    /// Loss and `∂L/∂generated`.
    pub fn value_and_grad(&self, reference: &AudioBuffer, generated: &AudioBuffer) -> Result<(f64, Vec<f64>)> {
        Self::check(reference, generated)?;
        let a = self.analyzer.log_mel(reference)?;
        let trace = self.analyzer.forward(generated)?;
        let n = a.data().len() as f64;
        let mut loss = 0.0;
        let grad: Vec<f64> = trace
            .log_mel
            .data()
            .iter()
            .zip(a.data())
            .map(|(g, r)| {
                let d = g - r;
                loss += d.abs();
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            })
            .collect();
        Ok((loss / n, self.analyzer.backward(&trace, &grad)?))
    }
}

/// [`MelLoss::value`] with the default 24 kHz analysis.
pub fn mel_loss(reference: &AudioBuffer, generated: &AudioBuffer) -> Result<f64> {
    MelLoss::new(MelConfig::default())?.value(reference, generated)
}
