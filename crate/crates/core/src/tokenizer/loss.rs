use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::FrozenConvStack;

/// Scalar values of every tokenizer loss term for one step (or an epoch
/// mean). `total` is the weighted sum of the five terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub lesion_focus: f64,
    pub feature: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, lambda_p: f64, lambda_g: f64) -> f64 {
        self.pixel + self.lesion_focus + self.feature + lambda_p * self.perceptual + lambda_g * self.adversarial
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.pixel += other.pixel;
        self.lesion_focus += other.lesion_focus;
        self.feature += other.feature;
        self.perceptual += other.perceptual;
        self.adversarial += other.adversarial;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            pixel: self.pixel * s,
            lesion_focus: self.lesion_focus * s,
            feature: self.feature * s,
            perceptual: self.perceptual * s,
            adversarial: self.adversarial * s,
            total: self.total * s,
        }
    }
}

/// Differentiable loss terms, each a rank-0 tensor.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub pixel: Tensor,
    pub lesion_focus: Tensor,
    pub feature: Tensor,
    pub perceptual: Tensor,
    pub adversarial: Tensor,
    pub total: Tensor,
}

/// Everything the objective looks at for one batch.
///
/// `real_grids[k]` / `recon_grids[k]` are the per-scale quantised residual
/// maps of the input and of the reconstruction, `(N, d, h_k, w_k)`;
/// `masks[k]` is the matching lesion mask `(N, 1, h_k, w_k)`. Leave the grid
/// lists empty to drop the lesion-focus term.
pub struct LossInputs<'a> {
    pub image: &'a Tensor,
    pub recon: &'a Tensor,
    pub f: &'a Tensor,
    pub f_hat: &'a Tensor,
    pub real_grids: &'a [Tensor],
    pub recon_grids: &'a [Tensor],
    pub masks: &'a [Tensor],
}

/// Optional perceptual and adversarial heads. A missing head contributes an
/// exact zero.
#[derive(Default)]
pub struct LossHeads<'a> {
    pub perceptual: Option<&'a FrozenConvStack>,
    /// Discriminator logits for the reconstruction.
    pub fake_logits: Option<&'a Tensor>,
}

/// Background consistency: mean over all elements and scales of
/// `((1 - M_k) * (R_k - R̂_k))^2`, summed over scales.
pub fn lesion_focus_term(real: &[Tensor], recon: &[Tensor], masks: &[Tensor]) -> Result<Tensor> {
    if real.len() != recon.len() || real.len() != masks.len() {
        return Err(shape_err!(
            "lesion-focus term got {} real, {} reconstructed and {} mask grids",
            real.len(),
            recon.len(),
            masks.len()
        ));
    }
    let mut acc: Option<Tensor> = None;
    for ((r, rh), m) in real.iter().zip(recon).zip(masks) {
        if r.dims() != rh.dims() {
            return Err(shape_err!("residual grids differ: {:?} vs {:?}", r.dims(), rh.dims()));
        }
        let bg = m.affine(-1.0, 1.0)?;
        let term = (r - rh)?.broadcast_mul(&bg)?.sqr()?.mean_all()?;
        acc = Some(match acc {
            None => term,
            Some(a) => (a + term)?,
        });
    }
    match acc {
        Some(t) => Ok(t),
        None => Err(Error::Invalid("lesion-focus term needs at least one scale".into())),
    }
}

pub fn perceptual_term(net: &FrozenConvStack, image: &Tensor, recon: &Tensor) -> Result<Tensor> {
    let a = net.features(image)?;
    let b = net.features(recon)?;
    let mut acc = Tensor::zeros((), image.dtype(), image.device())?;
    for (fa, fb) in a.iter().zip(&b) {
        acc = (acc + (fa - fb)?.sqr()?.mean_all()?)?;
    }
    Ok(acc)
}

/// Generator side of the hinge objective.
pub fn generator_hinge(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(fake_logits.mean_all()?.neg()?)
}

/// Discriminator side of the hinge objective.
pub fn discriminator_hinge(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real = real_logits.affine(-1.0, 1.0)?.relu()?.mean_all()?;
    let fake = fake_logits.affine(1.0, 1.0)?.relu()?.mean_all()?;
    Ok((real + fake)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Full tokenizer objective. Fails with [`Error::NonFinite`] naming the first
/// term that is NaN or infinite.
pub fn vqvae_loss(
    inputs: &LossInputs<'_>,
    heads: &LossHeads<'_>,
    lambda_p: f64,
    lambda_g: f64,
) -> Result<(LossTerms, LossBreakdown)> {
    if inputs.image.dims() != inputs.recon.dims() {
        return Err(shape_err!(
            "image {:?} and reconstruction {:?} differ in shape",
            inputs.image.dims(),
            inputs.recon.dims()
        ));
    }
    if inputs.f.dims() != inputs.f_hat.dims() {
        return Err(shape_err!("latent {:?} and f_hat {:?} differ", inputs.f.dims(), inputs.f_hat.dims()));
    }
    let zero = Tensor::zeros((), inputs.image.dtype(), inputs.image.device())?;
    let pixel = (inputs.image - inputs.recon)?.sqr()?.mean_all()?;
    let lesion_focus = if inputs.real_grids.is_empty() {
        zero.clone()
    } else {
        lesion_focus_term(inputs.real_grids, inputs.recon_grids, inputs.masks)?
    };
    let feature = (inputs.f - inputs.f_hat)?.sqr()?.mean_all()?;
    let perceptual = match heads.perceptual {
        Some(net) => perceptual_term(net, inputs.image, inputs.recon)?,
        None => zero.clone(),
    };
    let adversarial = match heads.fake_logits {
        Some(l) => generator_hinge(l)?,
        None => zero.clone(),
    };

    let mut b = LossBreakdown {
        pixel: scalar(&pixel)?,
        lesion_focus: scalar(&lesion_focus)?,
        feature: scalar(&feature)?,
        perceptual: scalar(&perceptual)?,
        adversarial: scalar(&adversarial)?,
        total: 0.0,
    };
    for (name, v) in [
        ("pixel", b.pixel),
        ("lesion_focus", b.lesion_focus),
        ("feature", b.feature),
        ("perceptual", b.perceptual),
        ("adversarial", b.adversarial),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    let total = ((((&pixel + &lesion_focus)? + &feature)? + perceptual.affine(lambda_p, 0.0)?)?
        + adversarial.affine(lambda_g, 0.0)?)?;
    b.total = scalar(&total)?;
    Ok((
        LossTerms {
            pixel,
            lesion_focus,
            feature,
            perceptual,
            adversarial,
            total,
        },
        b,
    ))
}
