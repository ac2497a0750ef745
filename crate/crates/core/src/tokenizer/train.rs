use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{discriminator_hinge, vqvae_loss, LossBreakdown, LossHeads, LossInputs};
use super::model::{VqVae, VqVaeConfig};
use super::pyramid::{build_mask_pyramid, MaskPyramid};
use crate::data::{DatasetManifest, ImageSample};
use crate::error::{Error, Result};
use crate::nn::{images_to_tensor, FrozenConvStack};

pub const WEIGHTS_FILE: &str = "tokenizer.safetensors";
pub const SIDECAR_FILE: &str = "tokenizer.json";

/// Offset between the model seed and the frozen perceptual stack's seed.
const PERCEPTUAL_SEED_OFFSET: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub commitment: f64,
    pub discriminator: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Distinct codebook entries used when tokenising the training set
    /// after the last epoch.
    pub codes_used: usize,
}

impl TrainingReport {
    pub fn reconstruction_series(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.pixel).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: VqVaeConfig,
    report: TrainingReport,
}

/// Write weights and the JSON sidecar (config and loss history) into `dir`.
pub fn save_tokenizer(dir: &Path, model: &VqVae, report: &TrainingReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = dir.join(WEIGHTS_FILE);
    model.save(&weights)?;
    let side = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&Sidecar {
        config: model.config().clone(),
        report: report.clone(),
    })
    .map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(weights)
}

/// Load a tokenizer saved by [`save_tokenizer`].
pub fn load_tokenizer(dir: &Path, device: &Device) -> Result<(VqVae, TrainingReport)> {
    let side = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let model = VqVae::load(&sidecar.config, &dir.join(WEIGHTS_FILE), DType::F32, device)?;
    Ok((model, sidecar.report))
}

/// Train from a dataset manifest; see [`train_vqvae_on`].
pub fn train_vqvae(
    manifest: &DatasetManifest,
    config: &VqVaeConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(VqVae, TrainingReport)> {
    let samples = manifest.load_all()?;
    train_vqvae_on(&samples, config, checkpoint_dir)
}

struct Batches {
    images: Tensor,
    masks: Vec<Tensor>,
}

fn stack_dataset(samples: &[ImageSample], model: &VqVae) -> Result<Batches> {
    let dev = model.store().device().clone();
    let dtype = model.store().dtype();
    let imgs: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let images = images_to_tensor(&imgs, dtype, &dev)?;
    let pyramids: Vec<MaskPyramid> = samples
        .iter()
        .map(|s| build_mask_pyramid(&s.mask, model.quantizer().scales()))
        .collect::<Result<_>>()?;
    let refs: Vec<_> = pyramids.iter().collect();
    let masks = MaskPyramid::batch_tensors(&refs, dtype, &dev)?;
    Ok(Batches { images, masks })
}

/// Train the tokenizer. With a checkpoint directory the weights are written
/// after every finite epoch (and once at initialisation), so a divergence
/// leaves the last good state on disk.
pub fn train_vqvae_on(
    samples: &[ImageSample],
    config: &VqVaeConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(VqVae, TrainingReport)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training images".into()));
    }
    let dev = Device::Cpu;
    let model = VqVae::new(config, DType::F32, &dev)?;
    let mut report = TrainingReport::default();
    let mut last_ckpt = match checkpoint_dir {
        Some(dir) => Some(save_tokenizer(dir, &model, &report)?),
        None => None,
    };
    if config.epochs == 0 {
        return Ok((model, report));
    }

    let data = stack_dataset(samples, &model)?;
    let perceptual = if config.lambda_p > 0.0 {
        Some(FrozenConvStack::new(
            config.seed.wrapping_add(PERCEPTUAL_SEED_OFFSET),
            3,
            &config.perceptual_widths,
            DType::F32,
            &dev,
        )?)
    } else {
        None
    };
    let params = |lr: f64| ParamsAdamW {
        lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: 1e-8,
        weight_decay: config.weight_decay,
    };
    let mut opt_g = AdamW::new(model.generator_vars(), params(config.lr))?;
    let mut opt_d = AdamW::new(model.discriminator_vars(), params(config.lr))?;
    let quant = model.quantizer();
    let cb = model.codebook();
    let n = samples.len();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x5eed_0000 + epoch as u64));
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        let adversarial_on = config.lambda_g > 0.0 && epoch >= config.disc_start_epoch;

        let mut sum = LossBreakdown::default();
        let mut commit_sum = 0.0;
        let mut disc_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let idx = Tensor::new(chunk, &dev)?;
            let x = data.images.index_select(&idx, 0)?;
            let f = model.encode_batch(&x)?;
            let c = quant.cascade(&f, &cb, false)?;
            let f_st = (&f + (&c.f_hat - &f)?.detach())?;
            let x_hat = model.decode_batch(&f_st)?;

            let (real_grids, recon_grids, masks) = if config.lesion_focus {
                let f2 = model.encode_batch(&x_hat)?;
                let c2 = quant.cascade(&f2, &cb, true)?;
                let real: Vec<Tensor> = c.quantized.iter().map(|q| q.detach()).collect();
                let recon = c2
                    .residual_inputs
                    .iter()
                    .zip(&c2.quantized)
                    .map(|(z, q)| Ok((z + (q - z)?.detach())?))
                    .collect::<Result<Vec<_>>>()?;
                let m = data
                    .masks
                    .iter()
                    .map(|t| Ok(t.index_select(&idx, 0)?))
                    .collect::<Result<Vec<_>>>()?;
                (real, recon, m)
            } else {
                (Vec::new(), Vec::new(), Vec::new())
            };

            let fake_logits = if adversarial_on {
                Some(model.discriminator.forward(&x_hat)?)
            } else {
                None
            };
            let f_sg = f.detach();
            let inputs = LossInputs {
                image: &x,
                recon: &x_hat,
                f: &f_sg,
                f_hat: &c.f_hat,
                real_grids: &real_grids,
                recon_grids: &recon_grids,
                masks: &masks,
            };
            let heads = LossHeads {
                perceptual: perceptual.as_ref(),
                fake_logits: fake_logits.as_ref(),
            };
            let (terms, b) = match vqvae_loss(&inputs, &heads, config.lambda_p, config.lambda_g) {
                Ok(v) => v,
                Err(Error::NonFinite(term)) => {
                    log::error!("tokenizer loss term `{term}` is not finite at epoch {}", epoch + 1);
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        checkpoint: last_ckpt,
                    });
                }
                Err(e) => return Err(e),
            };
            let commitment = (&f - c.f_hat.detach())?.sqr()?.mean_all()?;
            let objective = (&terms.total + commitment.affine(config.commitment_beta, 0.0)?)?;
            opt_g.backward_step(&objective)?;

            if adversarial_on {
                let real = model.discriminator.forward(&x)?;
                let fake = model.discriminator.forward(&x_hat.detach())?;
                let d_loss = discriminator_hinge(&real, &fake)?;
                disc_sum += d_loss.to_scalar::<f32>()? as f64;
                opt_d.backward_step(&d_loss)?;
            }

            sum.accumulate(&b);
            commit_sum += commitment.to_scalar::<f32>()? as f64;
            batches += 1;
            report.steps += 1;
        }
        let inv = 1.0 / batches as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: sum.scaled(inv),
            commitment: commit_sum * inv,
            discriminator: adversarial_on.then_some(disc_sum * inv),
        };
        log::info!(
            "tokenizer epoch {}/{}: total {:.5} pixel {:.5} lf {:.5} feature {:.5}",
            epoch + 1,
            config.epochs,
            record.loss.total,
            record.loss.pixel,
            record.loss.lesion_focus,
            record.loss.feature
        );
        report.epochs.push(record);
        if let Some(dir) = checkpoint_dir {
            last_ckpt = Some(save_tokenizer(dir, &model, &report)?);
        }
    }

    report.codes_used = codes_used(&model, &data.images)?;
    if let Some(dir) = checkpoint_dir {
        save_tokenizer(dir, &model, &report)?;
    }
    Ok((model, report))
}

fn codes_used(model: &VqVae, images: &Tensor) -> Result<usize> {
    let mut seen = vec![false; model.config().vocab_size];
    let n = images.dim(0)?;
    let cb = model.frozen_codebook();
    for start in (0..n).step_by(64) {
        let x = images.narrow(0, start, 64.min(n - start))?;
        let c = model.quantizer().cascade(&model.encode_batch(&x)?, &cb, false)?;
        for idx in &c.indices {
            for v in idx.flatten_all()?.to_vec1::<u32>()? {
                seen[v as usize] = true;
            }
        }
    }
    Ok(seen.iter().filter(|&&s| s).count())
}
