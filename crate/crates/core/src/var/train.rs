use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{next_scale_loss, pyramid_targets, VarConfig, VarModel};
use crate::conditioning::MeasurementCodebook;
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::measurements::{extract_measurements, MeasurementNormalizer, MeasurementVector};
use crate::tokenizer::{Codebook, TokenPyramid, VqVae};

pub const VAR_WEIGHTS_FILE: &str = "var.safetensors";
pub const VAR_SIDECAR_FILE: &str = "var.json";

/// Tokenised training set for the generator.
#[derive(Debug, Clone)]
pub struct VarTrainingSet {
    pub pyramids: Vec<TokenPyramid>,
    pub labels: Vec<usize>,
    pub raw_measurements: Vec<MeasurementVector>,
    pub measurements: Vec<Vec<f64>>,
}

impl VarTrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Tokenise samples with a trained tokenizer and attach their normalised
/// measurements.
pub fn prepare_var_data(
    tokenizer: &VqVae,
    samples: &[ImageSample],
    normalizer: &MeasurementNormalizer,
) -> Result<VarTrainingSet> {
    let mut pyramids = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let imgs: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        pyramids.extend(tokenizer.tokenize(&imgs)?);
    }
    let raw: Vec<MeasurementVector> = samples
        .iter()
        .map(|s| extract_measurements(&s.image, &s.mask))
        .collect::<Result<_>>()?;
    let measurements = raw.iter().map(|v| normalizer.normalize(v).as_slice().to_vec()).collect();
    Ok(VarTrainingSet {
        pyramids,
        labels: samples.iter().map(|s| s.label).collect(),
        raw_measurements: raw,
        measurements,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarTrainingReport {
    pub epochs: Vec<VarEpochRecord>,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: VarConfig,
    report: VarTrainingReport,
}

pub fn save_var(dir: &Path, model: &VarModel, report: &VarTrainingReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = dir.join(VAR_WEIGHTS_FILE);
    model.save(&weights)?;
    let side = dir.join(VAR_SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&Sidecar {
        config: model.config().clone(),
        report: report.clone(),
    })
    .map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(weights)
}

pub fn load_var(dir: &Path, codebook: &Codebook, device: &Device) -> Result<(VarModel, VarTrainingReport)> {
    let side = dir.join(VAR_SIDECAR_FILE);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let model = VarModel::load(&sidecar.config, codebook, &dir.join(VAR_WEIGHTS_FILE), DType::F32, device)?;
    Ok((model, sidecar.report))
}

/// Teacher-forced next-scale training. When `measurement_codebook` is given,
/// every training sample's raw measurement vector is recorded in it during
/// the first epoch.
pub fn train_var(
    config: &VarConfig,
    codebook: &Codebook,
    data: &VarTrainingSet,
    mut measurement_codebook: Option<&mut MeasurementCodebook>,
    checkpoint_dir: Option<&Path>,
) -> Result<(VarModel, VarTrainingReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no tokenised training samples".into()));
    }
    let dev = Device::Cpu;
    let model = VarModel::new(config, codebook, DType::F32, &dev)?;
    let mut report = VarTrainingReport::default();
    let mut last_ckpt = match checkpoint_dir {
        Some(dir) => Some(save_var(dir, &model, &report)?),
        None => None,
    };
    let mut opt = AdamW::new(
        model.store().vars(),
        ParamsAdamW {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
    )?;
    let n = data.len();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0xa11c_0000 + epoch as u64));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if epoch == 0 {
                if let Some(cb) = measurement_codebook.as_deref_mut() {
                    for &i in chunk {
                        cb.update(data.labels[i], data.raw_measurements[i].as_slice())?;
                    }
                }
            }
            let pyr: Vec<&TokenPyramid> = chunk.iter().map(|&i| &data.pyramids[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let meas: Vec<Vec<f64>> = chunk.iter().map(|&i| data.measurements[i].clone()).collect();
            let cond = model.condition_tokens(&labels, &meas)?;
            let logits = model.forward_train(&cond, &pyr)?;
            let targets = pyramid_targets(&pyr, &dev)?;
            let loss = next_scale_loss(&logits, &targets)?;
            let v = loss.to_scalar::<f32>()? as f64;
            if !v.is_finite() {
                log::error!("generator loss is not finite at epoch {}", epoch + 1);
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    checkpoint: last_ckpt,
                });
            }
            opt.backward_step(&loss)?;
            sum += v;
            batches += 1;
            report.steps += 1;
        }
        let loss = sum / batches as f64;
        log::info!("generator epoch {}/{}: cross-entropy {loss:.5}", epoch + 1, config.epochs);
        report.epochs.push(VarEpochRecord { epoch: epoch + 1, loss });
        if let Some(dir) = checkpoint_dir {
            last_ckpt = Some(save_var(dir, &model, &report)?);
        }
    }
    Ok((model, report))
}

/// Mean cross-entropy of a model over a tokenised set (no gradient step).
pub fn evaluate_var_loss(model: &VarModel, data: &VarTrainingSet) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(32) {
        let pyr: Vec<&TokenPyramid> = chunk.iter().map(|&i| &data.pyramids[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let meas: Vec<Vec<f64>> = chunk.iter().map(|&i| data.measurements[i].clone()).collect();
        let cond = model.condition_tokens(&labels, &meas)?;
        let logits = model.forward_train(&cond, &pyr)?;
        let targets = pyramid_targets(&pyr, model.store().device())?;
        let l: Tensor = next_scale_loss(&logits, &targets)?;
        total += l.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}
