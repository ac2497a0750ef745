use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{AdamW, Conv2d, Linear, Optimizer, ParamsAdamW};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::nn::{images_to_tensor, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            width: 16,
            epochs: 10,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// How training batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Every sample once per epoch, shuffled.
    Shuffle,
    /// Samples drawn with replacement with probability inversely
    /// proportional to their class frequency.
    ClassWeighted,
}

/// Small conv classifier: three stride-2 convs, global average pool, linear.
pub struct ConvClassifier {
    store: ParamStore,
    convs: Vec<Conv2d>,
    fc: Linear,
    num_classes: usize,
}

impl ConvClassifier {
    pub fn new(num_classes: usize, width: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed, DType::F32, &Device::Cpu);
        let convs = vec![
            store.conv2d("c1", 3, width, 3, 2, 1)?,
            store.conv2d("c2", width, 2 * width, 3, 2, 1)?,
            store.conv2d("c3", 2 * width, 2 * width, 3, 2, 1)?,
        ];
        let fc = store.linear("fc", 2 * width, num_classes)?;
        Ok(Self {
            store,
            convs,
            fc,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.affine(2.0, -1.0)?;
        for c in &self.convs {
            h = c.forward(&h)?.relu()?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(self.fc.forward(&pooled)?)
    }

    pub fn predict_proba(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let x = images_to_tensor(chunk, DType::F32, &Device::Cpu)?;
            let p = candle_nn::ops::softmax(&self.forward(&x)?, D::Minus1)?.to_dtype(DType::F64)?;
            for mut row in p.to_vec2::<f64>()? {
                // Renormalise in double precision.
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
                out.push(row);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(images)?
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

pub fn train_classifier(
    images: &[&Image],
    labels: &[usize],
    num_classes: usize,
    cfg: &ClassifierConfig,
    sampling: Sampling,
) -> Result<ConvClassifier> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(invalid!("classifier needs matching, non-empty images and labels"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(invalid!("label {l} out of range for {num_classes} classes"));
    }
    let model = ConvClassifier::new(num_classes, cfg.width, cfg.seed)?;
    let mut opt = AdamW::new(
        model.store.vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let all = images_to_tensor(images, DType::F32, &Device::Cpu)?;
    let targets = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect::<Vec<_>>(), labels.len(), &Device::Cpu)?;
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let weights: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
    let weighted = WeightedIndex::new(&weights).map_err(|e| invalid!("class weights: {e}"))?;
    let n = images.len();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xc1a5_0000 + epoch as u64));
        let order: Vec<u32> = match sampling {
            Sampling::Shuffle => {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.shuffle(&mut rng);
                o
            }
            Sampling::ClassWeighted => (0..n).map(|_| weighted.sample(&mut rng) as u32).collect(),
        };
        for chunk in order.chunks(cfg.batch_size) {
            let idx = Tensor::new(chunk, &Device::Cpu)?;
            let x = all.index_select(&idx, 0)?;
            let y = targets.index_select(&idx, 0)?;
            let loss = candle_nn::loss::cross_entropy(&model.forward(&x)?, &y)?;
            opt.backward_step(&loss)?;
        }
    }
    Ok(model)
}
