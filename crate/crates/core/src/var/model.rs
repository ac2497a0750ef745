use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::{sample_token, SamplerConfig};
use super::sequence::scale_offsets;
use crate::conditioning::{
    build_condition_batch, ClassEmbeddingTable, ConditionEmbedding, ConditionTokens, EmbeddingSource,
    MeasurementEncoder,
};
use crate::error::{invalid, shape_err, Result};
use crate::measurements::NUM_MEASUREMENTS;
use crate::nn::{LayerNorm, ParamStore};
use crate::tokenizer::{validate_scales, Codebook, MultiScaleQuantizer, Scale, TokenPyramid};

/// How the measurement slot of the condition prefix is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// Slot is a zero vector: class-only conditioning.
    ClassOnly,
    /// Slot is the encoding of one constant measurement vector (the
    /// normalised training mean, i.e. zero), whatever the image.
    Fixed,
    /// Slot encodes the supplied measurement vector.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarConfig {
    pub depth: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    /// Must equal the tokenizer vocabulary.
    pub vocab: usize,
    pub code_dim: usize,
    pub scales: Vec<Scale>,
    pub num_classes: usize,
    pub conditioning: ConditionMode,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            heads: 4,
            width: 256,
            mlp_ratio: 4,
            vocab: 1024,
            code_dim: 32,
            scales: vec![(1, 1), (2, 2), (3, 3), (4, 4), (6, 6), (8, 8), (16, 16)],
            num_classes: 7,
            conditioning: ConditionMode::Measured,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            epochs: 200,
            batch_size: 35,
            seed: 0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl VarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(invalid!("width {} is not divisible by heads {}", self.width, self.heads));
        }
        if self.depth == 0 || self.vocab == 0 || self.num_classes == 0 || self.batch_size == 0 {
            return Err(invalid!("depth, vocab, num_classes and batch_size must be positive"));
        }
        let latent = *self.scales.last().ok_or_else(|| invalid!("scale list is empty"))?;
        validate_scales(&self.scales, latent)?;
        self.sampler.validate()
    }

    pub fn num_tokens(&self) -> usize {
        self.scales.iter().map(|(h, w)| h * w).sum()
    }
}

struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    fn new(store: &mut ParamStore, i: usize, cfg: &VarConfig) -> Result<Self> {
        let w = cfg.width;
        let p = format!("blocks.{i}");
        Ok(Self {
            ln1: store.layer_norm(&format!("{p}.ln1"), w)?,
            qkv: store.linear(&format!("{p}.qkv"), w, 3 * w)?,
            proj: store.linear(&format!("{p}.proj"), w, w)?,
            ln2: store.layer_norm(&format!("{p}.ln2"), w)?,
            fc1: store.linear(&format!("{p}.fc1"), w, cfg.mlp_ratio * w)?,
            fc2: store.linear(&format!("{p}.fc2"), cfg.mlp_ratio * w, w)?,
            heads: cfg.heads,
        })
    }

    fn attention(&self, x: &Tensor, allowed: &Tensor) -> Result<Tensor> {
        let (n, l, w) = x.dims3()?;
        let dh = w / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((n, l, 3, self.heads, dh))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let neg = Tensor::new(-1e9f32, x.device())?
            .to_dtype(x.dtype())?
            .broadcast_as(scores.shape())?;
        let scores = allowed.broadcast_as(scores.shape())?.where_cond(&scores, &neg)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((n, l, w))?;
        Ok(self.proj.forward(&out)?)
    }

    fn forward(&self, x: &Tensor, allowed: &Tensor) -> Result<Tensor> {
        let x = (x + self.attention(&self.ln1.forward(x)?, allowed)?)?;
        let h = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu()?)?;
        Ok((x + h)?)
    }
}

/// Block-causal next-scale transformer.
///
/// Sequence layout: `[S_c, F_q]`, then one block of `h_k * w_k` positions per
/// scale. Block `k`'s input is the projection of the accumulated code map of
/// scales `< k` resampled to `(h_k, w_k)` (a learned start vector for the
/// first scale), plus level and position embeddings. Positions attend to
/// their own block and all earlier blocks, and block `k` emits the logits of
/// scale `k`.
pub struct VarModel {
    config: VarConfig,
    store: ParamStore,
    classes: ClassEmbeddingTable,
    measure: MeasurementEncoder,
    code_proj: Linear,
    start: Tensor,
    prefix_pos: Tensor,
    level_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
    codebook: Codebook,
    quantizer: MultiScaleQuantizer,
    /// Block id of every sequence position (prefix is block 0).
    block_ids: Vec<u32>,
}

impl VarModel {
    /// `codebook` is the (frozen) tokenizer codebook used to embed input
    /// scales.
    pub fn new(config: &VarConfig, codebook: &Codebook, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        if codebook.vocab() != config.vocab || codebook.dim() != config.code_dim {
            return Err(shape_err!(
                "codebook is {}x{}, config expects {}x{}",
                codebook.vocab(),
                codebook.dim(),
                config.vocab,
                config.code_dim
            ));
        }
        let w = config.width;
        let mut store = ParamStore::new(config.seed, dtype, device);
        let classes = ClassEmbeddingTable::new(&mut store, "class_emb", config.num_classes, w)?;
        let measure = MeasurementEncoder::new(&mut store, "measure", NUM_MEASUREMENTS, w)?;
        let code_proj = store.linear("code_proj", config.code_dim, w)?;
        let start = store.normal("start", &[1, 1, w], 0.02)?;
        let prefix_pos = store.normal("prefix_pos", &[2, w], 0.02)?;
        let level_emb = store.normal("level_emb", &[config.scales.len(), w], 0.02)?;
        let pos_emb = store.normal("pos_emb", &[config.num_tokens(), w], 0.02)?;
        let blocks = (0..config.depth)
            .map(|i| Block::new(&mut store, i, config))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = store.layer_norm("ln_f", w)?;
        let head = store.linear("head", w, config.vocab)?;
        let latent = *config.scales.last().expect("validated");
        let quantizer = MultiScaleQuantizer::new(&config.scales, latent, dtype, device)?;
        let mut block_ids = vec![0u32; 2];
        for (k, &(h, ww)) in config.scales.iter().enumerate() {
            block_ids.extend(std::iter::repeat_n(k as u32 + 1, h * ww));
        }
        let codebook = Codebook::new(codebook.tensor().detach().to_dtype(dtype)?)?;
        Ok(Self {
            config: config.clone(),
            store,
            classes,
            measure,
            code_proj,
            start,
            prefix_pos,
            level_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
            codebook,
            quantizer,
            block_ids,
        })
    }

    pub fn load(config: &VarConfig, codebook: &Codebook, weights: &Path, dtype: DType, device: &Device) -> Result<Self> {
        let mut m = Self::new(config, codebook, dtype, device)?;
        m.store.load(weights)?;
        Ok(m)
    }

    pub fn save(&self, weights: &Path) -> Result<()> {
        self.store.save(weights)
    }

    pub fn config(&self) -> &VarConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn class_table(&self) -> &ClassEmbeddingTable {
        &self.classes
    }

    pub fn measurement_encoder(&self) -> &MeasurementEncoder {
        &self.measure
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    /// Encoded measurement slot for one normalised vector under the
    /// configured conditioning mode.
    pub fn measurement_embedding(&self, v: &[f64], source: EmbeddingSource) -> Result<ConditionEmbedding> {
        let f = self.measurement_slots(&[v.to_vec()])?;
        let source = match self.config.conditioning {
            ConditionMode::Measured => source,
            _ => EmbeddingSource::Fixed,
        };
        Ok(ConditionEmbedding {
            f_q: f.squeeze(0)?,
            source,
        })
    }

    fn measurement_slots(&self, vs: &[Vec<f64>]) -> Result<Tensor> {
        let n = vs.len();
        let dtype = self.store.dtype();
        match self.config.conditioning {
            ConditionMode::ClassOnly => Ok(Tensor::zeros((n, self.config.width), dtype, self.device())?),
            ConditionMode::Fixed => {
                let z = Tensor::zeros((n, NUM_MEASUREMENTS), dtype, self.device())?;
                self.measure.forward(&z)
            }
            ConditionMode::Measured => {
                let mut flat = Vec::with_capacity(n * NUM_MEASUREMENTS);
                for v in vs {
                    if v.len() != NUM_MEASUREMENTS {
                        return Err(shape_err!("measurement vector has {} dims", v.len()));
                    }
                    flat.extend_from_slice(v);
                }
                let t = Tensor::from_vec(flat, (n, NUM_MEASUREMENTS), self.device())?.to_dtype(dtype)?;
                self.measure.forward(&t)
            }
        }
    }

    /// Condition prefixes `(N, 2, width)` for labels and normalised
    /// measurement vectors (ignored unless the mode is `Measured`).
    pub fn condition_tokens(&self, classes: &[usize], measurements: &[Vec<f64>]) -> Result<ConditionTokens> {
        if classes.len() != measurements.len() {
            return Err(shape_err!(
                "{} labels but {} measurement vectors",
                classes.len(),
                measurements.len()
            ));
        }
        let f_q = self.measurement_slots(measurements)?;
        build_condition_batch(&self.classes, classes, &f_q)
    }

    /// Code-vector grids `(N, d, h_k, w_k)` for a batch of pyramids.
    pub fn embed_pyramids(&self, pyramids: &[&TokenPyramid]) -> Result<Vec<Tensor>> {
        let n = pyramids.len();
        let mut out = Vec::with_capacity(self.config.scales.len());
        for (k, &scale) in self.config.scales.iter().enumerate() {
            let mut flat = Vec::with_capacity(n * scale.0 * scale.1);
            for p in pyramids {
                if p.scales != self.config.scales {
                    return Err(shape_err!(
                        "pyramid scales {:?} differ from model scales {:?}",
                        p.scales,
                        self.config.scales
                    ));
                }
                p.check_vocab(self.config.vocab)?;
                flat.extend_from_slice(&p.grids[k]);
            }
            let idx = Tensor::from_vec(flat, (n, scale.0 * scale.1), self.device())?;
            out.push(MultiScaleQuantizer::embed(&idx, &self.codebook, scale)?);
        }
        Ok(out)
    }

    /// Transformer inputs for scales `0..=upto`, `(N, Σ h_k w_k, width)`.
    fn scale_inputs(&self, n: usize, code_grids: &[Tensor], upto: usize) -> Result<Tensor> {
        let w = self.config.width;
        let (h0, w0) = self.config.scales[0];
        let mut parts = vec![self.start.broadcast_as((n, h0 * w0, w))?.contiguous()?];
        let mut acc: Option<Tensor> = None;
        for k in 1..=upto {
            let up = self.quantizer.resampler(k - 1).up(&code_grids[k - 1])?;
            let a = match acc {
                None => up,
                Some(a) => (a + up)?,
            };
            let down = self.quantizer.resampler(k).down(&a)?;
            let (_, d, hk, wk) = down.dims4()?;
            let rows = down.permute((0, 2, 3, 1))?.reshape((n, hk * wk, d))?;
            parts.push(self.code_proj.forward(&rows)?);
            acc = Some(a);
        }
        let x = Tensor::cat(&parts, 1)?;
        let off = scale_offsets(&self.config.scales);
        let len = off[upto + 1];
        let levels: Vec<u32> = self.block_ids[2..2 + len].iter().map(|b| b - 1).collect();
        let lvl = self
            .level_emb
            .index_select(&Tensor::new(levels.as_slice(), self.device())?, 0)?;
        let pos = (self.pos_emb.narrow(0, 0, len)? + lvl)?;
        Ok(x.broadcast_add(&pos)?)
    }

    fn allowed_mask(&self, len: usize) -> Result<Tensor> {
        let ids = &self.block_ids[..len];
        let mut m = Vec::with_capacity(len * len);
        for &q in ids {
            for &k in ids {
                m.push(u8::from(k <= q));
            }
        }
        Ok(Tensor::from_vec(m, (len, len), self.device())?)
    }

    fn run(&self, cond: &Tensor, code_grids: &[Tensor], upto: usize) -> Result<Tensor> {
        let (n, two, w) = cond.dims3()?;
        if two != 2 || w != self.config.width {
            return Err(shape_err!("condition tokens are {two}x{w}, expected 2x{}", self.config.width));
        }
        if code_grids.len() < upto {
            return Err(shape_err!("{} code grids supplied, {} needed", code_grids.len(), upto));
        }
        let tokens = self.scale_inputs(n, code_grids, upto)?;
        let prefix = cond.broadcast_add(&self.prefix_pos)?;
        let mut x = Tensor::cat(&[&prefix, &tokens], 1)?;
        let len = x.dim(1)?;
        let allowed = self.allowed_mask(len)?;
        for b in &self.blocks {
            x = b.forward(&x, &allowed)?;
        }
        let x = self.ln_f.forward(&x.narrow(1, 2, len - 2)?)?;
        Ok(self.head.forward(&x)?)
    }

    /// Logits `(N, Σ h_k w_k, V)` given condition prefixes and the code
    /// grids of every scale. Only grids `0..K-1` are read.
    pub fn forward_embedded(&self, cond: &ConditionTokens, code_grids: &[Tensor]) -> Result<Tensor> {
        let cond = batch_cond(cond)?;
        self.run(&cond, code_grids, self.config.scales.len() - 1)
    }

    /// Teacher-forced logits for ground-truth pyramids.
    pub fn forward_train(&self, cond: &ConditionTokens, pyramids: &[&TokenPyramid]) -> Result<Tensor> {
        let grids = self.embed_pyramids(pyramids)?;
        self.forward_embedded(cond, &grids)
    }

    /// Sample one pyramid per condition prefix. Row `i` uses its own ChaCha
    /// stream seeded with `seeds[i]`.
    pub fn generate(&self, cond: &ConditionTokens, sampler: &SamplerConfig, seeds: &[u64]) -> Result<Vec<TokenPyramid>> {
        sampler.validate()?;
        let cond = batch_cond(cond)?;
        let n = cond.dim(0)?;
        if seeds.len() != n {
            return Err(shape_err!("{n} condition prefixes but {} seeds", seeds.len()));
        }
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let off = scale_offsets(&self.config.scales);
        let mut grids: Vec<Vec<Vec<u32>>> = vec![Vec::new(); n];
        let mut code_grids = Vec::new();
        for (k, &(h, w)) in self.config.scales.iter().enumerate() {
            let logits = self.run(&cond, &code_grids, k)?;
            let cells = h * w;
            let rows: Vec<Vec<Vec<f32>>> = logits
                .narrow(1, off[k], cells)?
                .to_dtype(DType::F32)?
                .to_vec3()?;
            let mut flat = Vec::with_capacity(n * cells);
            for (i, sample_rows) in rows.iter().enumerate() {
                let toks: Vec<u32> = sample_rows
                    .iter()
                    .map(|r| sample_token(r, sampler, &mut rngs[i]))
                    .collect();
                flat.extend_from_slice(&toks);
                grids[i].push(toks);
            }
            let idx = Tensor::from_vec(flat, (n, cells), self.device())?;
            code_grids.push(MultiScaleQuantizer::embed(&idx, &self.codebook, (h, w))?);
        }
        grids
            .into_iter()
            .map(|g| TokenPyramid::new(self.config.scales.clone(), g))
            .collect()
    }
}

fn batch_cond(cond: &ConditionTokens) -> Result<Tensor> {
    match cond.0.rank() {
        2 => Ok(cond.0.unsqueeze(0)?),
        3 => Ok(cond.0.clone()),
        r => Err(shape_err!("condition tokens have rank {r}")),
    }
}

/// Mean cross-entropy of `(N, T, V)` logits against `(N, T)` targets.
pub fn next_scale_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (n, t, v) = logits.dims3()?;
    if targets.dims() != [n, t] {
        return Err(shape_err!("targets {:?} do not match logits {:?}", targets.dims(), logits.dims()));
    }
    let targets = targets.to_dtype(DType::U32)?;
    let max = targets.flatten_all()?.max(0)?.to_scalar::<u32>()?;
    if max as usize >= v {
        return Err(invalid!("target index {max} is outside the vocabulary of {v}"));
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&targets.unsqueeze(2)?.contiguous()?, 2)?;
    Ok(picked.mean_all()?.neg()?)
}

/// Flattened targets `(N, Σ h_k w_k)` for a batch of pyramids.
pub fn pyramid_targets(pyramids: &[&TokenPyramid], device: &Device) -> Result<Tensor> {
    let n = pyramids.len();
    let flat: Vec<u32> = pyramids.iter().flat_map(|p| p.grids.concat()).collect();
    let t = flat.len() / n.max(1);
    Ok(Tensor::from_vec(flat, (n, t), device)?)
}
