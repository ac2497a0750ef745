use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use super::pyramid::{validate_scales, Scale, TokenPyramid};
use super::quantizer::{Codebook, LatentGrid, MultiScaleQuantizer};
use crate::data::Image;
use crate::error::{invalid, shape_err, Result};
use crate::nn::{images_to_tensor, leaky_relu, tensor_to_images, ParamStore};

/// Tokenizer architecture, loss weights and optimiser settings. Optimiser
/// defaults are the full-scale recipe (AdamW, betas 0.9/0.95, weight decay
/// 0.05, lr 1e-3, batch 35, 200 epochs); desk runs override epochs and batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqVaeConfig {
    pub resolution: (usize, usize),
    pub base_channels: usize,
    /// Total encoder stride, a power of two.
    pub downsample: usize,
    pub code_dim: usize,
    pub vocab_size: usize,
    pub scales: Vec<Scale>,
    pub lambda_p: f64,
    pub lambda_g: f64,
    pub commitment_beta: f64,
    /// Include the background token-consistency term.
    pub lesion_focus: bool,
    /// First epoch (0-based) at which the discriminator trains and the
    /// adversarial term is applied.
    pub disc_start_epoch: usize,
    pub disc_channels: usize,
    pub perceptual_widths: Vec<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            resolution: (64, 64),
            base_channels: 32,
            downsample: 4,
            code_dim: 32,
            vocab_size: 1024,
            scales: vec![(1, 1), (2, 2), (3, 3), (4, 4), (6, 6), (8, 8), (16, 16)],
            lambda_p: 1.0,
            lambda_g: 0.1,
            commitment_beta: 0.25,
            lesion_focus: true,
            disc_start_epoch: 1,
            disc_channels: 16,
            perceptual_widths: vec![16, 32, 32],
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            epochs: 200,
            batch_size: 35,
            seed: 0,
        }
    }
}

impl VqVaeConfig {
    pub fn latent_size(&self) -> Scale {
        (
            self.resolution.0 / self.downsample.max(1),
            self.resolution.1 / self.downsample.max(1),
        )
    }

    fn num_downsamples(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.downsample.is_power_of_two() {
            return Err(invalid!("downsample {} is not a power of two", self.downsample));
        }
        let (h, w) = self.resolution;
        if h % self.downsample != 0 || w % self.downsample != 0 {
            return Err(invalid!(
                "resolution {:?} is not divisible by the encoder stride {}",
                self.resolution,
                self.downsample
            ));
        }
        if self.vocab_size == 0 || self.code_dim == 0 || self.base_channels == 0 {
            return Err(invalid!("vocab_size, code_dim and base_channels must be positive"));
        }
        if self.lambda_p < 0.0 || self.lambda_g < 0.0 || self.commitment_beta < 0.0 {
            return Err(invalid!("loss weights must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        validate_scales(&self.scales, self.latent_size())
    }

    fn channels_at(&self, level: usize) -> usize {
        self.base_channels * (1 << level.min(1))
    }
}

struct Encoder {
    conv_in: Conv2d,
    downs: Vec<Conv2d>,
    mid: Conv2d,
    conv_out: Conv2d,
}

impl Encoder {
    fn new(store: &mut ParamStore, cfg: &VqVaeConfig) -> Result<Self> {
        let c0 = cfg.channels_at(0);
        let conv_in = store.conv2d("enc.conv_in", 3, c0, 3, 1, 1)?;
        let downs = (0..cfg.num_downsamples())
            .map(|i| store.conv2d(&format!("enc.down{i}"), cfg.channels_at(i), cfg.channels_at(i + 1), 4, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let top = cfg.channels_at(cfg.num_downsamples());
        let mid = store.conv2d("enc.mid", top, top, 3, 1, 1)?;
        let conv_out = store.conv2d("enc.conv_out", top, cfg.code_dim, 1, 1, 0)?;
        Ok(Self {
            conv_in,
            downs,
            mid,
            conv_out,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.conv_in.forward(&x.affine(2.0, -1.0)?)?.silu()?;
        for d in &self.downs {
            h = d.forward(&h)?.silu()?;
        }
        let h = (self.mid.forward(&h)?.silu()? + h)?;
        Ok(self.conv_out.forward(&h)?)
    }
}

struct Decoder {
    conv_in: Conv2d,
    mid: Conv2d,
    ups: Vec<Conv2d>,
    conv_out: Conv2d,
}

impl Decoder {
    fn new(store: &mut ParamStore, cfg: &VqVaeConfig) -> Result<Self> {
        let n = cfg.num_downsamples();
        let top = cfg.channels_at(n);
        let conv_in = store.conv2d("dec.conv_in", cfg.code_dim, top, 1, 1, 0)?;
        let mid = store.conv2d("dec.mid", top, top, 3, 1, 1)?;
        let ups = (0..n)
            .rev()
            .map(|i| store.conv2d(&format!("dec.up{i}"), cfg.channels_at(i + 1), cfg.channels_at(i), 3, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        let conv_out = store.conv2d("dec.conv_out", cfg.channels_at(0), 3, 3, 1, 1)?;
        Ok(Self {
            conv_in,
            mid,
            ups,
            conv_out,
        })
    }

    fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let h = self.conv_in.forward(f)?.silu()?;
        let mut h = (self.mid.forward(&h)?.silu()? + h)?;
        for up in &self.ups {
            let (_, _, hh, ww) = h.dims4()?;
            h = up.forward(&h.upsample_nearest2d(hh * 2, ww * 2)?)?.silu()?;
        }
        Ok(candle_nn::ops::sigmoid(&self.conv_out.forward(&h)?)?)
    }
}

pub(crate) struct PatchDiscriminator {
    c1: Conv2d,
    c2: Conv2d,
    out: Conv2d,
}

impl PatchDiscriminator {
    fn new(store: &mut ParamStore, ch: usize) -> Result<Self> {
        Ok(Self {
            c1: store.conv2d("disc.c1", 3, ch, 4, 2, 1)?,
            c2: store.conv2d("disc.c2", ch, ch * 2, 4, 2, 1)?,
            out: store.conv2d("disc.out", ch * 2, 1, 3, 1, 1)?,
        })
    }

    /// Patch logits `(N, 1, H/4, W/4)`.
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.c1.forward(&x.affine(2.0, -1.0)?)?, 0.2)?;
        let h = leaky_relu(&self.c2.forward(&h)?, 0.2)?;
        Ok(self.out.forward(&h)?)
    }
}

/// Encoder, multi-scale quantiser with its codebook, decoder, and the patch
/// discriminator used during training.
pub struct VqVae {
    config: VqVaeConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    pub(crate) discriminator: PatchDiscriminator,
    codebook: Tensor,
    quantizer: MultiScaleQuantizer,
}

impl VqVae {
    pub fn new(config: &VqVaeConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, dtype, device);
        let encoder = Encoder::new(&mut store, config)?;
        let decoder = Decoder::new(&mut store, config)?;
        let bound = 1.0 / config.vocab_size as f64;
        let codebook = store.uniform("codebook", &[config.vocab_size, config.code_dim], bound)?;
        let discriminator = PatchDiscriminator::new(&mut store, config.disc_channels)?;
        let quantizer = MultiScaleQuantizer::new(&config.scales, config.latent_size(), dtype, device)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            decoder,
            discriminator,
            codebook,
            quantizer,
        })
    }

    /// Rebuild from a saved checkpoint blob.
    pub fn load(config: &VqVaeConfig, weights: &Path, dtype: DType, device: &Device) -> Result<Self> {
        let mut m = Self::new(config, dtype, device)?;
        m.store.load(weights)?;
        Ok(m)
    }

    pub fn save(&self, weights: &Path) -> Result<()> {
        self.store.save(weights)
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn quantizer(&self) -> &MultiScaleQuantizer {
        &self.quantizer
    }

    pub fn codebook(&self) -> Codebook {
        Codebook::new(self.codebook.clone()).expect("codebook shape fixed at construction")
    }

    /// Codebook values with no gradient tracking.
    pub fn frozen_codebook(&self) -> Codebook {
        Codebook::new(self.codebook.detach()).expect("codebook shape fixed at construction")
    }

    pub(crate) fn generator_vars(&self) -> Vec<candle_core::Var> {
        self.store_vars(|name| !name.starts_with("disc."))
    }

    pub(crate) fn discriminator_vars(&self) -> Vec<candle_core::Var> {
        self.store_vars(|name| name.starts_with("disc."))
    }

    fn store_vars(&self, keep: impl Fn(&str) -> bool) -> Vec<candle_core::Var> {
        self.store.named_vars().filter(|(n, _)| keep(n)).map(|(_, v)| v.clone()).collect()
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || (h, w) != self.config.resolution {
            return Err(shape_err!(
                "image batch is {c}x{h}x{w}, tokenizer expects 3x{}x{}",
                self.config.resolution.0,
                self.config.resolution.1
            ));
        }
        Ok(())
    }

    /// `(N, 3, H, W)` → `(N, d, h, w)`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.check_images(x)?;
        self.encoder.forward(x)
    }

    /// `(N, d, h, w)` → `(N, 3, H, W)` in `[0,1]`.
    pub fn decode_batch(&self, f_hat: &Tensor) -> Result<Tensor> {
        let (_, d, h, w) = f_hat.dims4()?;
        if d != self.config.code_dim || (h, w) != self.config.latent_size() {
            return Err(shape_err!(
                "latent is {h}x{w}x{d}, decoder expects {:?}x{}",
                self.config.latent_size(),
                self.config.code_dim
            ));
        }
        self.decoder.forward(f_hat)
    }

    pub fn encode(&self, image: &Image) -> Result<LatentGrid> {
        let x = images_to_tensor(&[image], self.store.dtype(), self.store.device())?;
        LatentGrid::new(self.encode_batch(&x)?.squeeze(0)?)
    }

    pub fn decode(&self, f_hat: &LatentGrid) -> Result<Image> {
        let out = self.decode_batch(&f_hat.tensor().unsqueeze(0)?)?;
        Ok(tensor_to_images(&out)?.remove(0))
    }

    /// Token pyramids for a batch of images.
    pub fn tokenize(&self, images: &[&Image]) -> Result<Vec<TokenPyramid>> {
        let x = images_to_tensor(images, self.store.dtype(), self.store.device())?;
        let f = self.encode_batch(&x)?;
        let out = self.quantizer.cascade(&f, &self.frozen_codebook(), false)?;
        out.pyramids(self.quantizer.scales())
    }

    pub fn detokenize(&self, pyramids: &[&TokenPyramid]) -> Result<Vec<Image>> {
        let f_hat = self.quantizer.dequantize_batch(pyramids, &self.frozen_codebook())?;
        tensor_to_images(&self.decode_batch(&f_hat)?)
    }

    /// Encode, quantise and decode.
    pub fn reconstruct(&self, images: &[&Image]) -> Result<Vec<Image>> {
        let x = images_to_tensor(images, self.store.dtype(), self.store.device())?;
        let f = self.encode_batch(&x)?;
        let out = self.quantizer.cascade(&f, &self.frozen_codebook(), false)?;
        tensor_to_images(&self.decode_batch(&out.f_hat)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VqVaeConfig {
        VqVaeConfig {
            base_channels: 8,
            code_dim: 32,
            vocab_size: 64,
            ..VqVaeConfig::default()
        }
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = VqVae::new(&tiny(), DType::F32, &Device::Cpu).unwrap();
        let img = Image::new(64, 64, 3, (0..64 * 64 * 3).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
        let a = m.encode(&img).unwrap();
        assert_eq!(a.shape(), (16, 16, 32));
        let b = m.encode(&img).unwrap();
        let fa: Vec<f32> = a.tensor().flatten_all().unwrap().to_vec1().unwrap();
        let fb: Vec<f32> = b.tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(fa, fb);
        let z = m.encode(&Image::filled(64, 64, 3, 0.0)).unwrap();
        assert!(z.is_finite().unwrap());
    }

    #[test]
    fn wrong_resolution_rejected() {
        let m = VqVae::new(&tiny(), DType::F32, &Device::Cpu).unwrap();
        assert!(m.encode(&Image::filled(32, 32, 3, 0.5)).is_err());
        let bad = LatentGrid::new(Tensor::zeros((32, 8, 8), DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert!(m.decode(&bad).is_err());
    }

    #[test]
    fn decode_shape_range_determinism() {
        let m = VqVae::new(&tiny(), DType::F32, &Device::Cpu).unwrap();
        let mut store = ParamStore::new(9, DType::F32, &Device::Cpu);
        let f = LatentGrid::new(store.normal("f", &[32, 16, 16], 3.0).unwrap()).unwrap();
        let img = m.decode(&f).unwrap();
        assert_eq!((img.height, img.width, img.channels), (64, 64, 3));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img, m.decode(&f).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(VqVaeConfig { downsample: 3, ..tiny() }.validate().is_err());
        assert!(VqVaeConfig { resolution: (60, 64), ..tiny() }.validate().is_err());
        assert!(VqVaeConfig { scales: vec![(1, 1), (8, 8)], ..tiny() }.validate().is_err());
        assert!(VqVaeConfig { lambda_p: -1.0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn codebook_rows_distinct() {
        let m = VqVae::new(&tiny(), DType::F64, &Device::Cpu).unwrap();
        let rows: Vec<Vec<f64>> = m.codebook().tensor().to_vec2().unwrap();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j]);
            }
        }
    }
}
