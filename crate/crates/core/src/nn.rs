//! Seeded parameter storage and the handful of layers the models are built
//! from.
//!
//! Every parameter is drawn from a ChaCha stream keyed by the store seed, so
//! two stores built with the same seed and the same sequence of layer
//! constructors hold bit-identical weights.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
    trainable: bool,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
            trainable: true,
        }
    }

    /// A store whose tensors never receive gradients (fixed feature stacks).
    pub fn frozen(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            trainable: false,
            ..Self::new(seed, dtype, device)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Invalid(format!("parameter `{name}` registered twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = if self.trainable {
            var.as_tensor().clone()
        } else {
            var.as_tensor().detach()
        };
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.register(name, values, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                z * std
            })
            .collect();
        self.register(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    /// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[out_dim], bound)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            bound,
        )?;
        let b = self.uniform(&format!("{name}.bias"), &[out_ch], bound)?;
        let cfg = Conv2dConfig {
            padding,
            stride,
            ..Default::default()
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        let weight = self.constant(&format!("{name}.weight"), &[dim], 1.0)?;
        let bias = self.constant(&format!("{name}.bias"), &[dim], 0.0)?;
        Ok(LayerNorm {
            weight,
            bias,
            eps: 1e-5,
        })
    }

    pub fn named_vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrite every registered parameter with the tensor of the same name
    /// from a safetensors file.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Invalid(format!(
                "checkpoint {} does not exist",
                path.display()
            )));
        }
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        for (name, var) in &self.vars {
            let t = loaded
                .get(name)
                .ok_or_else(|| shape_err!("checkpoint {} lacks `{name}`", path.display()))?;
            if t.dims() != var.dims() {
                return Err(shape_err!(
                    "`{name}` has shape {:?} in checkpoint, model expects {:?}",
                    t.dims(),
                    var.dims()
                ));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
                Ok((k.clone(), flat))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> candle_core::Result<Tensor> {
    let pos = x.relu()?;
    let neg = x.neg()?.relu()?.affine(-slope, 0.0)?;
    pos + neg
}

/// Convert an HWC `[0,1]` image batch into an `(N, C, H, W)` tensor.
pub fn images_to_tensor(
    images: &[&crate::data::Image],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("empty image batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if (img.height, img.width, img.channels) != (h, w, c) {
            return Err(shape_err!(
                "batch mixes {}x{}x{} and {}x{}x{} images",
                h,
                w,
                c,
                img.height,
                img.width,
                img.channels
            ));
        }
        data.extend_from_slice(&img.data);
    }
    let t = Tensor::from_vec(data, (images.len(), h, w, c), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?;
    Ok(t)
}

/// Inverse of [`images_to_tensor`]; values are clamped to `[0,1]`.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<crate::data::Image>> {
    let (n, c, h, w) = t.dims4()?;
    let hwc = t
        .clamp(0.0, 1.0)?
        .permute((0, 2, 3, 1))?
        .contiguous()?
        .to_dtype(DType::F32)?
        .reshape((n, h * w * c))?
        .to_vec2::<f32>()?;
    Ok(hwc
        .into_iter()
        .map(|data| crate::data::Image {
            height: h,
            width: w,
            channels: c,
            data,
        })
        .collect())
}


/// A fixed, randomly initialised convolution stack used as a feature
/// extractor (perceptual loss, FID features). Weights derive from the seed
/// alone.
#[derive(Debug, Clone)]
pub struct FrozenConvStack {
    convs: Vec<Conv2d>,
}

impl FrozenConvStack {
    /// `widths[i]` output channels per layer; every layer after the first
    /// halves the spatial size.
    pub fn new(seed: u64, in_ch: usize, widths: &[usize], dtype: DType, device: &Device) -> Result<Self> {
        let mut store = ParamStore::frozen(seed, dtype, device);
        let mut convs = Vec::with_capacity(widths.len());
        let mut c = in_ch;
        for (i, &out) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            // He-style scale keeps activations from vanishing through ReLUs.
            let fan_in = c * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let w = store.normal(&format!("conv{i}.weight"), &[out, c, 3, 3], std)?;
            let b = store.normal(&format!("conv{i}.bias"), &[out], 0.1)?;
            let cfg = Conv2dConfig {
                padding: 1,
                stride,
                ..Default::default()
            };
            convs.push(Conv2d::new(w, Some(b), cfg));
            c = out;
        }
        Ok(Self { convs })
    }

    /// Activations after every layer for an `(N, C, H, W)` batch in `[0,1]`.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.affine(4.0, -2.0)?;
        let mut out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}
