//! Multi-scale residual quantisation.
//!
//! For each scale k, coarsest first: area-downsample the running residual to
//! `(hk, wk)`, snap every cell to its nearest codebook row, bilinearly
//! upsample the quantised grid back to `(h, w)`, subtract it from the
//! residual and add it to the reconstruction `f_hat`.

use candle_core::{DType, Device, Tensor, D};

use super::pyramid::{validate_scales, Scale, TokenPyramid};
use super::resample::ScaleResampler;
use crate::error::{invalid, shape_err, Result};

/// `V x d` code vectors.
#[derive(Debug, Clone)]
pub struct Codebook(Tensor);

impl Codebook {
    pub fn new(vectors: Tensor) -> Result<Self> {
        let (v, d) = vectors.dims2()?;
        if v == 0 || d == 0 {
            return Err(invalid!("codebook is empty ({v}x{d})"));
        }
        Ok(Self(vectors))
    }

    pub fn from_rows(rows: &[Vec<f64>], dtype: DType, dev: &Device) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(shape_err!("codebook rows have differing lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.is_empty() || d == 0 {
            return Err(invalid!("codebook is empty"));
        }
        Self::new(Tensor::from_vec(flat, (rows.len(), d), dev)?.to_dtype(dtype)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn vocab(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.dims()[1]
    }
}

/// A single latent feature map, stored `(d, h, w)`.
#[derive(Debug, Clone)]
pub struct LatentGrid(Tensor);

impl LatentGrid {
    pub fn new(t: Tensor) -> Result<Self> {
        t.dims3()?;
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `(h, w, d)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.0.dims();
        (d[1], d[2], d[0])
    }

    pub fn is_finite(&self) -> Result<bool> {
        let v: Vec<f64> = self.0.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        Ok(v.iter().all(|x| x.is_finite()))
    }
}

/// Per-scale outputs of one cascade pass over a batch.
#[derive(Debug)]
pub struct CascadeOutput {
    /// `(N, hk*wk)` u32 token ids per scale.
    pub indices: Vec<Tensor>,
    /// Downsampled residual fed to the nearest-code search, `(N, d, hk, wk)`.
    pub residual_inputs: Vec<Tensor>,
    /// Code vectors of the chosen tokens, `(N, d, hk, wk)`.
    pub quantized: Vec<Tensor>,
    /// Sum of the upsampled quantised grids, `(N, d, h, w)`.
    pub f_hat: Tensor,
}

impl CascadeOutput {
    pub fn pyramids(&self, scales: &[Scale]) -> Result<Vec<TokenPyramid>> {
        let per_scale: Vec<Vec<Vec<u32>>> = self
            .indices
            .iter()
            .map(|t| t.to_vec2::<u32>())
            .collect::<candle_core::Result<_>>()?;
        let n = per_scale.first().map(Vec::len).unwrap_or(0);
        (0..n)
            .map(|i| TokenPyramid::new(scales.to_vec(), per_scale.iter().map(|s| s[i].clone()).collect()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MultiScaleQuantizer {
    scales: Vec<Scale>,
    latent: Scale,
    resamplers: Vec<ScaleResampler>,
}

impl MultiScaleQuantizer {
    pub fn new(scales: &[Scale], latent: Scale, dtype: DType, dev: &Device) -> Result<Self> {
        validate_scales(scales, latent)?;
        let resamplers = scales
            .iter()
            .map(|&s| ScaleResampler::new(s, latent, dtype, dev))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scales: scales.to_vec(),
            latent,
            resamplers,
        })
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn latent(&self) -> Scale {
        self.latent
    }

    pub fn resampler(&self, k: usize) -> &ScaleResampler {
        &self.resamplers[k]
    }

    /// Index of the nearest code for every row of `z` (`N x d`); ties go to
    /// the lower index.
    pub fn nearest_codes(z: &Tensor, codebook: &Codebook) -> Result<Tensor> {
        let e = codebook.tensor();
        let z2 = z.sqr()?.sum_keepdim(1)?;
        let e2 = e.sqr()?.sum(1)?.unsqueeze(0)?;
        let dist = z2
            .broadcast_add(&e2)?
            .sub(&(z.matmul(&e.t()?)? * 2.0)?)?;
        Ok(dist.argmin(D::Minus1)?)
    }

    /// Code vectors for `(N, hk*wk)` ids laid out as `(N, d, hk, wk)`.
    pub fn embed(indices: &Tensor, codebook: &Codebook, scale: Scale) -> Result<Tensor> {
        let (n, cells) = indices.dims2()?;
        if cells != scale.0 * scale.1 {
            return Err(shape_err!("{cells} tokens for scale {scale:?}"));
        }
        let d = codebook.dim();
        let flat = indices.flatten_all()?;
        let rows = codebook.tensor().index_select(&flat, 0)?;
        Ok(rows
            .reshape((n, scale.0, scale.1, d))?
            .permute((0, 3, 1, 2))?
            .contiguous()?)
    }

    /// Run the cascade on an `(N, d, h, w)` batch.
    ///
    /// With `residual_grad` false the residual is detached from `f`, so only
    /// the codebook receives gradients through `quantized` and `f_hat`. With
    /// it true, `residual_inputs` stay differentiable w.r.t. `f` while the
    /// subtracted quantised grids are detached.
    pub fn cascade(&self, f: &Tensor, codebook: &Codebook, residual_grad: bool) -> Result<CascadeOutput> {
        let (n, d, h, w) = f.dims4()?;
        if (h, w) != self.latent {
            return Err(shape_err!("latent is {h}x{w}, quantizer expects {:?}", self.latent));
        }
        if d != codebook.dim() {
            return Err(shape_err!("latent depth {d} vs code dimension {}", codebook.dim()));
        }
        let mut residual = if residual_grad { f.clone() } else { f.detach() };
        let mut f_hat = f.zeros_like()?;
        let mut out = CascadeOutput {
            indices: Vec::with_capacity(self.scales.len()),
            residual_inputs: Vec::with_capacity(self.scales.len()),
            quantized: Vec::with_capacity(self.scales.len()),
            f_hat: f_hat.clone(),
        };
        for (k, &(hk, wk)) in self.scales.iter().enumerate() {
            let rs = &self.resamplers[k];
            let z = rs.down(&residual)?;
            let rows = z.permute((0, 2, 3, 1))?.reshape((n * hk * wk, d))?;
            let idx = Self::nearest_codes(&rows.detach(), codebook)?.reshape((n, hk * wk))?;
            let q = Self::embed(&idx, codebook, (hk, wk))?;
            let up = rs.up(&q)?;
            f_hat = (f_hat + &up)?;
            residual = (residual - up.detach())?;
            out.indices.push(idx);
            out.residual_inputs.push(z);
            out.quantized.push(q);
        }
        out.f_hat = f_hat;
        Ok(out)
    }

    /// Reconstruct `f_hat` for a batch of pyramids; bit-identical to the
    /// `f_hat` the cascade produced for the same tokens.
    pub fn dequantize_batch(&self, pyramids: &[&TokenPyramid], codebook: &Codebook) -> Result<Tensor> {
        let n = pyramids.len();
        if n == 0 {
            return Err(invalid!("no pyramids to dequantize"));
        }
        let dev = codebook.tensor().device();
        let mut f_hat = Tensor::zeros(
            (n, codebook.dim(), self.latent.0, self.latent.1),
            codebook.tensor().dtype(),
            dev,
        )?;
        for (k, &scale) in self.scales.iter().enumerate() {
            let mut ids = Vec::with_capacity(n * scale.0 * scale.1);
            for p in pyramids {
                if p.scales != self.scales {
                    return Err(shape_err!(
                        "pyramid scales {:?} differ from quantizer scales {:?}",
                        p.scales,
                        self.scales
                    ));
                }
                p.check_vocab(codebook.vocab())?;
                ids.extend_from_slice(&p.grids[k]);
            }
            let idx = Tensor::from_vec(ids, (n, scale.0 * scale.1), dev)?;
            let q = Self::embed(&idx, codebook, scale)?;
            f_hat = (f_hat + self.resamplers[k].up(&q)?)?;
        }
        Ok(f_hat)
    }

    pub fn quantize_multiscale(&self, f: &LatentGrid, codebook: &Codebook) -> Result<(TokenPyramid, LatentGrid)> {
        let out = self.cascade(&f.tensor().unsqueeze(0)?, codebook, false)?;
        let pyramid = out.pyramids(&self.scales)?.remove(0);
        Ok((pyramid, LatentGrid::new(out.f_hat.squeeze(0)?)?))
    }

    pub fn dequantize(&self, pyramid: &TokenPyramid, codebook: &Codebook) -> Result<LatentGrid> {
        LatentGrid::new(self.dequantize_batch(&[pyramid], codebook)?.squeeze(0)?)
    }
}
