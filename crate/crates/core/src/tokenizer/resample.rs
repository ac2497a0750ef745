//! Separable linear resampling between the latent grid and each scale.
//!
//! Downsampling is area averaging over adaptive-pooling windows
//! (`[floor(i*n/m), ceil((i+1)*n/m))`), upsampling is bilinear with
//! half-pixel centres and edge clamping. Both reduce to the identity when the
//! sizes match.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Adaptive-pooling window `[start, end)` of output cell `i` when mapping
/// `n` inputs onto `m` outputs.
pub fn pool_window(i: usize, n: usize, m: usize) -> (usize, usize) {
    let start = (i * n) / m;
    let end = ((i + 1) * n).div_ceil(m);
    (start, end)
}

/// `m x n` row-stochastic area-averaging matrix.
pub fn area_matrix(n: usize, m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * n];
    for i in 0..m {
        let (s, e) = pool_window(i, n, m);
        let wgt = 1.0 / (e - s) as f64;
        for j in s..e {
            a[i * n + j] = wgt;
        }
    }
    a
}

/// `m x n` bilinear interpolation matrix (half-pixel centres).
pub fn bilinear_matrix(n: usize, m: usize) -> Vec<f64> {
    let mut b = vec![0.0; m * n];
    let scale = n as f64 / m as f64;
    for i in 0..m {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = src - i0 as f64;
        b[i * n + i0] += 1.0 - frac;
        b[i * n + i1] += frac;
    }
    b
}

/// Precomputed resampling operators between the `(h, w)` latent grid and one
/// `(hk, wk)` scale.
#[derive(Debug, Clone)]
pub struct ScaleResampler {
    pub scale: (usize, usize),
    pub full: (usize, usize),
    // Stored transposed so they apply as right-multiplications.
    down_h_t: Tensor,
    down_w_t: Tensor,
    up_h_t: Tensor,
    up_w_t: Tensor,
}

fn transposed(mat: Vec<f64>, rows: usize, cols: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(mat, (rows, cols), dev)?
        .t()?
        .contiguous()?
        .to_dtype(dtype)?)
}

impl ScaleResampler {
    pub fn new(scale: (usize, usize), full: (usize, usize), dtype: DType, dev: &Device) -> Result<Self> {
        let (hk, wk) = scale;
        let (h, w) = full;
        Ok(Self {
            scale,
            full,
            down_h_t: transposed(area_matrix(h, hk), hk, h, dtype, dev)?,
            down_w_t: transposed(area_matrix(w, wk), wk, w, dtype, dev)?,
            up_h_t: transposed(bilinear_matrix(hk, h), h, hk, dtype, dev)?,
            up_w_t: transposed(bilinear_matrix(wk, w), w, wk, dtype, dev)?,
        })
    }

    /// Apply `rows_t` along H and `cols_t` along W of an `(N, C, H, W)` tensor.
    fn apply(x: &Tensor, rows_t: &Tensor, cols_t: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let out_w = cols_t.dim(1)?;
        let out_h = rows_t.dim(1)?;
        let y = x.reshape((n * c * h, w))?.matmul(cols_t)?;
        let y = y
            .reshape((n * c, h, out_w))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n * c * out_w, h))?
            .matmul(rows_t)?;
        Ok(y
            .reshape((n * c, out_w, out_h))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n, c, out_h, out_w))?)
    }

    pub fn down(&self, x: &Tensor) -> Result<Tensor> {
        if self.scale == self.full {
            return Ok(x.clone());
        }
        Self::apply(x, &self.down_h_t, &self.down_w_t)
    }

    pub fn up(&self, x: &Tensor) -> Result<Tensor> {
        if self.scale == self.full {
            return Ok(x.clone());
        }
        Self::apply(x, &self.up_h_t, &self.up_w_t)
    }
}
