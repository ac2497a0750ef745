use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::resample::pool_window;
use crate::data::Mask;
use crate::error::{invalid, shape_err, Error, Result};

pub type Scale = (usize, usize);

/// Scales must be non-empty and strictly increasing in area, and no scale may
/// exceed the latent grid; the last one must equal it.
pub fn validate_scales(scales: &[Scale], latent: Scale) -> Result<()> {
    let last = scales
        .last()
        .ok_or_else(|| invalid!("scale list is empty"))?;
    if *last != latent {
        return Err(invalid!(
            "last scale {last:?} must equal the latent grid {latent:?}"
        ));
    }
    for (i, s) in scales.iter().enumerate() {
        if s.0 == 0 || s.1 == 0 || s.0 > latent.0 || s.1 > latent.1 {
            return Err(invalid!("scale {s:?} does not fit the latent grid {latent:?}"));
        }
        if i > 0 && scales[i - 1].0 * scales[i - 1].1 >= s.0 * s.1 {
            return Err(invalid!("scales {scales:?} are not strictly increasing in area"));
        }
    }
    Ok(())
}

/// K token grids, coarsest first, each row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPyramid {
    pub scales: Vec<Scale>,
    pub grids: Vec<Vec<u32>>,
}

impl TokenPyramid {
    pub fn new(scales: Vec<Scale>, grids: Vec<Vec<u32>>) -> Result<Self> {
        if scales.len() != grids.len() || scales.is_empty() {
            return Err(shape_err!("{} scales but {} grids", scales.len(), grids.len()));
        }
        for (s, g) in scales.iter().zip(&grids) {
            if g.len() != s.0 * s.1 {
                return Err(shape_err!("grid for scale {s:?} holds {} tokens", g.len()));
            }
        }
        Ok(Self { scales, grids })
    }

    pub fn num_tokens(&self) -> usize {
        self.grids.iter().map(Vec::len).sum()
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        for (k, g) in self.grids.iter().enumerate() {
            if let Some(&t) = g.iter().find(|&&t| t as usize >= vocab) {
                return Err(invalid!("token {t} at scale {k} is outside the vocabulary of {vocab}"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| invalid!("{e}"))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        Self::new(p.scales, p.grids)
    }
}

/// Binary lesion masks at every scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPyramid {
    pub scales: Vec<Scale>,
    pub grids: Vec<Vec<u8>>,
}

impl MaskPyramid {
    /// One `(N, 1, hk, wk)` tensor per scale for a batch of pyramids.
    pub fn batch_tensors(batch: &[&MaskPyramid], dtype: DType, dev: &Device) -> Result<Vec<Tensor>> {
        let first = batch.first().ok_or_else(|| invalid!("empty mask batch"))?;
        first
            .scales
            .iter()
            .enumerate()
            .map(|(k, &(hk, wk))| {
                let mut data = Vec::with_capacity(batch.len() * hk * wk);
                for mp in batch {
                    data.extend(mp.grids[k].iter().map(|&v| v as f32));
                }
                Ok(Tensor::from_vec(data, (batch.len(), 1, hk, wk), dev)?.to_dtype(dtype)?)
            })
            .collect()
    }
}

/// Max-pool the full-resolution mask onto each scale: a cell is lesion when
/// any pixel of its pooling window is.
pub fn build_mask_pyramid(mask: &Mask, scales: &[Scale]) -> Result<MaskPyramid> {
    if let Some(v) = mask.data.iter().find(|&&v| v > 1) {
        return Err(invalid!("mask value {v} is not binary"));
    }
    let (h, w) = (mask.height, mask.width);
    let grids = scales
        .iter()
        .map(|&(hk, wk)| {
            if hk > h || wk > w {
                return Err(invalid!("scale {:?} exceeds mask size {h}x{w}", (hk, wk)));
            }
            let mut g = vec![0u8; hk * wk];
            for i in 0..hk {
                let (r0, r1) = pool_window(i, h, hk);
                for j in 0..wk {
                    let (c0, c1) = pool_window(j, w, wk);
                    let hit = (r0..r1).any(|r| (c0..c1).any(|c| mask.data[r * w + c] != 0));
                    g[i * wk + j] = u8::from(hit);
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskPyramid {
        scales: scales.to_vec(),
        grids,
    })
}
