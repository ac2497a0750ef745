use crate::error::{shape_err, Result};
use crate::tokenizer::{Scale, TokenPyramid};

/// Number of condition slots (`S_c`, `F_q`) ahead of the first scale.
pub const PREFIX_LEN: usize = 2;

/// A token pyramid laid out as one sequence: two condition slots, then every
/// scale in ascending order, row-major within a scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSequence {
    scales: Vec<Scale>,
    tokens: Vec<u32>,
}

impl ScaleSequence {
    pub fn len(&self) -> usize {
        PREFIX_LEN + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    /// Token ids after the condition prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// `(scale index, row, col)` of a sequence position; `None` for the
    /// condition slots and positions past the end.
    pub fn coords(&self, pos: usize) -> Option<(usize, usize, usize)> {
        scale_coords(&self.scales, pos)
    }
}

pub fn scale_coords(scales: &[Scale], pos: usize) -> Option<(usize, usize, usize)> {
    let mut i = pos.checked_sub(PREFIX_LEN)?;
    for (k, &(h, w)) in scales.iter().enumerate() {
        if i < h * w {
            return Some((k, i / w, i % w));
        }
        i -= h * w;
    }
    None
}

/// Offsets of each scale's first token within the token part of the
/// sequence, plus the total count at the end.
pub fn scale_offsets(scales: &[Scale]) -> Vec<usize> {
    let mut out = Vec::with_capacity(scales.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &(h, w) in scales {
        acc += h * w;
        out.push(acc);
    }
    out
}

pub fn flatten_pyramid(pyramid: &TokenPyramid, scales: &[Scale]) -> Result<ScaleSequence> {
    if pyramid.scales != scales {
        return Err(shape_err!(
            "pyramid scales {:?} differ from configured {:?}",
            pyramid.scales,
            scales
        ));
    }
    Ok(ScaleSequence {
        scales: scales.to_vec(),
        tokens: pyramid.grids.concat(),
    })
}

pub fn unflatten(seq: &ScaleSequence) -> Result<TokenPyramid> {
    let off = scale_offsets(&seq.scales);
    let grids = off.windows(2).map(|w| seq.tokens[w[0]..w[1]].to_vec()).collect();
    TokenPyramid::new(seq.scales.clone(), grids)
}
