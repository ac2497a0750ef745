use crate::data::Mask;
use crate::error::{invalid, shape_err, Result};

/// Normalised, symmetric gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    /// Row-major `levels x levels`, sums to 1.
    pub matrix: Vec<f64>,
    /// Set when no offset produced a single in-mask pair; the matrix is then
    /// the uniform diagonal.
    pub degenerate: bool,
}

impl Glcm {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.levels + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlcmFeatures {
    pub contrast: f64,
    pub correlation: f64,
    pub energy: f64,
    pub homogeneity: f64,
}

/// Quantise the masked pixels uniformly over their min–max range into
/// `levels` bins, count pairs at each `(drow, dcol)` offset where both ends
/// are in the mask, symmetrise, normalise, and average over the offsets that
/// had at least one pair.
pub fn glcm(gray: &[f64], mask: &Mask, levels: usize, offsets: &[(isize, isize)]) -> Result<Glcm> {
    if levels < 2 {
        return Err(invalid!("GLCM needs at least 2 gray levels, got {levels}"));
    }
    if offsets.is_empty() {
        return Err(invalid!("GLCM needs at least one offset"));
    }
    let (h, w) = (mask.height, mask.width);
    if gray.len() != h * w {
        return Err(shape_err!("{} gray values for a {h}x{w} mask", gray.len()));
    }
    let (lo, hi) = gray
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m != 0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    if lo > hi {
        return Err(invalid!("mask has no lesion pixels"));
    }
    let span = hi - lo;
    let quantized: Vec<usize> = gray
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((((v - lo) / span) * levels as f64).floor().max(0.0) as usize).min(levels - 1)
            } else {
                0
            }
        })
        .collect();

    let mut acc = vec![0.0; levels * levels];
    let mut used = 0usize;
    for &(dr, dc) in offsets {
        let mut counts = vec![0u64; levels * levels];
        let mut pairs = 0u64;
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                if mask.data[p] == 0 {
                    continue;
                }
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let q = rr as usize * w + cc as usize;
                if mask.data[q] == 0 {
                    continue;
                }
                let (a, b) = (quantized[p], quantized[q]);
                counts[a * levels + b] += 1;
                counts[b * levels + a] += 1;
                pairs += 1;
            }
        }
        if pairs == 0 {
            continue;
        }
        let total = (2 * pairs) as f64;
        for (a, &c) in acc.iter_mut().zip(&counts) {
            *a += c as f64 / total;
        }
        used += 1;
    }
    if used == 0 {
        let mut matrix = vec![0.0; levels * levels];
        for i in 0..levels {
            matrix[i * levels + i] = 1.0 / levels as f64;
        }
        return Ok(Glcm {
            levels,
            matrix,
            degenerate: true,
        });
    }
    let k = used as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(Glcm {
        levels,
        matrix: acc,
        degenerate: false,
    })
}

/// Contrast, correlation, energy and homogeneity. Correlation is 0 when
/// either marginal has zero variance.
pub fn glcm_features(g: &Glcm) -> GlcmFeatures {
    let l = g.levels;
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.at(i, j);
            mu_i += i as f64 * p;
            mu_j += j as f64 * p;
        }
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    let (mut contrast, mut energy, mut homogeneity) = (0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.at(i, j);
            if p == 0.0 {
                continue;
            }
            let di = i as f64 - mu_i;
            let dj = j as f64 - mu_j;
            var_i += di * di * p;
            var_j += dj * dj * p;
            cov += di * dj * p;
            let d = i.abs_diff(j) as f64;
            contrast += d * d * p;
            energy += p * p;
            homogeneity += p / (1.0 + d);
        }
    }
    let denom = (var_i * var_j).sqrt();
    let correlation = if denom > 0.0 { cov / denom } else { 0.0 };
    GlcmFeatures {
        contrast,
        correlation,
        energy,
        homogeneity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_horizontal() {
        let gray = [0.0, 0.0, 1.0, 1.0];
        let g = glcm(&gray, &Mask::filled(2, 2, 1), 2, &[(0, 1)]).unwrap();
        assert_eq!(g.matrix, vec![0.5, 0.0, 0.0, 0.5]);
        let f = glcm_features(&g);
        assert_eq!(f.contrast, 0.0);
        assert_eq!(f.energy, 0.5);
        assert_eq!(f.homogeneity, 1.0);
        assert!((f.correlation - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_single_cell() {
        let g = glcm(&[0.3; 9], &Mask::filled(3, 3, 1), 16, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.at(0, 0), 1.0);
        assert_eq!(g.matrix.iter().sum::<f64>(), 1.0);
        assert!(!g.degenerate);
    }

    #[test]
    fn mask_excludes_a_pair() {
        // Rows [0,1] and [1,1]; masking (1,0) leaves only the top pair (0,1).
        let gray = [0.0, 1.0, 1.0, 1.0];
        let mask = Mask::new(2, 2, vec![1, 1, 0, 1]).unwrap();
        let g = glcm(&gray, &mask, 2, &[(0, 1)]).unwrap();
        assert_eq!(g.matrix, vec![0.0, 0.5, 0.5, 0.0]);
        let f = glcm_features(&g);
        assert_eq!(f.contrast, 1.0);
        assert_eq!(f.homogeneity, 0.5);
        assert!((f.correlation + 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_pairs_is_flagged() {
        let mut mask = Mask::filled(3, 3, 0);
        mask.data[4] = 1;
        let g = glcm(&[0.5; 9], &mask, 4, &[(0, 1), (1, 0)]).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.at(2, 2), 0.25);
    }

    #[test]
    fn argument_checks() {
        let m = Mask::filled(2, 2, 1);
        assert!(glcm(&[0.0; 4], &m, 1, &[(0, 1)]).is_err());
        assert!(glcm(&[0.0; 4], &m, 2, &[]).is_err());
    }
}
