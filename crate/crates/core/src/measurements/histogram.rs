use crate::data::Mask;
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis_excess: f64,
    pub entropy_bits: f64,
}

/// Population moments and the Shannon entropy of a `bins`-bin histogram
/// spanning the masked min–max range. Skewness and kurtosis are 0 when the
/// masked values are all equal.
pub fn intensity_stats(gray: &[f64], mask: &Mask, bins: usize) -> Result<IntensityStats> {
    if gray.len() != mask.data.len() {
        return Err(shape_err!("{} gray values for a {} pixel mask", gray.len(), mask.data.len()));
    }
    let values: Vec<f64> = gray
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m != 0)
        .map(|(&g, _)| g)
        .collect();
    if values.is_empty() {
        return Err(invalid!("mask has no lesion pixels"));
    }
    let n = values.len() as f64;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Ok(IntensityStats {
            mean: lo,
            std: 0.0,
            skewness: 0.0,
            kurtosis_excess: 0.0,
            entropy_bits: 0.0,
        });
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in &values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis_excess) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let mut hist = vec![0usize; bins.max(1)];
    let span = hi - lo;
    for &v in &values {
        let b = (((v - lo) / span) * bins as f64).floor() as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let entropy_bits = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();

    Ok(IntensityStats {
        mean,
        std: m2.sqrt(),
        skewness,
        kurtosis_excess,
        entropy_bits: entropy_bits.max(0.0),
    })
}
