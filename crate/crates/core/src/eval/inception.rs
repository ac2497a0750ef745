use crate::error::{invalid, Result};

/// Rows must sum to 1 within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Inception score `exp(mean_x KL(p(y|x) || p(y)))` per split; returns the
/// mean and population standard deviation over splits. The split count is
/// capped at the number of rows.
pub fn compute_is(probs: &[Vec<f64>], num_splits: usize) -> Result<(f64, f64)> {
    if probs.is_empty() {
        return Err(invalid!("inception score needs at least one row"));
    }
    let c = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != c || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(invalid!("row {i} is not a probability vector (sum {sum})"));
        }
    }
    let n = probs.len();
    let splits = num_splits.clamp(1, n);
    let mut scores = Vec::with_capacity(splits);
    for k in 0..splits {
        let part = &probs[k * n / splits..(k + 1) * n / splits];
        let mut marginal = vec![0.0; c];
        for row in part {
            for (m, p) in marginal.iter_mut().zip(row) {
                *m += p / part.len() as f64;
            }
        }
        // A constant column's mean is its value; summing would round it.
        for (j, m) in marginal.iter_mut().enumerate() {
            let first = part[0][j];
            if part.iter().all(|row| row[j] == first) {
                *m = first;
            }
        }
        let kl: f64 = part
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&marginal)
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(p, m)| p * (p.ln() - m.ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / part.len() as f64;
        scores.push(kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}
