use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};

/// Diagonal jitter added to both covariances when either is near-singular.
pub const FID_JITTER: f64 = 1e-6;

/// Feature rows from one named extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub extractor_id: String,
    pub sample_ids: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(extractor_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        Self {
            extractor_id: extractor_id.into(),
            sample_ids: (0..n).map(|i| format!("{i}")).collect(),
            labels: vec![None; n],
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Rows whose label equals `class`.
    pub fn subset_by_label(&self, class: usize) -> FeatureSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == Some(class)).collect();
        FeatureSet {
            extractor_id: self.extractor_id.clone(),
            sample_ids: keep.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Mean and population covariance of feature rows.
pub fn moments(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(invalid!("FID needs at least 2 samples per set, got {n}"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(shape_err!("feature rows have inconsistent lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / n as f64;
    Ok((mu, cov))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn near_singular(m: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= 1e-12 * max.max(1.0)
}

/// Fréchet distance between two Gaussians.
///
/// `Tr((Σ1 Σ2)^{1/2})` is evaluated as `Tr((A Σ2 A)^{1/2})` with
/// `A = Σ1^{1/2}`, which is symmetric, so both square roots come from
/// symmetric eigendecompositions with negative eigenvalues clamped to 0.
pub fn fid_from_moments(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(shape_err!("feature dimensions differ: {} vs {}", d, mu2.len()));
    }
    let (mut s1, mut s2) = (s1.clone(), s2.clone());
    if near_singular(&s1) || near_singular(&s2) {
        for i in 0..d {
            s1[(i, i)] += FID_JITTER;
            s2[(i, i)] += FID_JITTER;
        }
    }
    let a = psd_sqrt(&s1);
    let m = symmetrize(&(&a * &s2 * &a));
    let tr_sqrt: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = mu1 - mu2;
    let fid = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    if !fid.is_finite() {
        return Err(Error::NonFinite("fid"));
    }
    Ok(fid.max(0.0))
}

pub fn fid_from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = moments(a)?;
    let (mu2, s2) = moments(b)?;
    fid_from_moments(&mu1, &s1, &mu2, &s2)
}

pub fn compute_fid(real: &FeatureSet, fake: &FeatureSet) -> Result<f64> {
    if real.extractor_id != fake.extractor_id {
        return Err(invalid!(
            "feature sets come from different extractors ({} vs {})",
            real.extractor_id,
            fake.extractor_id
        ));
    }
    if real.dim() != fake.dim() {
        return Err(shape_err!("feature dimensions differ: {} vs {}", real.dim(), fake.dim()));
    }
    fid_from_rows(&real.rows, &fake.rows)
}

/// Rows are source classes, columns target classes; `None` marks a cell
/// without enough samples on either side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidMatrix {
    pub class_names: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub target_mean: Vec<Option<f64>>,
    pub target_std: Vec<Option<f64>>,
}

impl FidMatrix {
    pub fn absent_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// CSV grid with a header row of target classes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        let fmt = |c: &Option<f64>| c.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
        for (name, row) in self.class_names.iter().zip(&self.cells) {
            s.push_str(name);
            for c in row {
                s.push(',');
                s.push_str(&fmt(c));
            }
            s.push('\n');
        }
        for (label, stats) in [("mean", &self.target_mean), ("std", &self.target_std)] {
            s.push_str(label);
            for c in stats.iter() {
                s.push(',');
                s.push_str(&fmt(c));
            }
            s.push('\n');
        }
        s
    }
}

/// `synth[i][j]` holds features of images generated from source class `i`
/// for target class `j`; `real[j]` the real features of class `j`. The
/// per-target statistics are the mean and population std of each column's
/// present cells.
pub fn fid_confusion_matrix(
    synth: &[Vec<Option<FeatureSet>>],
    real: &[FeatureSet],
    class_names: &[String],
) -> Result<FidMatrix> {
    let c = real.len();
    if synth.len() != c || synth.iter().any(|r| r.len() != c) || class_names.len() != c {
        return Err(shape_err!("confusion matrix inputs must all be {c}x{c}"));
    }
    let mut cells = vec![vec![None; c]; c];
    for i in 0..c {
        for j in 0..c {
            if let Some(s) = &synth[i][j] {
                if s.len() >= 2 && real[j].len() >= 2 {
                    cells[i][j] = Some(compute_fid(&real[j], s)?);
                }
            }
        }
    }
    let mut target_mean = Vec::with_capacity(c);
    let mut target_std = Vec::with_capacity(c);
    for j in 0..c {
        let col: Vec<f64> = (0..c).filter_map(|i| cells[i][j]).collect();
        if col.is_empty() {
            target_mean.push(None);
            target_std.push(None);
        } else {
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            target_mean.push(Some(m));
            target_std.push(Some(v.sqrt()));
        }
    }
    Ok(FidMatrix {
        class_names: class_names.to_vec(),
        cells,
        target_mean,
        target_std,
    })
}
