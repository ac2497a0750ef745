use std::io::Write;
use std::path::Path;

use super::{MeasurementVector, MEASUREMENT_NAMES, NUM_MEASUREMENTS};
use crate::error::{invalid, Error, Result};

/// Per-dimension z-scoring with population statistics. Dimensions without
/// variance get std 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNormalizer {
    pub mean: [f64; NUM_MEASUREMENTS],
    pub std: [f64; NUM_MEASUREMENTS],
}

impl MeasurementNormalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_MEASUREMENTS],
            std: [1.0; NUM_MEASUREMENTS],
        }
    }

    pub fn fit(vectors: &[MeasurementVector]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyDataset("cannot fit a normalizer on zero vectors".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = [0.0; NUM_MEASUREMENTS];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v.0) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; NUM_MEASUREMENTS];
        for v in vectors {
            for ((s, x), m) in std.iter_mut().zip(v.0).zip(mean) {
                *s += (x - m) * (x - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, v: &MeasurementVector) -> MeasurementVector {
        MeasurementVector(std::array::from_fn(|i| (v.0[i] - self.mean[i]) / self.std[i]))
    }

    /// 2 x 14 table: a header row, then `mean` and `std` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("stat");
        for n in MEASUREMENT_NAMES {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in [("mean", &self.mean), ("std", &self.std)] {
            out.push_str(name);
            for x in row {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| invalid!("{}: {e}", path.display()))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| invalid!("{}: {e}", path.display()))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| invalid!("{}: {e}", path.display())))
                .collect::<Result<Vec<_>>>()?;
            rows.push(MeasurementVector::from_slice(&vals)?.0);
        }
        if rows.len() != 2 {
            return Err(invalid!("{}: expected mean and std rows", path.display()));
        }
        Ok(Self {
            mean: rows[0],
            std: rows[1],
        })
    }
}
