//! The 14 lesion measurement scores: five shape descriptors, five intensity
//! histogram statistics and four co-occurrence texture features, all taken
//! over the masked region only.

mod glcm;
mod histogram;
mod normalizer;
mod shape;

use std::io::Write;
use std::path::Path;

pub use glcm::{glcm, glcm_features, Glcm, GlcmFeatures};
pub use histogram::{intensity_stats, IntensityStats};
pub use normalizer::MeasurementNormalizer;
pub use shape::{shape_descriptors, ShapeDescriptors};

use crate::data::{Image, Mask};
use crate::error::{invalid, shape_err, Error, Result};

pub const NUM_MEASUREMENTS: usize = 14;

pub const MEASUREMENT_NAMES: [&str; NUM_MEASUREMENTS] = [
    "area_fraction",
    "perimeter_norm",
    "circularity",
    "elongation",
    "bbox_aspect",
    "intensity_mean",
    "intensity_std",
    "intensity_skewness",
    "intensity_kurtosis_excess",
    "intensity_entropy_bits",
    "glcm_contrast",
    "glcm_correlation",
    "glcm_energy",
    "glcm_homogeneity",
];

pub const ENTROPY_BINS: usize = 32;
pub const GLCM_LEVELS: usize = 16;
pub const GLCM_OFFSETS: [(isize, isize); 2] = [(0, 1), (1, 0)];

/// Fixed-order measurement scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVector(pub [f64; NUM_MEASUREMENTS]);

impl MeasurementVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        MEASUREMENT_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.0[i])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_MEASUREMENTS] = v
            .try_into()
            .map_err(|_| shape_err!("measurement vector needs {NUM_MEASUREMENTS} values, got {}", v.len()))?;
        Ok(Self(arr))
    }
}

/// `ε = E_ext(I, M)`: grayscale is the channel mean.
pub fn extract_measurements(image: &Image, mask: &Mask) -> Result<MeasurementVector> {
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(shape_err!(
            "image {}x{} vs mask {}x{}",
            image.height,
            image.width,
            mask.height,
            mask.width
        ));
    }
    if mask.area() == 0 {
        return Err(invalid!("mask has no lesion pixels"));
    }
    let gray = image.grayscale();
    let shape = shape_descriptors(mask)?;
    let stats = intensity_stats(&gray, mask, ENTROPY_BINS)?;
    let texture = glcm_features(&glcm(&gray, mask, GLCM_LEVELS, &GLCM_OFFSETS)?);
    Ok(MeasurementVector([
        shape.area_fraction,
        shape.perimeter_norm,
        shape.circularity,
        shape.elongation,
        shape.bbox_aspect,
        stats.mean,
        stats.std,
        stats.skewness,
        stats.kurtosis_excess,
        stats.entropy_bits,
        texture.contrast,
        texture.correlation,
        texture.energy,
        texture.homogeneity,
    ]))
}

/// CSV export: `sample_id` followed by the 14 named columns.
pub fn write_measurement_table(path: &Path, rows: &[(String, MeasurementVector)]) -> Result<()> {
    let mut out = String::from("sample_id");
    for n in MEASUREMENT_NAMES {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (id, v) in rows {
        out.push_str(id);
        for x in v.0 {
            out.push_str(&format!(",{x:.16e}"));
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_measurement_table(path: &Path) -> Result<Vec<(String, MeasurementVector)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| invalid!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != NUM_MEASUREMENTS + 1 {
            return Err(parse_err(format!("expected {} columns", NUM_MEASUREMENTS + 1)));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push((rec[0].to_string(), MeasurementVector::from_slice(&vals)?));
    }
    Ok(rows)
}
