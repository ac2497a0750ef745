use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Device, D};

use super::fid::FeatureSet;
use crate::data::{load_image, Image};
use crate::error::{Error, Result};
use crate::nn::{images_to_tensor, FrozenConvStack};

pub const DEFAULT_EXTRACTOR_SEED: u64 = 1234;
const WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Frozen, seeded conv stack; features are the spatial means of every layer's
/// activations, concatenated.
pub struct FeatureExtractor {
    stack: FrozenConvStack,
    seed: u64,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            stack: FrozenConvStack::new(seed, 3, &WIDTHS, DType::F32, &Device::Cpu)?,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        WIDTHS.iter().sum()
    }

    /// Versioned name; FIDs are only comparable under the same id.
    pub fn id(&self) -> String {
        format!("randconv-v1-s{}-d{}", self.seed, self.dim())
    }

    /// Images in a batch must share a resolution.
    pub fn extract(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let x = images_to_tensor(chunk, DType::F32, &Device::Cpu)?;
            let feats = self.stack.features(&x)?;
            let pooled = feats
                .iter()
                .map(|f| f.mean(D::Minus1)?.mean(D::Minus1))
                .collect::<candle_core::Result<Vec<_>>>()?;
            let cat = candle_core::Tensor::cat(&pooled, 1)?.to_dtype(DType::F64)?;
            out.extend(cat.to_vec2::<f64>()?);
        }
        Ok(out)
    }

    pub fn feature_set(&self, ids: Vec<String>, labels: Vec<Option<usize>>, images: &[&Image]) -> Result<FeatureSet> {
        Ok(FeatureSet {
            extractor_id: self.id(),
            sample_ids: ids,
            labels,
            rows: self.extract(images)?,
        })
    }
}

/// Skipped file and the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportSkip {
    pub file: String,
    pub reason: String,
}

/// Extract features for every PNG in `image_dir` (sorted by name) and write
/// `sample_id,label,f0..` rows to `out_csv`. Labels come from `labels`
/// keyed by file stem, blank when unknown.
pub fn export_features(
    image_dir: &Path,
    extractor: &FeatureExtractor,
    labels: Option<&HashMap<String, usize>>,
    out_csv: &Path,
) -> Result<(FeatureSet, Vec<ExportSkip>)> {
    let mut files: Vec<_> = std::fs::read_dir(image_dir)
        .map_err(|e| Error::io(image_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let mut set = FeatureSet {
        extractor_id: extractor.id(),
        sample_ids: Vec::new(),
        labels: Vec::new(),
        rows: Vec::new(),
    };
    let mut skipped = Vec::new();
    for path in files {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match load_image(&path) {
            Ok(img) => {
                set.rows.extend(extractor.extract(&[&img])?);
                set.labels.push(labels.and_then(|m| m.get(&stem).copied()));
                set.sample_ids.push(stem);
            }
            Err(e) => skipped.push(ExportSkip {
                file: path.display().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset(format!("no readable images in {}", image_dir.display())));
    }
    write_feature_csv(&set, out_csv)?;
    Ok((set, skipped))
}

pub fn write_feature_csv(set: &FeatureSet, path: &Path) -> Result<()> {
    let mut s = String::from("sample_id,label");
    for j in 0..set.dim() {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for ((id, label), row) in set.sample_ids.iter().zip(&set.labels).zip(&set.rows) {
        s.push_str(id);
        s.push(',');
        if let Some(l) = label {
            let _ = write!(s, "{l}");
        }
        for v in row {
            let _ = write!(s, ",{v:.9e}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
