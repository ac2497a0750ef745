use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{load_image, load_mask, resize_image, resize_mask, save_image, save_mask};
use super::{DatasetManifest, ManifestEntry};
use crate::error::{invalid, Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Appended to an image stem to find its mask (`ISIC_001` + `_segmentation`).
    pub mask_suffix: String,
    /// Fixed class order. When absent, the sorted distinct labels are used.
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSkip {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub skipped: Vec<IngestSkip>,
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let Some(ext) = ext else { continue };
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| invalid!("{}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: "expected `sample_id,label`".into(),
            });
        }
        out.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
    }
    Ok(out)
}

/// Pair images with same-stem masks and label rows, resample both to
/// `resolution` (bilinear / nearest) and write them with a manifest under
/// `out_dir`. Samples missing a mask or label are skipped and reported.
pub fn ingest_dataset(
    image_dir: &Path,
    mask_dir: &Path,
    label_table: &Path,
    resolution: (usize, usize),
    out_dir: &Path,
    options: &IngestOptions,
) -> Result<(DatasetManifest, IngestReport)> {
    let images = list_images(image_dir)?;
    let masks = list_images(mask_dir)?;
    let labels = read_labels(label_table)?;

    let class_names: Vec<String> = match &options.class_names {
        Some(names) => names.clone(),
        None => labels
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut report = IngestReport::default();
    let mut entries = Vec::new();
    let (h, w) = resolution;
    for (id, image_path) in &images {
        let skip = |reason: String| IngestSkip {
            sample_id: id.clone(),
            reason,
        };
        let Some(mask_path) = masks.get(&format!("{id}{}", options.mask_suffix)) else {
            report.skipped.push(skip("missing mask".into()));
            continue;
        };
        let Some(label_name) = labels.get(id) else {
            report.skipped.push(skip("missing label".into()));
            continue;
        };
        let label = match class_index.get(label_name.as_str()) {
            Some(&l) => l,
            None => match label_name.parse::<usize>() {
                Ok(l) if l < class_names.len() => l,
                _ => {
                    report.skipped.push(skip(format!("unknown label `{label_name}`")));
                    continue;
                }
            },
        };
        let loaded = load_image(image_path).and_then(|img| Ok((img, load_mask(mask_path)?)));
        let (img, mask) = match loaded {
            Ok(v) => v,
            Err(e) => {
                report.skipped.push(skip(format!("unreadable: {e}")));
                continue;
            }
        };
        let img = resize_image(&img, h, w)?;
        let mask = resize_mask(&mask, h, w)?;
        let image_rel = PathBuf::from(format!("images/{id}.png"));
        let mask_rel = PathBuf::from(format!("masks/{id}.png"));
        save_image(&img, &out_dir.join(&image_rel))?;
        save_mask(&mask, &out_dir.join(&mask_rel))?;
        entries.push(ManifestEntry {
            sample_id: id.clone(),
            image: image_rel,
            mask: mask_rel,
            label,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no complete image/mask/label triples under {}",
            image_dir.display()
        )));
    }
    report.accepted = entries.len();
    let manifest = DatasetManifest::new(entries, class_names, resolution, out_dir)?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok((manifest, report))
}
