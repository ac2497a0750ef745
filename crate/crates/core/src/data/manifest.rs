//! Line-delimited JSON manifest.
//!
//! ```text
//! {"class_names":["AKIEC","BCC"],"resolution":[64,64]}
//! {"sample_id":"a001","image":"images/a001.png","mask":"masks/a001.png","label":0}
//! ```
//!
//! Relative paths resolve against the directory holding the manifest file.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_image, load_mask, ImageSample};
use crate::error::{invalid, shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    class_names: Vec<String>,
    resolution: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub resolution: (usize, usize),
    /// Directory relative entry paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest, sorting entries by `sample_id` and checking the
    /// uniqueness and label-range invariants.
    pub fn new(
        mut entries: Vec<ManifestEntry>,
        class_names: Vec<String>,
        resolution: (usize, usize),
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(invalid!("duplicate sample_id `{}`", e.sample_id));
            }
            if e.label >= class_names.len() {
                return Err(invalid!(
                    "sample `{}` has label {} but only {} classes exist",
                    e.sample_id,
                    e.label,
                    class_names.len()
                ));
            }
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(invalid!("resolution {resolution:?} is empty"));
        }
        Ok(Self {
            entries,
            class_names,
            resolution,
            root: root.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Same classes and root, different entries.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Result<Self> {
        Self::new(
            entries,
            self.class_names.clone(),
            self.resolution,
            self.root.clone(),
        )
    }

    pub fn load_sample(&self, index: usize) -> Result<ImageSample> {
        let e = &self.entries[index];
        let image = load_image(&self.resolve(&e.image))?;
        let mask = load_mask(&self.resolve(&e.mask))?;
        if (image.height, image.width) != self.resolution {
            return Err(shape_err!(
                "`{}` is {}x{}, manifest resolution is {:?}",
                e.sample_id,
                image.height,
                image.width,
                self.resolution
            ));
        }
        ImageSample::new(e.sample_id.clone(), image, mask, e.label)
    }

    pub fn load_all(&self) -> Result<Vec<ImageSample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }

    /// Write the manifest. Entry paths are rewritten relative to the file's
    /// directory when they live under it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let dir_abs = absolutize(&dir);
        let mut out = Vec::new();
        let header = Header {
            class_names: self.class_names.clone(),
            resolution: self.resolution,
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| invalid!("{e}"))?;
        out.push(b'\n');
        for e in &self.entries {
            let rel = |p: &Path| -> PathBuf {
                let abs = absolutize(&self.resolve(p));
                abs.strip_prefix(&dir_abs)
                    .map(Path::to_path_buf)
                    .unwrap_or(abs)
            };
            let rec = ManifestEntry {
                sample_id: e.sample_id.clone(),
                image: rel(&e.image),
                mask: rel(&e.mask),
                label: e.label,
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| invalid!("{e}"))?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            msg,
        };
        let (hl, header_line) = lines
            .next()
            .ok_or_else(|| Error::EmptyDataset(format!("{} has no header", path.display())))?;
        let header: Header =
            serde_json::from_str(header_line).map_err(|e| parse_err(hl, e.to_string()))?;
        let entries = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i, e.to_string())))
            .collect::<Result<Vec<ManifestEntry>>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, header.class_names, header.resolution, root)
    }
}

fn absolutize(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: usize) -> ManifestEntry {
        ManifestEntry {
            sample_id: id.into(),
            image: format!("images/{id}.png").into(),
            mask: format!("masks/{id}.png").into(),
            label,
        }
    }

    #[test]
    fn entries_sorted_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            vec![entry("b", 1), entry("a", 0)],
            vec!["x".into(), "y".into()],
            (64, 64),
            dir.path(),
        )
        .unwrap();
        assert_eq!(m.entries[0].sample_id, "a");
        let p = dir.path().join("manifest.jsonl");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"class_names\":[\"x\",\"y\"],\"resolution\":[64,64]}\n"));
        assert!(text.contains("\"image\":\"images/a.png\""));
        let back = DatasetManifest::load(&p).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.class_names, m.class_names);
    }

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        let names = vec!["x".to_string()];
        assert!(DatasetManifest::new(vec![entry("a", 0), entry("a", 0)], names.clone(), (8, 8), ".").is_err());
        assert!(DatasetManifest::new(vec![entry("a", 1)], names, (8, 8), ".").is_err());
    }
}
