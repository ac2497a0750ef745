//! Synthetic "lesion" dataset: one rotated elliptical blob per image on a
//! noisy skin-toned background. Colour, texture and size statistics are a
//! deterministic function of the class id and the seed.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_image, save_mask, DatasetManifest, Image, ManifestEntry, Mask};
use crate::error::{invalid, Error, Result};

pub const HAM_CLASS_NAMES: [&str; 7] = ["AKIEC", "BCC", "BKL", "DF", "MEL", "NV", "VASC"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub resolution: (usize, usize),
    pub seed: u64,
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid!("toy dataset needs at least 2 classes"));
        }
        if self.samples_per_class < 1 {
            return Err(invalid!("toy dataset needs at least 1 sample per class"));
        }
        if self.resolution.0 < 16 || self.resolution.1 < 16 {
            return Err(invalid!("toy resolution {:?} is below 16x16", self.resolution));
        }
        Ok(())
    }

    /// Seven classes take the dermatology category names; other counts use
    /// `class_<i>`.
    pub fn class_names(&self) -> Vec<String> {
        if self.num_classes == HAM_CLASS_NAMES.len() {
            HAM_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.num_classes).map(|c| format!("class_{c}")).collect()
        }
    }
}

/// Inclusive range of lesion area fraction for a class.
pub fn toy_area_range(class: usize) -> (f64, f64) {
    let lo = 0.04 + 0.035 * (class % 4) as f64;
    (lo, lo + 0.08)
}

const LESION_PALETTE: [[f32; 3]; 7] = [
    [0.62, 0.36, 0.30],
    [0.78, 0.52, 0.55],
    [0.50, 0.34, 0.22],
    [0.66, 0.46, 0.36],
    [0.24, 0.14, 0.12],
    [0.42, 0.26, 0.18],
    [0.70, 0.16, 0.26],
];

struct ClassStyle {
    color: [f32; 3],
    texture_std: f32,
    core_darkening: f32,
    min_aspect: f64,
}

fn class_style(class: usize, seed: u64) -> ClassStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class as u64, u64::MAX));
    let base = LESION_PALETTE[class % LESION_PALETTE.len()];
    // Classes beyond the palette get a progressively shifted hue.
    let shift = (class / LESION_PALETTE.len()) as f32 * 0.12;
    let color = [0, 1, 2].map(|ch| {
        let jitter: f32 = rng.random_range(-0.02..0.02);
        let s = if ch == 2 { shift } else { -shift * 0.5 };
        (base[ch] + s + jitter).clamp(0.05, 0.95)
    });
    ClassStyle {
        color,
        texture_std: 0.015 + 0.02 * (class % 3) as f32,
        core_darkening: 0.1 + 0.12 * ((class + 1) % 3) as f32,
        min_aspect: 0.45 + 0.1 * (class % 2) as f64,
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut h = a ^ 0x51_7c_c1_b7_27_22_0a_95;
    for v in [b, c] {
        h = (h ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 31;
    }
    h
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalised squared radius of a point; < 1 means inside.
    fn radius2(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

fn draw_ellipse(rng: &mut ChaCha8Rng, h: usize, w: usize, class: usize, style: &ClassStyle) -> Result<(Ellipse, Mask)> {
    let (lo, hi) = toy_area_range(class);
    for _ in 0..200 {
        let target = rng.random_range(lo + 0.01..hi - 0.01);
        let aspect = rng.random_range(style.min_aspect..1.0);
        let area_px = target * (h * w) as f64;
        let a = (area_px / (std::f64::consts::PI * aspect)).sqrt();
        let b = a * aspect;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let ex = (a * a * c * c + b * b * s * s).sqrt();
        let ey = (a * a * s * s + b * b * c * c).sqrt();
        if 2.0 * ex + 2.0 >= w as f64 || 2.0 * ey + 2.0 >= h as f64 {
            continue;
        }
        let cx = rng.random_range(ex + 1.0..w as f64 - ex - 1.0);
        let cy = rng.random_range(ey + 1.0..h as f64 - ey - 1.0);
        let e = Ellipse { cy, cx, a, b, theta };
        let data: Vec<u8> = (0..h * w)
            .map(|i| u8::from(e.radius2((i / w) as f64 + 0.5, (i % w) as f64 + 0.5) < 1.0))
            .collect();
        let mask = Mask::new(h, w, data)?;
        let frac = mask.area() as f64 / (h * w) as f64;
        if frac >= lo && frac <= hi {
            return Ok((e, mask));
        }
    }
    Err(invalid!("could not place a class-{class} lesion in a {h}x{w} frame"))
}

fn render_sample(spec: &ToyDatasetSpec, class: usize, index: usize) -> Result<(Image, Mask)> {
    let (h, w) = spec.resolution;
    let style = class_style(class, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, class as u64, index as u64));
    let (ellipse, mask) = draw_ellipse(&mut rng, h, w, class, &style)?;

    let skin = [0.86f32, 0.68, 0.58].map(|v| v + rng.random_range(-0.03f32..0.03));
    let bg_noise = Normal::new(0.0f32, 0.02).expect("valid std");
    let tex_noise = Normal::new(0.0f32, style.texture_std).expect("valid std");
    let light_dir: f32 = rng.random_range(-1.0..1.0);

    let mut img = Image::filled(h, w, 3, 0.0);
    for row in 0..h {
        for col in 0..w {
            let shade = 1.0 + 0.04 * light_dir * ((col as f32 / w as f32) - 0.5);
            let inside = mask.get(row, col);
            let r2 = ellipse.radius2(row as f64 + 0.5, col as f64 + 0.5) as f32;
            for ch in 0..3 {
                let v = if inside {
                    let core = 1.0 - style.core_darkening * (1.0 - r2);
                    style.color[ch] * core * shade + tex_noise.sample(&mut rng)
                } else {
                    skin[ch] * shade + bg_noise.sample(&mut rng)
                };
                img.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok((img, mask))
}

/// Render the dataset under `out_dir` (`images/`, `masks/`, `labels.csv`,
/// `manifest.jsonl`) and return its manifest.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let names = spec.class_names();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut labels = String::from("sample_id,label\n");
    for (class, name) in names.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let id = format!("{}_{i:04}", name.to_lowercase());
            let (img, mask) = render_sample(spec, class, i)?;
            let image_rel = format!("images/{id}.png");
            let mask_rel = format!("masks/{id}.png");
            save_image(&img, &out_dir.join(&image_rel))?;
            save_mask(&mask, &out_dir.join(&mask_rel))?;
            labels.push_str(&format!("{id},{name}\n"));
            entries.push(ManifestEntry {
                sample_id: id,
                image: image_rel.into(),
                mask: mask_rel.into(),
                label: class,
            });
        }
    }
    let labels_path = out_dir.join("labels.csv");
    std::fs::File::create(&labels_path)
        .and_then(|mut f| f.write_all(labels.as_bytes()))
        .map_err(|e| Error::io(&labels_path, e))?;
    let manifest = DatasetManifest::new(entries, names, spec.resolution, out_dir)?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
