use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage};

use super::{Image, Mask};
use crate::error::{invalid, Error, Result};

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Load any 8-bit image as RGB in `[0,1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, 3, data)
}

/// Load a single-channel mask; pixels >= 128 are lesion.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let gray = open(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    Mask::new(h as usize, w as usize, data)
}

fn to_rgb8(img: &Image) -> Result<RgbImage> {
    if img.channels != 3 {
        return Err(invalid!("expected 3 channels, got {}", img.channels));
    }
    let raw = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| invalid!("image buffer size mismatch"))
}

fn to_gray8(mask: &Mask) -> Result<GrayImage> {
    let raw = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .ok_or_else(|| invalid!("mask buffer size mismatch"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    to_rgb8(img)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    to_gray8(mask)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear (triangle filter) resample.
pub fn resize_image(img: &Image, height: usize, width: usize) -> Result<Image> {
    if (img.height, img.width) == (height, width) {
        return Ok(img.clone());
    }
    // Resample in float to avoid a second 8-bit rounding.
    let buf: image::ImageBuffer<Rgb<f32>, Vec<f32>> =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .ok_or_else(|| invalid!("image buffer size mismatch"))?;
    let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
    let data = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::new(height, width, 3, data)
}

/// Nearest-neighbour resample; the output stays binary.
pub fn resize_mask(mask: &Mask, height: usize, width: usize) -> Result<Mask> {
    if (mask.height, mask.width) == (height, width) {
        return Ok(mask.clone());
    }
    let buf: image::ImageBuffer<Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_raw(mask.width as u32, mask.height as u32, mask.data.clone())
            .ok_or_else(|| invalid!("mask buffer size mismatch"))?;
    let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Nearest);
    Mask::new(height, width, out.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..4 * 5 * 3).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        let img = Image::new(4, 5, 3, data).unwrap();
        let p = dir.path().join("a.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, img);

        let mask = Mask::new(4, 5, (0..20).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let p = dir.path().join("m.png");
        save_mask(&mask, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), mask);
    }

    proptest! {
        #[test]
        fn nearest_resize_keeps_masks_binary(
            h in 1usize..40, w in 1usize..40,
            bits in proptest::collection::vec(0u8..2, 1600),
        ) {
            let mask = Mask::new(h, w, bits[..h * w].to_vec()).unwrap();
            let out = resize_mask(&mask, 64, 64).unwrap();
            prop_assert!(out.data.iter().all(|&v| v <= 1));
            prop_assert_eq!((out.height, out.width), (64, 64));
        }
    }

    #[test]
    fn resize_image_changes_shape_and_stays_in_range() {
        let img = Image::new(8, 6, 3, (0..144).map(|i| (i % 11) as f32 / 10.0).collect()).unwrap();
        let out = resize_image(&img, 16, 12).unwrap();
        assert_eq!((out.height, out.width, out.channels), (16, 12, 3));
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
