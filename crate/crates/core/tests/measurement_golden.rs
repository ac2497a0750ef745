//! Analytic measurement cases plus translation and mask-locality fuzzing.

use std::f64::consts::PI;

use lfvar_core::data::{Image, Mask};
use lfvar_core::measurements::{
    extract_measurements, glcm, glcm_features, MeasurementNormalizer, MeasurementVector, MEASUREMENT_NAMES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn get(v: &MeasurementVector, name: &str) -> f64 {
    v.get(name).unwrap()
}

#[test]
fn constant_image_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(4..24), rng.random_range(4..24));
        let value = rng.random_range(0.0..1.0f32);
        let img = Image::filled(h, w, 3, value);
        let mut bits: Vec<u8> = (0..h * w).map(|_| u8::from(rng.random_bool(0.5))).collect();
        bits[rng.random_range(0..h * w)] = 1;
        let m = extract_measurements(&img, &Mask::new(h, w, bits).unwrap()).unwrap();
        assert_eq!(get(&m, "intensity_std"), 0.0);
        assert_eq!(get(&m, "intensity_skewness"), 0.0);
        assert_eq!(get(&m, "intensity_kurtosis_excess"), 0.0);
        assert_eq!(get(&m, "intensity_entropy_bits"), 0.0);
        assert_eq!(get(&m, "glcm_contrast"), 0.0);
        assert_eq!(get(&m, "glcm_energy"), 1.0);
        assert_eq!(get(&m, "glcm_homogeneity"), 1.0);
        assert_eq!(get(&m, "glcm_correlation"), 0.0);
        assert!((get(&m, "intensity_mean") - f64::from(value)).abs() < 1e-7);
    }
}

#[test]
fn full_frame_square_circularity() {
    for n in [4, 16, 64] {
        let img = Image::filled(n, n, 3, 0.5);
        let m = extract_measurements(&img, &Mask::filled(n, n, 1)).unwrap();
        assert!((get(&m, "circularity") - PI / 4.0).abs() <= 0.02);
        assert_eq!(get(&m, "area_fraction"), 1.0);
        assert_eq!(get(&m, "bbox_aspect"), 1.0);
        // 4n boundary edges over 2(H+W)
        assert_eq!(get(&m, "perimeter_norm"), 1.0);
    }
}

#[test]
fn centered_disc_area_fraction() {
    for n in [32, 64, 128] {
        let r = n as f64 / 4.0;
        let c = (n as f64 - 1.0) / 2.0;
        let mut bits = vec![0u8; n * n];
        let mut count = 0usize;
        for y in 0..n {
            for x in 0..n {
                if (y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= r * r {
                    bits[y * n + x] = 1;
                    count += 1;
                }
            }
        }
        let m = extract_measurements(&Image::filled(n, n, 1, 0.3), &Mask::new(n, n, bits).unwrap()).unwrap();
        let af = get(&m, "area_fraction");
        assert_eq!(af, count as f64 / (n * n) as f64);
        assert!((af - PI / 16.0).abs() <= 0.01, "n={n}: {af}");
        assert!(get(&m, "elongation") > 0.99);
    }
}

#[test]
fn two_by_two_glcm_by_hand() {
    let gray = [0.0, 0.0, 1.0, 1.0];
    let g = glcm(&gray, &Mask::filled(2, 2, 1), 2, &[(0, 1)]).unwrap();
    assert!(!g.degenerate);
    assert_eq!(g.matrix, vec![0.5, 0.0, 0.0, 0.5]);
    let f = glcm_features(&g);
    assert_eq!(f.contrast, 0.0);
    assert_eq!(f.energy, 0.5);
    assert_eq!(f.homogeneity, 1.0);
    assert_eq!(f.correlation, 1.0);
}

#[test]
fn glcm_mask_excluding_one_pair() {
    // Row 0 pair (0,0) stays; row 1 pair loses its right pixel.
    let gray = [0.0, 0.0, 1.0, 1.0];
    let mask = Mask::new(2, 2, vec![1, 1, 1, 0]).unwrap();
    let g = glcm(&gray, &mask, 2, &[(0, 1)]).unwrap();
    assert_eq!(g.matrix, vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn glcm_without_pairs_is_flagged_uniform_diagonal() {
    let mask = Mask::new(3, 3, vec![1, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
    let g = glcm(&[0.2; 9], &mask, 4, &[(0, 1), (1, 0)]).unwrap();
    assert!(g.degenerate);
    assert_eq!(g.matrix.iter().sum::<f64>(), 1.0);
    for i in 0..4 {
        assert_eq!(g.at(i, i), 0.25);
    }
}

#[test]
fn empty_mask_is_an_error() {
    let err = extract_measurements(&Image::filled(4, 4, 3, 0.1), &Mask::filled(4, 4, 0));
    assert!(err.is_err());
}

#[test]
fn normalizer_two_point_case() {
    let v = |a: f64, b: f64| {
        let mut x = [0.0; 14];
        x[0] = a;
        x[1] = b;
        MeasurementVector(x)
    };
    let n = MeasurementNormalizer::fit(&[v(1.0, 2.0), v(3.0, 4.0)]).unwrap();
    let out = n.normalize(&v(3.0, 4.0));
    assert_eq!(out.0[0], 1.0);
    assert_eq!(out.0[1], 1.0);
    // zero-variance dims keep std 1
    assert_eq!(out.0[2], 0.0);
    assert_eq!(n.normalize(&v(2.0, 3.0)).0, [0.0; 14]);
}

fn random_case(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Image, Mask) {
    let data: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let img = Image::new(h, w, 3, data).unwrap();
    let kind = rng.random_range(0..4);
    let bits: Vec<u8> = match kind {
        0 => {
            let mut b = vec![0u8; h * w];
            b[rng.random_range(0..h * w)] = 1;
            b
        }
        1 => vec![1; h * w],
        2 => (0..h * w).map(|_| u8::from(rng.random_bool(0.4))).collect(),
        _ => {
            let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
            let r = rng.random_range(1.0..=(h.min(w) as f64));
            let mut b: Vec<u8> = (0..h * w)
                .map(|i| u8::from(((i / w) as f64 - cy).powi(2) + ((i % w) as f64 - cx).powi(2) <= r * r))
                .collect();
            b[(cy as usize) * w + cx as usize] = 1;
            b
        }
    };
    let mut bits = bits;
    if bits.iter().all(|&b| b == 0) {
        bits[rng.random_range(0..h * w)] = 1;
    }
    (img, Mask::new(h, w, bits).unwrap())
}

fn close(a: &MeasurementVector, b: &MeasurementVector) -> Option<&'static str> {
    for (i, name) in MEASUREMENT_NAMES.iter().enumerate() {
        let (x, y) = (a.0[i], b.0[i]);
        if (x - y).abs() > 1e-9 * x.abs().max(1.0) {
            return Some(name);
        }
    }
    None
}

#[test]
fn fuzz_finite_and_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let (img, mask) = random_case(&mut rng, h, w);
        let m = extract_measurements(&img, &mask).unwrap();
        assert!(m.0.iter().all(|v| v.is_finite()), "case {case}: {m:?}");
        let af = get(&m, "area_fraction");
        assert!(af > 0.0 && af <= 1.0);
        assert!(get(&m, "circularity") > 0.0 && get(&m, "circularity") <= 1.0 + 0.3);
        for k in ["elongation", "glcm_energy", "glcm_homogeneity"] {
            let v = get(&m, k);
            assert!(v > 0.0 && v <= 1.0, "case {case}: {k} = {v}");
        }
        assert!(get(&m, "intensity_entropy_bits") >= 0.0);
    }
}

#[test]
fn fuzz_translation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut violations = Vec::new();
    for case in 0..1000 {
        // Lesion content lives in a patch placed at two interior offsets.
        let (ph, pw) = (rng.random_range(1..10), rng.random_range(1..10));
        let (patch, pmask) = random_case(&mut rng, ph, pw);
        let (h, w) = (ph + rng.random_range(2..10), pw + rng.random_range(2..10));
        let place = |oy: usize, ox: usize| {
            let mut img = Image::filled(h, w, 3, 0.0);
            let mut bits = vec![0u8; h * w];
            for y in 0..ph {
                for x in 0..pw {
                    for c in 0..3 {
                        img.set(y + oy, x + ox, c, patch.get(y, x, c));
                    }
                    bits[(y + oy) * w + x + ox] = pmask.data[y * pw + x];
                }
            }
            (img, Mask::new(h, w, bits).unwrap())
        };
        let (a_img, a_mask) = place(1, 1);
        let (b_img, b_mask) = place(h - ph - 1, w - pw - 1);
        let a = extract_measurements(&a_img, &a_mask).unwrap();
        let b = extract_measurements(&b_img, &b_mask).unwrap();
        if let Some(name) = close(&a, &b) {
            violations.push((case, name));
        }
    }
    assert!(violations.is_empty(), "{} violations, first {:?}", violations.len(), violations.first());
}

#[test]
fn fuzz_off_mask_pixels_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut violations = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let (img, mask) = random_case(&mut rng, h, w);
        let mut other = img.clone();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    for c in 0..3 {
                        other.set(y, x, c, rng.random_range(0.0..1.0));
                    }
                }
            }
        }
        if extract_measurements(&img, &mask).unwrap() != extract_measurements(&other, &mask).unwrap() {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn intensity_shift_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let (h, w) = (rng.random_range(2..16), rng.random_range(2..16));
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(0.0..0.5)).collect();
        let img = Image::new(h, w, 3, data.clone()).unwrap();
        let shifted = Image::new(h, w, 3, data.iter().map(|v| v + 0.25).collect()).unwrap();
        let mask = Mask::filled(h, w, 1);
        let a = extract_measurements(&img, &mask).unwrap();
        let b = extract_measurements(&shifted, &mask).unwrap();
        assert!((get(&b, "intensity_mean") - get(&a, "intensity_mean") - 0.25).abs() < 1e-6);
        for k in ["intensity_std", "intensity_skewness", "intensity_kurtosis_excess"] {
            assert!((get(&a, k) - get(&b, k)).abs() < 1e-4, "{k}");
        }
    }
}
