use crate::data::Mask;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDescriptors {
    pub area_fraction: f64,
    pub perimeter_norm: f64,
    pub circularity: f64,
    pub elongation: f64,
    pub bbox_aspect: f64,
}

/// Shape scores of the lesion support.
///
/// The perimeter counts lesion-pixel edges that face a background pixel or
/// the frame border (4-connectivity). Second moments treat each pixel as a
/// unit square, which adds 1/12 to both axis variances and keeps elongation
/// positive for one-pixel-wide lesions.
pub fn shape_descriptors(mask: &Mask) -> Result<ShapeDescriptors> {
    let (h, w) = (mask.height, mask.width);
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    let mut area = 0u64;
    let mut perimeter = 0u64;
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            area += 1;
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            let outside = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < h && cc < w => !mask.get(rr, cc),
                _ => true,
            };
            perimeter += u64::from(outside(r.checked_sub(1), Some(c)));
            perimeter += u64::from(outside(Some(r + 1), Some(c)));
            perimeter += u64::from(outside(Some(r), c.checked_sub(1)));
            perimeter += u64::from(outside(Some(r), Some(c + 1)));
        }
    }
    if area == 0 {
        return Err(invalid!("mask has no lesion pixels"));
    }

    // Exact integer moments relative to the bounding-box corner.
    let (mut sr, mut sc, mut srr, mut scc, mut src) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for r in rmin..=rmax {
        for c in cmin..=cmax {
            if mask.get(r, c) {
                let (y, x) = ((r - rmin) as i128, (c - cmin) as i128);
                sr += y;
                sc += x;
                srr += y * y;
                scc += x * x;
                src += y * x;
            }
        }
    }
    let n = area as i128;
    let n2 = (n * n) as f64;
    let var_r = (n * srr - sr * sr) as f64 / n2 + 1.0 / 12.0;
    let var_c = (n * scc - sc * sc) as f64 / n2 + 1.0 / 12.0;
    let cov = (n * src - sr * sc) as f64 / n2;
    let half_sum = 0.5 * (var_r + var_c);
    let disc = (0.25 * (var_r - var_c).powi(2) + cov * cov).sqrt();
    let lambda_major = half_sum + disc;
    let lambda_minor = (half_sum - disc).max(0.0);
    let elongation = (lambda_minor / lambda_major).sqrt().min(1.0);

    let bh = (rmax - rmin + 1) as f64;
    let bw = (cmax - cmin + 1) as f64;
    let area_f = area as f64;
    let perim_f = perimeter as f64;
    Ok(ShapeDescriptors {
        area_fraction: area_f / (h * w) as f64,
        perimeter_norm: perim_f / (2 * (h + w)) as f64,
        circularity: 4.0 * std::f64::consts::PI * area_f / (perim_f * perim_f),
        elongation,
        bbox_aspect: bh.min(bw) / bh.max(bw),
    })
}
