//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use lfvar_core::tokenizer::Scale;

/// Latent as `[c][y][x]`.
pub type Grid = Vec<Vec<Vec<f64>>>;

fn window(i: usize, n: usize, m: usize) -> std::ops::Range<usize> {
    (i * n / m)..((i + 1) * n).div_ceil(m)
}

fn area_down(g: &Grid, (hk, wk): Scale) -> Grid {
    let (h, w) = (g[0].len(), g[0][0].len());
    g.iter()
        .map(|ch| {
            (0..hk)
                .map(|i| {
                    (0..wk)
                        .map(|j| {
                            let (ry, rx) = (window(i, h, hk), window(j, w, wk));
                            let cnt = (ry.len() * rx.len()) as f64;
                            ry.flat_map(|y| rx.clone().map(move |x| (y, x)))
                                .map(|(y, x)| ch[y][x])
                                .sum::<f64>()
                                / cnt
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Bilinear interpolation weight of source index `s` for output `o`.
fn lerp_weights(o: usize, n_src: usize, n_out: usize) -> [(usize, f64); 2] {
    let pos = ((o as f64 + 0.5) * n_src as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(n_src - 1);
    let i1 = (i0 + 1).min(n_src - 1);
    let t = pos - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

fn bilinear_up(g: &Grid, (h, w): Scale) -> Grid {
    let (hk, wk) = (g[0].len(), g[0][0].len());
    if (hk, wk) == (h, w) {
        return g.clone();
    }
    g.iter()
        .map(|ch| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let mut v = 0.0;
                            for (sy, wy) in lerp_weights(y, hk, h) {
                                for (sx, wx) in lerp_weights(x, wk, w) {
                                    v += wy * wx * ch[sy][sx];
                                }
                            }
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn nearest(z: &[f64], codes: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, e) in codes.iter().enumerate() {
        let d: f64 = z.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Residual cascade with area-average downsampling, bilinear upsampling and
/// exhaustive nearest-code search.
pub fn brute_force(f: &Grid, codes: &[Vec<f64>], scales: &[Scale]) -> (Vec<Vec<usize>>, Grid) {
    let c = f.len();
    let full = (f[0].len(), f[0][0].len());
    let mut residual = f.clone();
    let mut f_hat = vec![vec![vec![0.0; full.1]; full.0]; c];
    let mut all = Vec::new();
    for &(hk, wk) in scales {
        let z = if (hk, wk) == full { residual.clone() } else { area_down(&residual, (hk, wk)) };
        let mut ids = Vec::with_capacity(hk * wk);
        let mut q = vec![vec![vec![0.0; wk]; hk]; c];
        for i in 0..hk {
            for j in 0..wk {
                let v: Vec<f64> = (0..c).map(|ch| z[ch][i][j]).collect();
                let k = nearest(&v, codes);
                ids.push(k);
                for ch in 0..c {
                    q[ch][i][j] = codes[k][ch];
                }
            }
        }
        let up = bilinear_up(&q, full);
        for ch in 0..c {
            for y in 0..full.0 {
                for x in 0..full.1 {
                    f_hat[ch][y][x] += up[ch][y][x];
                    residual[ch][y][x] -= up[ch][y][x];
                }
            }
        }
        all.push(ids);
    }
    (all, f_hat)
}

/// Largest relative error between `grad` and central differences of `f`
/// with step `h`.
pub fn worst_fd_error(x: &[f64], grad: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}
