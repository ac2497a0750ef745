//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! Criteria 1-7 are property checks against independent oracles; 8-10 drive
//! the `lfvar` pipeline on the built-in toy dataset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lfvar_cli::ablation::AblationReport;
use lfvar_cli::pipeline::EvaluationReport;
use lfvar_core::candle::{DType, Device, Tensor, Var};
use lfvar_core::conditioning::{standalone_encoder, MeasurementCodebook};
use lfvar_core::data::{Image, Mask};
use lfvar_core::eval::{compute_is, fid_from_rows};
use lfvar_core::measurements::{extract_measurements, glcm, glcm_features, NUM_MEASUREMENTS};
use lfvar_core::tokenizer::{lesion_focus_term, vqvae_loss, Codebook, LatentGrid, LossHeads, LossInputs, MultiScaleQuantizer, Scale};
use lfvar_core::var::{scale_offsets, ConditionMode, VarConfig, VarModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/mod.rs"]
mod support;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn quantizer_oracle() -> Check {
    let start = Instant::now();
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let scales: [Scale; 3] = [(1, 1), (2, 2), (4, 4)];
    let q = MultiScaleQuantizer::new(&scales, (4, 4), DType::F64, &dev).unwrap();
    let cases = 120;
    for case in 0..cases {
        let vocab = rng.random_range(2..=4);
        let codes: Vec<Vec<f64>> = (0..vocab).map(|_| rand_vec(&mut rng, 2, -1.0, 1.0)).collect();
        let f: support::Grid = (0..2)
            .map(|_| (0..4).map(|_| rand_vec(&mut rng, 4, -1.5, 1.5)).collect())
            .collect();
        let (want, _) = support::brute_force(&f, &codes, &scales);
        let flat: Vec<f64> = f.iter().flatten().flatten().copied().collect();
        let grid = LatentGrid::new(tensor(&flat, &[2, 4, 4])).unwrap();
        let cb = Codebook::from_rows(&codes, DType::F64, &dev).unwrap();
        let (pyr, _) = q.quantize_multiscale(&grid, &cb).unwrap();
        for (k, ids) in want.iter().enumerate() {
            let got: Vec<usize> = pyr.grids[k].iter().map(|&v| v as usize).collect();
            ensure(&got == ids, || format!("case {case} scale {k}: {got:?} vs {ids:?}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{cases} random 4x4x2 latents, exact index agreement, {secs:.2}s"))
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shapes: Vec<[usize; 4]> = [(1, 1), (2, 2), (4, 4)].iter().map(|&(h, w)| [2, 3, h, w]).collect();
        let real: Vec<Tensor> = shapes.iter().map(|s| tensor(&rand_vec(&mut rng, s.iter().product(), -2.0, 2.0), s)).collect();
        let recon: Vec<Tensor> = shapes.iter().map(|s| tensor(&rand_vec(&mut rng, s.iter().product(), -2.0, 2.0), s)).collect();
        let masks = |v: f64| -> Vec<Tensor> {
            shapes.iter().map(|s| Tensor::full(v, (s[0], 1, s[2], s[3]), &Device::Cpu).unwrap()).collect()
        };
        let lesion = lesion_focus_term(&real, &recon, &masks(1.0)).unwrap().to_scalar::<f64>().unwrap();
        ensure(lesion == 0.0, || format!("all-lesion term {lesion}"))?;
        let bg = lesion_focus_term(&real, &recon, &masks(0.0)).unwrap().to_scalar::<f64>().unwrap();
        let mse: f64 = real
            .iter()
            .zip(&recon)
            .map(|(a, b)| {
                let x: Vec<f64> = a.flatten_all().unwrap().to_vec1().unwrap();
                let y: Vec<f64> = b.flatten_all().unwrap().to_vec1().unwrap();
                x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64
            })
            .sum();
        ensure((bg - mse).abs() <= 1e-12 * mse, || format!("all-background {bg} vs MSE {mse}"))?;

        let img = tensor(&rand_vec(&mut rng, 2 * 3 * 8 * 8, 0.0, 1.0), &[2, 3, 8, 8]);
        let rec = tensor(&rand_vec(&mut rng, 2 * 3 * 8 * 8, 0.0, 1.0), &[2, 3, 8, 8]);
        let f = tensor(&rand_vec(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0), &[2, 3, 4, 4]);
        let fh = tensor(&rand_vec(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0), &[2, 3, 4, 4]);
        let logits = tensor(&rand_vec(&mut rng, 8, -1.0, 1.0), &[2, 1, 2, 2]);
        let m = masks(0.0);
        let inputs = LossInputs {
            image: &img,
            recon: &rec,
            f: &f,
            f_hat: &fh,
            real_grids: &real,
            recon_grids: &recon,
            masks: &m,
        };
        let heads = LossHeads {
            perceptual: None,
            fake_logits: Some(&logits),
        };
        let (lp, lg) = (rng.random_range(0.0..2.0), rng.random_range(0.0..1.0));
        let (_, b) = vqvae_loss(&inputs, &heads, lp, lg).unwrap();
        worst = worst.max((b.total - b.weighted_total(lp, lg)).abs());
    }
    ensure(worst <= 1e-8, || format!("total decomposition off by {worst:e}"))?;
    Ok(format!("100 instances; decomposition error {worst:.1e}"))
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = 1e-6;
    let img = rand_vec(&mut rng, 3 * 64, 0.0, 1.0);
    let x0 = rand_vec(&mut rng, 3 * 64, 0.0, 1.0);
    let real = rand_vec(&mut rng, 2 * 64, -1.0, 1.0);
    let mask: Vec<f64> = (0..64).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
    let loss = |x: &Tensor, target: &[f64], grid: bool| -> Tensor {
        if grid {
            let r = [tensor(target, &[1, 2, 8, 8])];
            let m = [tensor(&mask, &[1, 1, 8, 8])];
            lesion_focus_term(&r, std::slice::from_ref(x), &m).unwrap()
        } else {
            (tensor(target, x.dims()) - x).unwrap().sqr().unwrap().mean_all().unwrap()
        }
    };
    let mut worst = 0.0f64;
    // pixel (3 channels), feature (2 channels) and lesion-focus on 8x8 probes
    for (name, target, start, shape, grid) in [
        ("pixel", &img, &x0, vec![1, 3, 8, 8], false),
        ("feature", &real, &rand_vec(&mut rng, 128, -1.0, 1.0), vec![1, 2, 8, 8], false),
        ("lesion-focus", &real, &rand_vec(&mut rng, 128, -1.0, 1.0), vec![1, 2, 8, 8], true),
    ] {
        let var = Var::from_tensor(&tensor(start, &shape)).unwrap();
        let g: Vec<f64> = loss(var.as_tensor(), target, grid)
            .backward()
            .unwrap()
            .get(var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let e = support::worst_fd_error(start, &g, h, |x| {
            loss(&tensor(x, &shape), target, grid).to_scalar::<f64>().unwrap()
        });
        ensure(e < 1e-4, || format!("{name}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    let enc = standalone_encoder(7, 8, DType::F64, &Device::Cpu).unwrap();
    let v0 = rand_vec(&mut rng, NUM_MEASUREMENTS, -1.0, 1.0);
    for out in 0..8 {
        let var = Var::from_tensor(&tensor(&v0, &[1, NUM_MEASUREMENTS])).unwrap();
        let y = enc.forward(var.as_tensor()).unwrap().narrow(1, out, 1).unwrap().sum_all().unwrap();
        let g: Vec<f64> = y.backward().unwrap().get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let e = support::worst_fd_error(&v0, &g, h, |x| {
            enc.forward(&tensor(x, &[1, NUM_MEASUREMENTS])).unwrap().to_vec2::<f64>().unwrap()[0][out]
        });
        ensure(e < 1e-4, || format!("encoder output {out}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("worst relative error {worst:.1e} (tolerance 1e-4)"))
}

fn measurement_goldens() -> Check {
    let m = extract_measurements(&Image::filled(16, 16, 3, 0.4), &Mask::filled(16, 16, 1)).map_err(|e| e.to_string())?;
    for (k, want) in [
        ("intensity_std", 0.0),
        ("intensity_entropy_bits", 0.0),
        ("glcm_energy", 1.0),
        ("glcm_contrast", 0.0),
        ("glcm_homogeneity", 1.0),
    ] {
        let got = m.get(k).unwrap();
        ensure(got == want, || format!("constant image: {k} = {got}"))?;
    }
    let circ = m.get("circularity").unwrap();
    ensure((circ - PI / 4.0).abs() <= 0.02, || format!("square circularity {circ}"))?;
    let g = glcm(&[0.0, 0.0, 1.0, 1.0], &Mask::filled(2, 2, 1), 2, &[(0, 1)]).map_err(|e| e.to_string())?;
    let f = glcm_features(&g);
    ensure(
        g.matrix == [0.5, 0.0, 0.0, 0.5] && f.contrast == 0.0 && f.energy == 0.5 && f.homogeneity == 1.0 && f.correlation == 1.0,
        || format!("2x2 GLCM {:?} {f:?}", g.matrix),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut violations = 0;
    for _ in 0..1000 {
        let (ph, pw) = (rng.random_range(1..8), rng.random_range(1..8));
        let (h, w) = (ph + rng.random_range(2..8), pw + rng.random_range(2..8));
        let patch: Vec<f32> = (0..ph * pw * 3).map(|_| rng.random()).collect();
        let mut pmask: Vec<u8> = (0..ph * pw).map(|_| u8::from(rng.random_bool(0.5))).collect();
        pmask[0] = 1;
        let place = |oy: usize, ox: usize, rng: &mut ChaCha8Rng| {
            let mut img = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap();
            let mut bits = vec![0u8; h * w];
            for y in 0..ph {
                for x in 0..pw {
                    for c in 0..3 {
                        img.set(y + oy, x + ox, c, patch[(y * pw + x) * 3 + c]);
                    }
                    bits[(y + oy) * w + x + ox] = pmask[y * pw + x];
                }
            }
            (img, Mask::new(h, w, bits).unwrap())
        };
        // different off-mask noise in each placement covers locality too
        let (a, am) = place(1, 1, &mut rng);
        let (b, bm) = place(h - ph - 1, w - pw - 1, &mut rng);
        let va = extract_measurements(&a, &am).unwrap();
        let vb = extract_measurements(&b, &bm).unwrap();
        if va.0.iter().zip(&vb.0).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} invariance violations"))?;
    Ok("golden cases exact; 1000 translation/off-mask fuzz cases, 0 violations".into())
}

fn codebook_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let names: Vec<String> = (0..7).map(|i| format!("c{i}")).collect();
    let mut cb = MeasurementCodebook::for_measurements(names);
    let mut sums = vec![vec![0.0; NUM_MEASUREMENTS]; 7];
    let mut counts = [0usize; 7];
    let mut log = vec![Vec::new(); 7];
    for _ in 0..1000 {
        let c = rng.random_range(0..7);
        let v = rand_vec(&mut rng, NUM_MEASUREMENTS, -3.0, 8.0);
        cb.update(c, &v).unwrap();
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(&v) {
            *s += x;
        }
        log[c].push(v);
    }
    let mut worst = 0.0f64;
    for c in 0..7 {
        for (i, &m) in cb.query(c).unwrap().iter().enumerate() {
            worst = worst.max((m - sums[c][i] / counts[c] as f64).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("running mean off by {worst:e}"))?;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cb.csv");
    cb.save(&p).unwrap();
    let back = MeasurementCodebook::load(&p).unwrap();
    ensure(back == cb, || "round trip changed the codebook".into())?;
    Ok(format!("1000 insertions, max deviation {worst:.1e}; round trip bit-exact"))
}

fn block_causality() -> Check {
    let start = Instant::now();
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let scales: [Scale; 2] = [(1, 1), (2, 2)];
    let rows: Vec<Vec<f64>> = (0..8).map(|_| rand_vec(&mut rng, 4, -1.0, 1.0)).collect();
    let cb = Codebook::from_rows(&rows, DType::F64, &dev).unwrap();
    let cfg = VarConfig {
        depth: 2,
        heads: 2,
        width: 16,
        mlp_ratio: 2,
        vocab: 8,
        code_dim: 4,
        scales: scales.to_vec(),
        num_classes: 2,
        conditioning: ConditionMode::Measured,
        ..VarConfig::default()
    };
    let model = VarModel::new(&cfg, &cb, DType::F64, &dev).unwrap();
    let cond = model.condition_tokens(&[0], &[rand_vec(&mut rng, NUM_MEASUREMENTS, -1.0, 1.0)]).unwrap();
    let base: Vec<Vec<f64>> = scales.iter().map(|&(h, w)| rand_vec(&mut rng, 4 * h * w, -1.0, 1.0)).collect();
    let grids = |g: &[Vec<f64>]| -> Vec<Tensor> {
        g.iter().zip(&scales).map(|(v, &(h, w))| tensor(v, &[1, 4, h, w])).collect()
    };
    let vars: Vec<Var> = grids(&base).iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let inputs: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let logits = model.forward_embedded(&cond, &inputs).unwrap();
    let base_out: Vec<Vec<f64>> = logits.squeeze(0).unwrap().to_vec2().unwrap();
    let off = scale_offsets(&scales);
    for k in 0..scales.len() {
        let cells = scales[k].0 * scales[k].1;
        let wt = tensor(&rand_vec(&mut rng, cells * 8, -1.0, 1.0), &[1, cells, 8]);
        let grads = logits.narrow(1, off[k], cells).unwrap().mul(&wt).unwrap().sum_all().unwrap().backward().unwrap();
        for (j, v) in vars.iter().enumerate() {
            let nonzero = grads
                .get(v.as_tensor())
                .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().any(|x| *x != 0.0))
                .unwrap_or(false);
            let mut moved = base.clone();
            moved[j].iter_mut().for_each(|x| *x += 0.75);
            let out: Vec<Vec<f64>> = model.forward_embedded(&cond, &grids(&moved)).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
            let changed = (off[k]..off[k] + cells).any(|p| out[p] != base_out[p]);
            if j >= k {
                ensure(!nonzero && !changed, || format!("scale {k} sees grid {j}"))?;
            } else {
                ensure(nonzero && changed, || format!("scale {k} ignores grid {j}"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("gradients and perturbations agree, {secs:.2}s"))
}

fn metric_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let a: Vec<Vec<f64>> = (0..60).map(|_| rand_vec(&mut rng, 6, -1.0, 1.0)).collect();
    let b: Vec<Vec<f64>> = (0..40).map(|_| rand_vec(&mut rng, 6, -0.5, 2.0)).collect();
    let self_fid = fid_from_rows(&a, &a).unwrap();
    ensure(self_fid <= 1e-6, || format!("FID(A,A) = {self_fid}"))?;
    // population moments: mean 0 / var 1 against mean 1 / var 1
    let g1 = fid_from_rows(&[vec![-1.0], vec![1.0]], &[vec![0.0], vec![2.0]]).unwrap();
    ensure((g1 - 1.0).abs() <= 1e-6, || format!("1-D Gaussian case {g1}"))?;
    let (ab, ba) = (fid_from_rows(&a, &b).unwrap(), fid_from_rows(&b, &a).unwrap());
    ensure((ab - ba).abs() <= 1e-8, || format!("asymmetric {ab} vs {ba}"))?;
    let c = 5;
    let (u, _) = compute_is(&vec![vec![0.2; c]; 50], 10).unwrap();
    ensure(u == 1.0, || format!("uniform IS {u}"))?;
    let hots: Vec<Vec<f64>> = (0..50).map(|i| (0..c).map(|j| f64::from(u8::from(j == i % c))).collect()).collect();
    let (h, _) = compute_is(&hots, 10).unwrap();
    ensure((h - c as f64).abs() <= 1e-12, || format!("one-hot IS {h}"))?;
    Ok(format!("FID(A,A)={self_fid:.1e}, 1-D case {g1}, IS uniform {u}, one-hot {h}"))
}

const E2E_CONFIG: &str = include_str!("fixtures/acceptance_e2e.toml");
const ABLATION_CONFIG: &str = include_str!("fixtures/acceptance_ablation.toml");

fn lfvar(config: &Path, out: &Path, args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["lfvar".to_string(), "--config".into(), config.display().to_string(), "--out".into()];
    argv.push(out.display().to_string());
    argv.extend(args.iter().map(|s| s.to_string()));
    match lfvar_cli::run(argv, &[]) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" "))),
    }
}

fn run_dir(out: &Path) -> PathBuf {
    std::fs::read_dir(out.join("runs")).unwrap().next().unwrap().unwrap().path()
}

struct E2eRun {
    _dir: tempfile::TempDir,
    root: PathBuf,
    recon: Vec<f64>,
    report: EvaluationReport,
    seconds: f64,
}

fn e2e_once() -> Result<E2eRun, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e2e.toml");
    std::fs::write(&cfg, E2E_CONFIG).unwrap();
    let out = dir.path().join("out");
    for step in [
        &["make-toy"][..],
        &["train-vqvae"],
        &["train-var"],
        &["build-codebook"],
        &["evaluate"],
    ] {
        lfvar(&cfg, &out, step)?;
    }
    let root = run_dir(&out);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("checkpoints/tokenizer/tokenizer.json")).unwrap()).unwrap();
    let recon = side["report"]["epochs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["loss"]["pixel"].as_f64().unwrap())
        .collect();
    let report = serde_json::from_str(&std::fs::read_to_string(root.join("reports/evaluation.json")).unwrap()).unwrap();
    Ok(E2eRun {
        _dir: dir,
        root,
        recon,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every file under the run directory, keyed by relative path.
fn run_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Check| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        println!("{} {name}: {}", if r.is_ok() { "PASS" } else { "FAIL" }, r.as_ref().unwrap_or_else(|e| e));
        results.push((name, r));
    };
    run("1 quantizer oracle", &quantizer_oracle);
    run("2 loss identities", &loss_identities);
    run("3 gradient checks", &gradient_checks);
    run("4 measurement golden cases", &measurement_goldens);
    run("5 codebook exactness", &codebook_exactness);
    run("6 block causality", &block_causality);
    run("7 metric exactness", &metric_exactness);

    let first = e2e_once();
    let second = first.as_ref().ok().map(|_| e2e_once());
    let e2e = |f: &dyn Fn(&E2eRun) -> Check| -> Check {
        match &first {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    run("8a reconstruction loss drop", &|| {
        e2e(&|r| {
            let (first, last) = (r.recon[0], *r.recon.last().unwrap());
            ensure(last < 0.2 * first, || format!("final {last:.5} vs epoch-1 {first:.5}"))?;
            Ok(format!("epoch 1 {first:.5} -> final {last:.5} ({:.1}%), run took {:.0}s", 100.0 * last / first, r.seconds))
        })
    });
    run("8b generated vs noise FID", &|| {
        e2e(&|r| {
            let (g, n) = (r.report.overall_fid, r.report.noise_fid);
            ensure(g * 5.0 <= n, || format!("FID generated {g:.4} vs noise {n:.4}"))?;
            Ok(format!("FID generated {g:.4}, noise {n:.4} (ratio {:.1}x)", n / g))
        })
    });
    run("8c bit-reproducible rerun", &|| {
        e2e(&|a| {
            let b = match &second {
                Some(Ok(b)) => b,
                Some(Err(e)) => return Err(e.clone()),
                None => return Err("second run missing".into()),
            };
            let (fa, fb) = (run_files(&a.root), run_files(&b.root));
            ensure(fa.len() == fb.len(), || format!("{} vs {} files", fa.len(), fb.len()))?;
            for ((pa, da), (pb, db)) in fa.iter().zip(&fb) {
                ensure(pa == pb && da == db, || format!("{pa} differs"))?;
            }
            Ok(format!("{} artifacts byte-identical across two runs", fa.len()))
        })
    });
    run("9 ablation harness", &|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("ablation.toml");
        std::fs::write(&cfg, ABLATION_CONFIG).unwrap();
        let out = dir.path().join("out");
        lfvar(&cfg, &out, &["make-toy"])?;
        lfvar(&cfg, &out, &["ablate"])?;
        let text = std::fs::read_to_string(run_dir_for_ablation(&out)?).unwrap();
        let report: AblationReport = serde_json::from_str(&text).unwrap();
        ensure(report.settings.len() == 4, || format!("{} settings", report.settings.len()))?;
        ensure(report.class_names.len() == 7, || format!("{} classes", report.class_names.len()))?;
        ensure(report.rows().len() == 8, || "expected 4 x 2 rows".into())?;
        for s in &report.settings {
            ensure(s.error.is_none(), || format!("{} failed: {:?}", s.setting, s.error))?;
            ensure(s.metrics.len() == 8, || format!("{}: {} columns", s.setting, s.metrics.len()))?;
        }
        let f = report.settings[0].flags;
        ensure(!f.lf && !f.fm && !f.am, || "baseline flags".into())?;
        ensure(report.settings[2].fm_constant_fq == Some(true), || "FM F_q not constant".into())?;
        Ok("4 settings x (7 classes + average), FM F_q identical across images".into())
    });
    run("10 inter-class FID matrix", &|| {
        e2e(&|r| {
            let m = r.report.fid_matrix.as_ref().ok_or("no FID matrix")?;
            ensure(m.cells.len() == 3 && m.cells.iter().all(|row| row.len() == 3), || "matrix is not 3x3".into())?;
            ensure(m.absent_cells() == 0, || format!("{} absent cells", m.absent_cells()))?;
            Ok("3x3 matrix, no absent cells".into())
        })
    });

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn run_dir_for_ablation(out: &Path) -> Result<PathBuf, String> {
    for e in std::fs::read_dir(out.join("runs")).unwrap() {
        let p = e.unwrap().path().join("reports/ablation.json");
        if p.is_file() {
            return Ok(p);
        }
    }
    Err("no ablation.json written".into())
}
