//! Autograd against central finite differences on double-precision 8x8
//! probes.

use lfvar_core::candle::{DType, Device, Tensor, Var};
use lfvar_core::conditioning::standalone_encoder;
use lfvar_core::measurements::NUM_MEASUREMENTS;
use lfvar_core::tokenizer::{vqvae_loss, LossHeads, LossInputs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod support;

use support::worst_fd_error;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

/// Compare `grad` with central differences of `f` at `x`.
fn check(name: &str, x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) {
    let worst = worst_fd_error(x, grad, H, f);
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

struct Probe {
    image: Vec<f64>,
    recon: Vec<f64>,
    f: Vec<f64>,
    f_hat: Vec<f64>,
    real: Vec<Vec<f64>>,
    rec: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
}

const IMG: [usize; 4] = [1, 3, 8, 8];
const LAT: [usize; 4] = [1, 2, 8, 8];
const SCALES: [usize; 3] = [2, 4, 8];

fn probe(seed: u64) -> Probe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img_n: usize = IMG.iter().product();
    let lat_n: usize = LAT.iter().product();
    Probe {
        image: rand_vec(&mut rng, img_n),
        recon: rand_vec(&mut rng, img_n),
        f: rand_vec(&mut rng, lat_n),
        f_hat: rand_vec(&mut rng, lat_n),
        real: SCALES.iter().map(|s| rand_vec(&mut rng, 2 * s * s)).collect(),
        rec: SCALES.iter().map(|s| rand_vec(&mut rng, 2 * s * s)).collect(),
        masks: SCALES
            .iter()
            .map(|s| (0..s * s).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect())
            .collect(),
    }
}

#[derive(Clone, Copy)]
enum Wrt {
    Recon,
    FHat,
    RecGrid(usize),
}

fn loss_with(p: &Probe, wrt: Wrt, x: &Tensor) -> Tensor {
    let image = t(&p.image, &IMG);
    let recon = match wrt {
        Wrt::Recon => x.clone(),
        _ => t(&p.recon, &IMG),
    };
    let f = t(&p.f, &LAT);
    let f_hat = match wrt {
        Wrt::FHat => x.clone(),
        _ => t(&p.f_hat, &LAT),
    };
    let real: Vec<Tensor> = SCALES.iter().zip(&p.real).map(|(&s, v)| t(v, &[1, 2, s, s])).collect();
    let rec: Vec<Tensor> = SCALES
        .iter()
        .enumerate()
        .map(|(k, &s)| match wrt {
            Wrt::RecGrid(j) if j == k => x.clone(),
            _ => t(&p.rec[k], &[1, 2, s, s]),
        })
        .collect();
    let masks: Vec<Tensor> = SCALES.iter().zip(&p.masks).map(|(&s, v)| t(v, &[1, 1, s, s])).collect();
    let inputs = LossInputs {
        image: &image,
        recon: &recon,
        f: &f,
        f_hat: &f_hat,
        real_grids: &real,
        recon_grids: &rec,
        masks: &masks,
    };
    vqvae_loss(&inputs, &LossHeads::default(), 1.0, 0.1).unwrap().0.total
}

fn grad_check(p: &Probe, wrt: Wrt, x0: &[f64], shape: &[usize], name: &str) {
    let var = Var::from_tensor(&t(x0, shape)).unwrap();
    let loss = loss_with(p, wrt, var.as_tensor());
    let grads = loss.backward().unwrap();
    let g: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert!(g.iter().any(|v| *v != 0.0), "{name}: gradient vanished");
    check(name, x0, &g, |x| loss_with(p, wrt, &t(x, shape)).to_scalar::<f64>().unwrap());
}

#[test]
fn pixel_loss_gradient() {
    let p = probe(1);
    grad_check(&p, Wrt::Recon, &p.recon, &IMG, "pixel");
}

#[test]
fn feature_loss_gradient() {
    let p = probe(2);
    grad_check(&p, Wrt::FHat, &p.f_hat, &LAT, "feature");
}

#[test]
fn lesion_focus_gradient_per_scale() {
    let p = probe(3);
    for (k, &s) in SCALES.iter().enumerate() {
        grad_check(&p, Wrt::RecGrid(k), &p.rec[k], &[1, 2, s, s], &format!("lesion-focus scale {k}"));
    }
}

#[test]
fn lesion_focus_gradient_is_zero_inside_the_lesion() {
    let p = probe(4);
    let k = 2;
    let s = SCALES[k];
    let var = Var::from_tensor(&t(&p.rec[k], &[1, 2, s, s])).unwrap();
    let grads = loss_with(&p, Wrt::RecGrid(k), var.as_tensor()).backward().unwrap();
    let g: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    for c in 0..2 {
        for cell in 0..s * s {
            if p.masks[k][cell] == 1.0 {
                assert_eq!(g[c * s * s + cell], 0.0);
            }
        }
    }
}

#[test]
fn measurement_encoder_jacobian() {
    let width = 8;
    let enc = standalone_encoder(5, width, DType::F64, &Device::Cpu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v0 = rand_vec(&mut rng, NUM_MEASUREMENTS);
    let shape = [1, NUM_MEASUREMENTS];
    for out in 0..width {
        let var = Var::from_tensor(&t(&v0, &shape)).unwrap();
        let y = enc.forward(var.as_tensor()).unwrap();
        let yo = y.narrow(1, out, 1).unwrap().sum_all().unwrap();
        let grads = yo.backward().unwrap();
        let g: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        check(&format!("encoder output {out}"), &v0, &g, |x| {
            let y: Vec<Vec<f64>> = enc.forward(&t(x, &shape)).unwrap().to_vec2().unwrap();
            y[0][out]
        });
    }
}
