#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempstab::loss::{evaluate_with, sample_perturbation, LossConfig, Perturbation, RegKind};
use tempstab::nn::{Network, NetworkConfig};
use tempstab::transform::{AffineTransform, TransformParams};
use tempstab::ImageTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(
    h: usize,
    w: usize,
    c: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

/// Low-frequency test pattern with values in roughly [0.1, 0.9].
pub fn smooth_image(h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, 1, |i, j, _| {
        let (u, v) = (i as f64 / h as f64, j as f64 / w as f64);
        0.5 + 0.25 * (2.0 * u + 0.5).sin() * (3.0 * v - 0.2).cos() + 0.15 * (u - v)
    })
}

/// `cfg` with fan-in scaled weights and small random biases. Zero biases
/// put ReLU inputs exactly on the kink wherever a layer sees only zeros,
/// which central differences cannot resolve.
pub fn random_net(cfg: &NetworkConfig, seed: u64) -> Network {
    let mut r = rng(seed);
    let mut net = Network::init(cfg, &mut r).unwrap();
    let biases: Vec<(usize, usize)> = net
        .layers()
        .iter()
        .map(|l| (l.bias_offset, l.cout))
        .collect();
    for (off, n) in biases {
        for b in &mut net.params_mut()[off..off + n] {
            *b = r.random_range(-0.1..0.1);
        }
    }
    net
}

/// One encoder stage of width 2, single channel in and out.
pub fn tiny_net(seed: u64) -> Network {
    random_net(&NetworkConfig::hdr(&[2]), seed)
}

/// Perturbations that are not degenerate for the gradient check: a fixed
/// sub-pixel transform or a fixed noise draw.
pub fn fixed_perturbation(kind: RegKind, x: &ImageTensor, seed: u64) -> Perturbation {
    match kind {
        RegKind::None => Perturbation::None,
        RegKind::StabilityNoise => {
            let cfg = LossConfig::new(kind, 0.5);
            sample_perturbation(&cfg, x, &mut rng(seed)).unwrap()
        }
        _ => {
            let p = TransformParams {
                tx: 0.37,
                ty: -0.61,
                rotation: 0.8,
                zoom: 1.02,
                shear_x: -0.5,
                shear_y: 0.3,
            };
            Perturbation::Transform(AffineTransform::for_image(&p, x).unwrap())
        }
    }
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub params: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences of the total objective on every parameter against
/// the analytic gradient.
pub fn gradient_check(
    net: &Network,
    batch: &[(ImageTensor, ImageTensor)],
    cfg: &LossConfig,
    perts: &[Perturbation],
) -> GradCheck {
    let analytic = evaluate_with(net, batch, cfg, perts).unwrap().gradients;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..net.num_params() {
        let p0 = net.params()[k];
        probe.params_mut()[k] = p0 + FD_STEP;
        let up = evaluate_with(&probe, batch, cfg, perts).unwrap().total;
        probe.params_mut()[k] = p0 - FD_STEP;
        let down = evaluate_with(&probe, batch, cfg, perts).unwrap().total;
        probe.params_mut()[k] = p0;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic.values[k], numeric, REL_FLOOR));
    }
    GradCheck {
        max_rel_error: worst,
        params: net.num_params(),
    }
}

/// The five objectives of the gradient suite.
pub fn gradient_suite_configs() -> Vec<LossConfig> {
    vec![
        LossConfig::rec_only(),
        LossConfig::new(RegKind::StabilityNoise, 0.6),
        LossConfig::new(RegKind::StabilityTransform, 0.6),
        LossConfig::new(RegKind::TransformInvariance, 0.6),
        LossConfig::new(RegKind::SparseJacobian, 0.6),
    ]
}

/// Runs the check for `cfg` on a fresh tiny network with a batch of two
/// 8×8 samples.
pub fn gradient_check_for(cfg: &LossConfig, seed: u64) -> GradCheck {
    let net = tiny_net(seed);
    let mut r = rng(seed + 1000);
    let batch: Vec<(ImageTensor, ImageTensor)> = (0..2)
        .map(|_| {
            (
                random_image(8, 8, 1, 0.0, 1.0, &mut r),
                random_image(8, 8, 1, 0.0, 4.0, &mut r),
            )
        })
        .collect();
    let perts: Vec<Perturbation> = batch
        .iter()
        .enumerate()
        .map(|(k, (x, _))| fixed_perturbation(cfg.reg_kind, x, seed + k as u64))
        .collect();
    gradient_check(&net, &batch, cfg, &perts)
}
