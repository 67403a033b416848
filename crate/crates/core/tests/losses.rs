mod common;

use common::*;
use tempstab::loss::{
    evaluate_total, evaluate_with, loss_augmentation, loss_rec, loss_sparse_jacobian,
    loss_stability, loss_transform_invariance, mean_square, ImageMap, LossConfig, Perturbation,
    RegKind,
};
use tempstab::nn::{Network, NetworkConfig};
use tempstab::noise::{perturb_noise, NoiseSpec};
use tempstab::transform::{sample_transform, warp, AffineTransform, TransformRanges};
use tempstab::{Error, ImageTensor};

fn sampled_transform(x: &ImageTensor, seed: u64) -> AffineTransform {
    let p = sample_transform(&TransformRanges::default(), &mut rng(seed)).unwrap();
    AffineTransform::for_image(&p, x).unwrap()
}

/// Zero weights, constant output bias.
fn constant_net(value: f64) -> Network {
    let mut net = Network::zeroed(&NetworkConfig::hdr(&[4])).unwrap();
    let off = net.layers().last().unwrap().bias_offset;
    net.params_mut()[off] = value;
    net
}

fn identity(x: &ImageTensor) -> ImageTensor {
    x.clone()
}

fn naive_mean_square(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, c) = a.shape();
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                let d = a.get(i, j, k) - b.get(i, j, k);
                s += d * d;
            }
        }
    }
    s / (h * w * c) as f64
}

#[test]
fn rec_zero_offset_and_loop_oracle() {
    let mut r = rng(1);
    let y = random_image(6, 5, 2, 0.0, 4.0, &mut r);
    assert_eq!(loss_rec(&y, &y).unwrap(), 0.0);
    assert_eq!(loss_rec(&y.map(|v| v + 1.0), &y).unwrap(), 1.0);
    let fx = random_image(6, 5, 2, 0.0, 4.0, &mut r);
    assert!((loss_rec(&fx, &y).unwrap() - naive_mean_square(&fx, &y)).abs() < 1e-14);
    assert!(matches!(
        loss_rec(&fx, &fx.channel(0)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn stability_zero_cases() {
    let mut r = rng(2);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let net = random_net(&NetworkConfig::hdr(&[4]), 3);
    let id = AffineTransform::identity(8, 8);
    assert_eq!(loss_stability(&net, &x, &warp(&x, &id)).unwrap(), 0.0);
    let c = constant_net(0.7);
    let t = sampled_transform(&x, 4);
    assert_eq!(loss_stability(&c, &x, &warp(&x, &t)).unwrap(), 0.0);
    let noisy = perturb_noise(&x, &NoiseSpec::default(), &mut r).unwrap();
    assert_eq!(loss_stability(&c, &x, &noisy).unwrap(), 0.0);
}

#[test]
fn stability_matches_two_pass_oracle() {
    let mut r = rng(5);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let net = random_net(&NetworkConfig::hdr(&[4]), 6);
    let noisy = perturb_noise(&x, &NoiseSpec::default(), &mut r).unwrap();
    let a = net.forward(&x, None).unwrap();
    let b = net.forward(&noisy, None).unwrap();
    let oracle = naive_mean_square(&a, &b);
    assert!(oracle > 0.0);
    assert!((loss_stability(&net, &x, &noisy).unwrap() - oracle).abs() < 1e-15);
}

#[test]
fn transform_invariance_zero_cases_and_oracle() {
    let mut r = rng(7);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let t = sampled_transform(&x, 8);
    assert_eq!(loss_transform_invariance(&identity, &x, &t).unwrap(), 0.0);
    let net = random_net(&NetworkConfig::hdr(&[4]), 9);
    let id = AffineTransform::identity(8, 8);
    assert_eq!(loss_transform_invariance(&net, &x, &id).unwrap(), 0.0);

    let ftx = net.forward(&warp(&x, &t), None).unwrap();
    let tfx = warp(&net.forward(&x, None).unwrap(), &t);
    let oracle = naive_mean_square(&ftx, &tfx);
    assert!(oracle > 0.0);
    assert!((loss_transform_invariance(&net, &x, &t).unwrap() - oracle).abs() < 1e-15);
}

#[test]
fn sparse_jacobian_zero_cases() {
    let mut r = rng(10);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let t = sampled_transform(&x, 11);
    // targets equal inputs, so the identity reproduces them on both patches
    let y = x.clone();
    let ty = warp(&y, &t);
    assert_eq!(
        loss_sparse_jacobian(&identity, &x, &y, &t, &ty).unwrap(),
        0.0
    );
    // the same constant error on both patches cancels
    for c in [0.25, -1.5, 3.0] {
        let f = move |z: &ImageTensor| z.map(|v| v + c);
        let l = loss_sparse_jacobian(&f, &x, &y, &t, &ty).unwrap();
        assert!(l < 1e-12, "offset {c}: {l}");
        assert!(loss_rec(&f(&x), &y).unwrap() > 0.05);
    }
}

#[test]
fn sparse_jacobian_forms_agree_and_match_oracle() {
    let mut r = rng(12);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let y = random_image(8, 8, 1, 0.0, 4.0, &mut r);
    let t = sampled_transform(&x, 13);
    let ty = warp(&y, &t);
    let net = random_net(&NetworkConfig::hdr(&[4]), 14);
    let fx = net.forward(&x, None).unwrap();
    let ftx = net.forward(&warp(&x, &t), None).unwrap();
    let eq7 = ftx.sub(&ty).sub(&fx.sub(&y));
    let eq6 = ftx.sub(&fx).sub(&ty.sub(&y));
    let zero = ImageTensor::zeros(8, 8, 1);
    let (l7, l6) = (
        naive_mean_square(&eq7, &zero),
        naive_mean_square(&eq6, &zero),
    );
    let l = loss_sparse_jacobian(&net, &x, &y, &t, &ty).unwrap();
    assert!((l - l7).abs() <= 1e-15 * l7.max(1.0));
    assert!((l - l6).abs() <= 1e-13 * l6.max(1.0), "{l} vs {l6}");
}

#[test]
fn sparse_jacobian_scales_quadratically_with_the_error() {
    let mut r = rng(15);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let t = sampled_transform(&x, 16);
    // y = 2x, so T(y) = 2 T(x) and the ideal map is z ↦ 2z on both patches
    let y = x.scale(2.0);
    let ty = warp(&y, &t);
    let net = random_net(&NetworkConfig::hdr(&[4]), 17);
    let scaled = |c: f64| {
        let net = net.clone();
        move |z: &ImageTensor| {
            let ideal = z.scale(2.0);
            let e = net.forward(z, None).unwrap().sub(&ideal);
            ideal.add(&e.scale(c))
        }
    };
    let base = loss_sparse_jacobian(&scaled(1.0), &x, &y, &t, &ty).unwrap();
    assert!(base > 0.0);
    for c in [0.5, 2.0, 3.0] {
        let l = loss_sparse_jacobian(&scaled(c), &x, &y, &t, &ty).unwrap();
        assert!((l - c * c * base).abs() <= 1e-12 * l, "c = {c}");
    }
}

#[test]
fn augmentation_cases() {
    let mut r = rng(18);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let t = sampled_transform(&x, 19);
    assert_eq!(
        loss_augmentation(&identity, &x, &t, &warp(&x, &t)).unwrap(),
        0.0
    );

    let net = random_net(&NetworkConfig::hdr(&[4]), 20);
    let y = random_image(8, 8, 1, 0.0, 4.0, &mut r);
    let id = AffineTransform::identity(8, 8);
    let fx = net.forward(&x, None).unwrap();
    assert_eq!(
        loss_augmentation(&net, &x, &id, &y).unwrap(),
        loss_rec(&fx, &y).unwrap()
    );

    let ty = warp(&y, &t);
    let oracle = naive_mean_square(&net.forward(&warp(&x, &t), None).unwrap(), &ty);
    assert!((loss_augmentation(&net, &x, &t, &ty).unwrap() - oracle).abs() < 1e-14);
}

/// The siamese evaluation reports the same rec and reg values as the
/// independent value functions, and the blend identity holds.
#[test]
fn siamese_breakdown_matches_value_functions() {
    let net = random_net(&NetworkConfig::hdr(&[4]), 21);
    let mut r = rng(22);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut r);
    let y = random_image(8, 8, 1, 0.0, 4.0, &mut r);
    let fx = net.forward(&x, None).unwrap();
    for kind in RegKind::ALL {
        for alpha in [0.0, 0.3, 0.9] {
            if kind == RegKind::None && alpha != 0.0 {
                continue;
            }
            let cfg = LossConfig::new(kind, alpha);
            let p = fixed_perturbation(kind, &x, 23);
            let out = evaluate_with(&net, &[(x.clone(), y.clone())], &cfg, std::slice::from_ref(&p)).unwrap();
            assert_eq!(out.rec, loss_rec(&fx, &y).unwrap());
            let reg = match (&p, kind) {
                (Perturbation::None, _) => 0.0,
                (Perturbation::Noise(xn), _) => loss_stability(&net, &x, xn).unwrap(),
                (Perturbation::Transform(t), RegKind::StabilityTransform) => {
                    loss_stability(&net, &x, &warp(&x, t)).unwrap()
                }
                (Perturbation::Transform(t), RegKind::TransformInvariance) => {
                    loss_transform_invariance(&net, &x, t).unwrap()
                }
                (Perturbation::Transform(t), RegKind::SparseJacobian) => {
                    loss_sparse_jacobian(&net, &x, &y, t, &warp(&y, t)).unwrap()
                }
                (Perturbation::Transform(t), RegKind::Augmentation) => {
                    loss_augmentation(&net, &x, t, &warp(&y, t)).unwrap()
                }
                _ => unreachable!(),
            };
            assert!((out.reg - reg).abs() <= 1e-14 * reg.max(1.0), "{kind}");
            assert_eq!(out.total, (1.0 - alpha) * out.rec + alpha * out.reg);
        }
    }
}

#[test]
fn zero_alpha_total_is_rec_and_reg_is_finite() {
    let net = random_net(&NetworkConfig::hdr(&[4]), 24);
    let mut r = rng(25);
    let batch: Vec<_> = (0..3)
        .map(|_| {
            (
                random_image(8, 8, 1, 0.0, 1.0, &mut r),
                random_image(8, 8, 1, 0.0, 4.0, &mut r),
            )
        })
        .collect();
    for kind in RegKind::ALL {
        let out = evaluate_total(&net, &batch, &LossConfig::new(kind, 0.0), &mut r).unwrap();
        assert_eq!(out.total, out.rec);
        assert!(out.reg.is_finite());
    }
}

#[test]
fn equal_rec_and_reg_blend_to_rec() {
    let net = constant_net(1.25);
    let x = ImageTensor::filled(8, 8, 1, 0.5);
    let y = ImageTensor::filled(8, 8, 1, 2.0);
    let p = Perturbation::Transform(AffineTransform::identity(8, 8));
    let cfg = LossConfig::new(RegKind::Augmentation, 0.5);
    let out = evaluate_with(&net, &[(x, y)], &cfg, &[p]).unwrap();
    assert_eq!(out.rec, 0.5625);
    assert_eq!(out.reg, out.rec);
    assert_eq!(out.total, out.rec);
}

#[test]
fn perturbation_kind_must_match_the_regularizer() {
    let net = random_net(&NetworkConfig::hdr(&[4]), 26);
    let x = ImageTensor::filled(8, 8, 1, 0.5);
    let batch = [(x.clone(), x.clone())];
    let transform = Perturbation::Transform(AffineTransform::identity(8, 8));
    let noise = Perturbation::Noise(x.clone());
    let cfg = LossConfig::new(RegKind::StabilityNoise, 0.5);
    assert!(matches!(
        evaluate_with(&net, &batch, &cfg, &[transform]),
        Err(Error::Config(_))
    ));
    let cfg = LossConfig::new(RegKind::TransformInvariance, 0.5);
    assert!(matches!(
        evaluate_with(&net, &batch, &cfg, &[noise]),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        evaluate_with(&net, &batch, &cfg, &[]),
        Err(Error::Config(_))
    ));
}

#[test]
fn network_and_closure_agree_as_image_maps() {
    let net = random_net(&NetworkConfig::hdr(&[4]), 27);
    let x = random_image(8, 8, 1, 0.0, 1.0, &mut rng(28));
    let f = |z: &ImageTensor| net.forward(z, None).unwrap();
    assert_eq!(net.map_image(&x).unwrap(), f.map_image(&x).unwrap());
    assert_eq!(mean_square(&x, &x).unwrap(), 0.0);
}
