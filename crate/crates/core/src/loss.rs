//! The training objective `L = (1 − α)·L_rec + α·L_reg` and its regularizers.
//!
//! Every norm here is the mean over pixels and channels of squared
//! differences. The regularized objectives run the same network on an image
//! and on a perturbed copy (a weight-sharing, siamese evaluation) so one set
//! of parameters collects gradients from both branches.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::nn::{GradientTape, Gradients, Network};
use crate::noise::{perturb_noise, NoiseSpec};
use crate::tensor::ImageTensor;
use crate::transform::{sample_transform, warp, warp_gradient, AffineTransform, TransformRanges};

/// Anything that maps an image to an image. Lets the value-only losses run
/// on hand-written functions as well as on a [`Network`].
pub trait ImageMap {
    fn map_image(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

impl ImageMap for Network {
    fn map_image(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.forward(x, None)
    }
}

impl<F: Fn(&ImageTensor) -> ImageTensor> ImageMap for F {
    fn map_image(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(self(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegKind {
    None,
    StabilityNoise,
    StabilityTransform,
    TransformInvariance,
    SparseJacobian,
    Augmentation,
}

impl RegKind {
    pub const ALL: [RegKind; 6] = [
        RegKind::None,
        RegKind::StabilityNoise,
        RegKind::StabilityTransform,
        RegKind::TransformInvariance,
        RegKind::SparseJacobian,
        RegKind::Augmentation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::StabilityNoise => "stability-noise",
            RegKind::StabilityTransform => "stability-transform",
            RegKind::TransformInvariance => "transform-invariance",
            RegKind::SparseJacobian => "sparse-jacobian",
            RegKind::Augmentation => "augmentation",
        }
    }

    pub fn uses_transform(&self) -> bool {
        !matches!(self, RegKind::None | RegKind::StabilityNoise)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown regularization kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub reg_kind: RegKind,
    pub transform_ranges: TransformRanges,
    pub noise: NoiseSpec,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::rec_only()
    }
}

impl LossConfig {
    pub fn rec_only() -> Self {
        Self::new(RegKind::None, 0.0)
    }

    pub fn new(reg_kind: RegKind, alpha: f64) -> Self {
        Self {
            alpha,
            reg_kind,
            transform_ranges: TransformRanges::default(),
            noise: NoiseSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(config_err(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        match self.reg_kind {
            RegKind::None if self.alpha != 0.0 => Err(config_err(
                "regularization kind `none` has no regularization term; alpha must be 0",
            )),
            RegKind::StabilityNoise => self.noise.validate(),
            k if k.uses_transform() => self.transform_ranges.validate(),
            _ => Ok(()),
        }
    }
}

/// The perturbation `T` applied to one training image.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    None,
    /// Additive noise; carries the perturbed image `x + Δx`.
    Noise(ImageTensor),
    Transform(AffineTransform),
}

/// Draws the perturbation for one image according to `cfg.reg_kind`.
/// `none` draws nothing.
pub fn sample_perturbation<R: Rng + ?Sized>(
    cfg: &LossConfig,
    x: &ImageTensor,
    rng: &mut R,
) -> Result<Perturbation> {
    Ok(match cfg.reg_kind {
        RegKind::None => Perturbation::None,
        RegKind::StabilityNoise => Perturbation::Noise(perturb_noise(x, &cfg.noise, rng)?),
        _ => {
            let p = sample_transform(&cfg.transform_ranges, rng)?;
            Perturbation::Transform(AffineTransform::for_image(&p, x)?)
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub reg: f64,
    pub gradients: Gradients,
}

/// Mean of squared differences.
pub fn mean_square(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b, "mean square")?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / n)
}

/// Reconstruction loss between a prediction and its target.
pub fn loss_rec(fx: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    mean_square(fx, y)
}

/// Stability: `‖f(x) − f(T(x))‖`.
pub fn loss_stability<M: ImageMap>(f: &M, x: &ImageTensor, perturbed: &ImageTensor) -> Result<f64> {
    x.check_same_shape(perturbed, "stability input vs perturbed input")?;
    mean_square(&f.map_image(x)?, &f.map_image(perturbed)?)
}

/// Transform invariance: `‖f(T(x)) − T(f(x))‖`.
pub fn loss_transform_invariance<M: ImageMap>(
    f: &M,
    x: &ImageTensor,
    t: &AffineTransform,
) -> Result<f64> {
    let ftx = f.map_image(&warp(x, t))?;
    let tfx = warp(&f.map_image(x)?, t);
    mean_square(&ftx, &tfx)
}

/// Sparse Jacobian: `‖(f(T(x)) − T(y)) − (f(x) − y)‖`.
pub fn loss_sparse_jacobian<M: ImageMap>(
    f: &M,
    x: &ImageTensor,
    y: &ImageTensor,
    t: &AffineTransform,
    ty: &ImageTensor,
) -> Result<f64> {
    y.check_same_shape(ty, "target vs warped target")?;
    let fx = f.map_image(x)?;
    let ftx = f.map_image(&warp(x, t))?;
    fx.check_same_shape(y, "prediction vs target")?;
    let diff = ftx.sub(ty).sub(&fx.sub(y));
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

/// Augmentation: `‖f(T(x)) − T(y)‖`.
pub fn loss_augmentation<M: ImageMap>(
    f: &M,
    x: &ImageTensor,
    t: &AffineTransform,
    ty: &ImageTensor,
) -> Result<f64> {
    mean_square(&f.map_image(&warp(x, t))?, ty)
}

/// Residual and its mean-square value and gradient scale `2 / n`.
fn residual(a: &ImageTensor, b: &ImageTensor) -> (ImageTensor, f64, f64) {
    let r = a.sub(b);
    let n = r.len() as f64;
    let v = r.data().iter().map(|v| v * v).sum::<f64>() / n;
    (r, v, 2.0 / n)
}

/// Loss and accumulated gradients for one `(x, y)` pair with a given perturbation.
fn sample_loss(
    net: &Network,
    x: &ImageTensor,
    y: &ImageTensor,
    cfg: &LossConfig,
    perturbation: &Perturbation,
    grads: &mut Gradients,
) -> Result<(f64, f64)> {
    let alpha = cfg.alpha;
    let mut tape = GradientTape::new();
    let fx = net.forward(x, Some(&mut tape))?;
    fx.check_same_shape(y, "prediction vs target")?;

    let (r_rec, rec, two_n) = residual(&fx, y);
    let mut g_fx = r_rec.scale((1.0 - alpha) * two_n);

    let perturbed_input = match (cfg.reg_kind, perturbation) {
        (RegKind::None, Perturbation::None) => None,
        (RegKind::StabilityNoise, Perturbation::Noise(tx)) => {
            x.check_same_shape(tx, "perturbed input")?;
            Some(tx.clone())
        }
        (k, Perturbation::Transform(t)) if k.uses_transform() => Some(warp(x, t)),
        (k, p) => {
            return Err(config_err(format!(
                "perturbation {} does not fit regularization kind {k}",
                match p {
                    Perturbation::None => "none",
                    Perturbation::Noise(_) => "noise",
                    Perturbation::Transform(_) => "transform",
                }
            )))
        }
    };

    let Some(tx) = perturbed_input else {
        net.backward_into(&tape, &g_fx, grads)?;
        return Ok((rec, 0.0));
    };

    let mut tape_t = GradientTape::new();
    let ftx = net.forward(&tx, Some(&mut tape_t))?;
    let transform = match perturbation {
        Perturbation::Transform(t) => Some(t),
        _ => None,
    };

    // (residual, gradient routing): the residual's gradient goes +1 to f(T(x)),
    // and to f(x) either with factor -1, through the warp adjoint, or not at all.
    enum Route {
        Negate,
        WarpAdjoint,
        None,
    }
    let (r, route) = match cfg.reg_kind {
        RegKind::StabilityNoise | RegKind::StabilityTransform => (ftx.sub(&fx), Route::Negate),
        RegKind::TransformInvariance => {
            let t = transform.expect("transform kinds carry a transform");
            (ftx.sub(&warp(&fx, t)), Route::WarpAdjoint)
        }
        RegKind::SparseJacobian => {
            let ty = warp(y, transform.expect("transform kinds carry a transform"));
            (ftx.sub(&ty).sub(&fx.sub(y)), Route::Negate)
        }
        RegKind::Augmentation => {
            let ty = warp(y, transform.expect("transform kinds carry a transform"));
            (ftx.sub(&ty), Route::None)
        }
        RegKind::None => unreachable!("handled above"),
    };
    let reg = r.data().iter().map(|v| v * v).sum::<f64>() / r.len() as f64;

    if alpha != 0.0 {
        let g_r = r.scale(alpha * two_n);
        match route {
            Route::Negate => g_fx.axpy(-1.0, &g_r),
            Route::WarpAdjoint => {
                let t = transform.expect("transform kinds carry a transform");
                g_fx.axpy(-1.0, &warp_gradient(&g_r, t));
            }
            Route::None => {}
        }
        net.backward_into(&tape_t, &g_r, grads)?;
    }
    net.backward_into(&tape, &g_fx, grads)?;
    Ok((rec, reg))
}

/// Evaluates the objective over a batch with caller-supplied perturbations,
/// one per image. Losses and gradients are averaged over the batch.
pub fn evaluate_with(
    net: &Network,
    batch: &[(ImageTensor, ImageTensor)],
    cfg: &LossConfig,
    perturbations: &[Perturbation],
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(config_err("empty batch"));
    }
    if perturbations.len() != batch.len() {
        return Err(config_err(format!(
            "{} perturbations for a batch of {}",
            perturbations.len(),
            batch.len()
        )));
    }
    let mut grads = net.zero_gradients();
    let (mut rec, mut reg) = (0.0, 0.0);
    for ((x, y), p) in batch.iter().zip(perturbations) {
        let (r, g) = sample_loss(net, x, y, cfg, p, &mut grads)?;
        rec += r;
        reg += g;
    }
    let b = batch.len() as f64;
    grads.scale(1.0 / b);
    let (rec, reg) = (rec / b, reg / b);
    let total = (1.0 - cfg.alpha) * rec + cfg.alpha * reg;
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(LossBreakdown {
        total,
        rec,
        reg,
        gradients: grads,
    })
}

/// Samples one perturbation per image and evaluates the objective.
pub fn evaluate_total<R: Rng + ?Sized>(
    net: &Network,
    batch: &[(ImageTensor, ImageTensor)],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let perturbations = batch
        .iter()
        .map(|(x, _)| sample_perturbation(cfg, x, rng))
        .collect::<Result<Vec<_>>>()?;
    evaluate_with(net, batch, cfg, &perturbations)
}
