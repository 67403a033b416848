//! Additive Gaussian perturbation `T(x) = x + Δx`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, Result};
use crate::tensor::ImageTensor;

/// Per-image noise level bounds. One σ is drawn per image from
/// `U(sigma_min, sigma_max)`; the noise is then i.i.d. `N(0, σ²)` per value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 0.04,
        }
    }
}

impl NoiseSpec {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            sigma_min: sigma,
            sigma_max: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_max.is_finite()) {
            return Err(config_err("noise sigma bounds must be finite"));
        }
        if self.sigma_min < 0.0 || self.sigma_min > self.sigma_max {
            return Err(config_err(format!(
                "noise sigma bounds must satisfy 0 <= min <= max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// Returns `x + Δx` and the σ that was drawn for it.
pub fn perturb_noise_with_sigma<R: Rng + ?Sized>(
    x: &ImageTensor,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<(ImageTensor, f64)> {
    spec.validate()?;
    let sigma = if spec.sigma_min == spec.sigma_max {
        spec.sigma_min
    } else {
        rng.random_range(spec.sigma_min..=spec.sigma_max)
    };
    let mut out = x.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += sigma * n;
        }
    }
    Ok((out, sigma))
}

pub fn perturb_noise<R: Rng + ?Sized>(
    x: &ImageTensor,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ImageTensor> {
    perturb_noise_with_sigma(x, spec, rng).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_identity() {
        let x = ImageTensor::from_fn(8, 8, 1, |i, j, _| (i + j) as f64 / 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            perturb_noise(&x, &NoiseSpec::fixed(0.0), &mut rng).unwrap(),
            x
        );
    }

    #[test]
    fn fixed_sigma_matches_empirical_std() {
        let x = ImageTensor::filled(128, 128, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = perturb_noise(&x, &NoiseSpec::fixed(0.04), &mut rng).unwrap();
        let d = y.sub(&x);
        let mean = d.mean();
        let var = d.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.04).abs() / 0.04 < 0.05, "std {std}");
    }

    #[test]
    fn default_sigma_lies_in_bounds() {
        let x = ImageTensor::zeros(16, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (y, sigma) = perturb_noise_with_sigma(&x, &NoiseSpec::default(), &mut rng).unwrap();
            assert!((0.01..=0.04).contains(&sigma));
            assert!(y.data().iter().map(|v| v.abs()).sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn rejects_inverted_bounds() {
        let spec = NoiseSpec {
            sigma_min: 0.05,
            sigma_max: 0.01,
        };
        assert!(spec.validate().is_err());
        assert!(NoiseSpec::fixed(-0.1).validate().is_err());
    }
}
