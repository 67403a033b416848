//! Random global image transformations: parameter sampling, the closed-form
//! 2×3 index matrix, bilinear warping and its adjoint.
//!
//! A transform maps *output* indices to *source* indices: the warped image
//! is `T(x)[i, j] = x[i', j']` with `(i', j') = M · (i, j, 1)`. Indices are
//! `(row, column)` with the origin in the image corner; the shift of the
//! image center to the origin and back is folded into `M`.

use rand::Rng;

use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::ImageTensor;

/// One sampled perturbation. Angles are in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
    pub zoom: f64,
    pub shear_x: f64,
    pub shear_y: f64,
}

impl TransformParams {
    pub const IDENTITY: Self = Self {
        tx: 0.0,
        ty: 0.0,
        rotation: 0.0,
        zoom: 1.0,
        shear_x: 0.0,
        shear_y: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Closed interval `[min, max]` a parameter is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(config_err(format!("{name} range is not finite")));
        }
        if self.min > self.max {
            return Err(config_err(format!(
                "{name} range has min {} > max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Sampling ranges for every transform parameter.
///
/// The default ranges are: translation ±2 px, rotation ±1°, zoom 0.97–1.03,
/// shear ±1°.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformRanges {
    pub tx: Range,
    pub ty: Range,
    pub rotation: Range,
    pub zoom: Range,
    pub shear_x: Range,
    pub shear_y: Range,
}

impl Default for TransformRanges {
    fn default() -> Self {
        Self {
            tx: Range::new(-2.0, 2.0),
            ty: Range::new(-2.0, 2.0),
            rotation: Range::new(-1.0, 1.0),
            zoom: Range::new(0.97, 1.03),
            shear_x: Range::new(-1.0, 1.0),
            shear_y: Range::new(-1.0, 1.0),
        }
    }
}

impl TransformRanges {
    /// All ranges collapsed onto the identity transform.
    pub fn identity() -> Self {
        Self {
            tx: Range::point(0.0),
            ty: Range::point(0.0),
            rotation: Range::point(0.0),
            zoom: Range::point(1.0),
            shear_x: Range::point(0.0),
            shear_y: Range::point(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx.validate("translation x")?;
        self.ty.validate("translation y")?;
        self.rotation.validate("rotation")?;
        self.zoom.validate("zoom")?;
        self.shear_x.validate("shear x")?;
        self.shear_y.validate("shear y")?;
        for (name, r) in [("shear x", self.shear_x), ("shear y", self.shear_y)] {
            if r.min <= -90.0 || r.max >= 90.0 {
                return Err(config_err(format!(
                    "{name} range must stay inside (-90°, 90°)"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &TransformParams) -> bool {
        self.tx.contains(p.tx)
            && self.ty.contains(p.ty)
            && self.rotation.contains(p.rotation)
            && self.zoom.contains(p.zoom)
            && self.shear_x.contains(p.shear_x)
            && self.shear_y.contains(p.shear_y)
    }
}

/// Draws each parameter independently and uniformly from its range.
pub fn sample_transform<R: Rng + ?Sized>(
    ranges: &TransformRanges,
    rng: &mut R,
) -> Result<TransformParams> {
    ranges.validate()?;
    Ok(TransformParams {
        tx: ranges.tx.sample(rng),
        ty: ranges.ty.sample(rng),
        rotation: ranges.rotation.sample(rng),
        zoom: ranges.zoom.sample(rng),
        shear_x: ranges.shear_x.sample(rng),
        shear_y: ranges.shear_y.sample(rng),
    })
}

/// A 2×3 matrix mapping output pixel indices to source indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
    /// Image extent along the first index axis used to build `m`.
    pub sx: usize,
    /// Image extent along the second index axis used to build `m`.
    pub sy: usize,
}

impl AffineTransform {
    pub fn identity(sx: usize, sy: usize) -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            sx,
            sy,
        }
    }

    /// Builds the matrix for an image, using its row count as `sx` and its
    /// column count as `sy` so the center fold lands on the image center.
    pub fn for_image(p: &TransformParams, image: &ImageTensor) -> Result<Self> {
        build_matrix(p, image.height(), image.width())
    }

    pub fn is_identity(&self) -> bool {
        self.m == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    }

    /// Maps an output index to its (real-valued) source index.
    #[inline]
    pub fn apply(&self, i: f64, j: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * i + m[0][1] * j + m[0][2],
            m[1][0] * i + m[1][1] * j + m[1][2],
        )
    }

    /// The transform whose index map undoes this one.
    pub fn inverse(&self) -> Result<Self> {
        let [[a, b, c], [d, e, f]] = self.m;
        let det = a * e - b * d;
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::Singular(format!("determinant {det}")));
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Self {
            m: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]],
            sx: self.sx,
            sy: self.sy,
        })
    }
}

/// Evaluates the closed-form index matrix for `p` on an `sx × sy` image.
///
/// With `a = shear_x − rotation` and `b = shear_y + rotation` (radians):
///
/// ```text
/// T11 = z cos a / cos hx        T12 = z sin a / cos hx
/// T13 = (sx cos hx − sx z cos a + 2 tx z cos a − sy z sin a + 2 ty z sin a) / (2 cos hx)
/// T21 = z sin b / cos hy        T22 = z cos b / cos hy
/// T23 = (sy cos hy − sy z cos b + 2 ty z cos b − sx z sin b + 2 tx z sin b) / (2 cos hy)
/// ```
pub fn build_matrix(p: &TransformParams, sx: usize, sy: usize) -> Result<AffineTransform> {
    if sx == 0 || sy == 0 {
        return Err(dim_err("transform needs a non-empty image size"));
    }
    let (hx, hy) = (p.shear_x.to_radians(), p.shear_y.to_radians());
    let r = p.rotation.to_radians();
    let (cx, cy) = (hx.cos(), hy.cos());
    if cx.abs() < 1e-9 || cy.abs() < 1e-9 {
        return Err(Error::Singular(format!(
            "shear angles ({}°, {}°) make the matrix singular",
            p.shear_x, p.shear_y
        )));
    }
    let a = hx - r;
    let b = hy + r;
    let z = p.zoom;
    let (sxf, syf) = (sx as f64, sy as f64);
    let (tx, ty) = (p.tx, p.ty);

    let t11 = z * a.cos() / cx;
    let t12 = z * a.sin() / cx;
    let t13 = (sxf * cx - sxf * z * a.cos()) / (2.0 * cx)
        + (2.0 * tx * z * a.cos() - syf * z * a.sin() + 2.0 * ty * z * a.sin()) / (2.0 * cx);
    let t21 = z * b.sin() / cy;
    let t22 = z * b.cos() / cy;
    let t23 = (syf * cy - syf * z * b.cos()) / (2.0 * cy)
        + (2.0 * ty * z * b.cos() - sxf * z * b.sin() + 2.0 * tx * z * b.sin()) / (2.0 * cy);

    Ok(AffineTransform {
        m: [[t11, t12, t13], [t21, t22, t23]],
        sx,
        sy,
    })
}

/// Bilinear gather taps for one output pixel: up to four `(flat pixel, weight)`
/// pairs with non-zero weight. Source coordinates are clamped to the image.
#[inline]
fn taps(t: &AffineTransform, i: usize, j: usize, h: usize, w: usize) -> ([(usize, f64); 4], usize) {
    let (si, sj) = t.apply(i as f64, j as f64);
    let si = si.clamp(0.0, (h - 1) as f64);
    let sj = sj.clamp(0.0, (w - 1) as f64);
    let i0 = si.floor() as usize;
    let j0 = sj.floor() as usize;
    let fi = si - i0 as f64;
    let fj = sj - j0 as f64;
    let i1 = (i0 + 1).min(h - 1);
    let j1 = (j0 + 1).min(w - 1);

    let mut out = [(0usize, 0.0f64); 4];
    let mut n = 0;
    for (ii, jj, wt) in [
        (i0, j0, (1.0 - fi) * (1.0 - fj)),
        (i0, j1, (1.0 - fi) * fj),
        (i1, j0, fi * (1.0 - fj)),
        (i1, j1, fi * fj),
    ] {
        if wt != 0.0 {
            out[n] = (ii * w + jj, wt);
            n += 1;
        }
    }
    (out, n)
}

/// Resamples `x` through `t` with bilinear interpolation and clamp-to-edge
/// boundaries. The output has the same shape as the input.
pub fn warp(x: &ImageTensor, t: &AffineTransform) -> ImageTensor {
    let (h, w, c) = x.shape();
    let mut out = ImageTensor::zeros(h, w, c);
    if t.is_identity() {
        out.data_mut().copy_from_slice(x.data());
        return out;
    }
    let src = x.data();
    for i in 0..h {
        for j in 0..w {
            let (tp, n) = taps(t, i, j, h, w);
            let dst = out.pixel_mut(i, j);
            for ch in 0..c {
                let (p0, w0) = tp[0];
                let mut acc = src[p0 * c + ch] * w0;
                for &(p, wt) in &tp[1..n] {
                    acc += src[p * c + ch] * wt;
                }
                dst[ch] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`warp`] with respect to the image: scatters `gout` back
/// through the transposed bilinear weights.
pub fn warp_gradient(gout: &ImageTensor, t: &AffineTransform) -> ImageTensor {
    let (h, w, c) = gout.shape();
    let mut gin = ImageTensor::zeros(h, w, c);
    if t.is_identity() {
        gin.data_mut().copy_from_slice(gout.data());
        return gin;
    }
    let dst = gin.data_mut();
    for i in 0..h {
        for j in 0..w {
            let (tp, n) = taps(t, i, j, h, w);
            let g = gout.pixel(i, j);
            for &(p, wt) in &tp[..n] {
                for ch in 0..c {
                    dst[p * c + ch] += g[ch] * wt;
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collapsed_ranges_give_identity_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_transform(&TransformRanges::identity(), &mut rng).unwrap();
        assert_eq!(p, TransformParams::IDENTITY);
    }

    #[test]
    fn inverted_range_is_a_config_error() {
        let mut ranges = TransformRanges::default();
        ranges.zoom = Range::new(1.1, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_transform(&ranges, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn two_draws_differ_and_stay_in_range() {
        let ranges = TransformRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = sample_transform(&ranges, &mut rng).unwrap();
        let b = sample_transform(&ranges, &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(ranges.contains(&a) && ranges.contains(&b));
    }

    #[test]
    fn right_angle_shear_is_singular() {
        let p = TransformParams {
            shear_x: 90.0,
            ..TransformParams::IDENTITY
        };
        assert!(matches!(build_matrix(&p, 8, 8), Err(Error::Singular(_))));
    }

    #[test]
    fn identity_params_give_exact_identity() {
        let t = build_matrix(&TransformParams::IDENTITY, 128, 96).unwrap();
        assert_eq!(t.m, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let p = TransformParams {
            tx: 1.3,
            ty: -0.7,
            rotation: 0.8,
            zoom: 1.02,
            shear_x: -0.5,
            shear_y: 0.9,
        };
        let t = build_matrix(&p, 32, 32).unwrap();
        let inv = t.inverse().unwrap();
        for &(i, j) in &[(0.0, 0.0), (5.0, 17.0), (31.0, 2.5)] {
            let (a, b) = t.apply(i, j);
            let (ri, rj) = inv.apply(a, b);
            assert!((ri - i).abs() < 1e-12 && (rj - j).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_shift_moves_interior_pixels_exactly() {
        let x = ImageTensor::from_fn(6, 7, 2, |i, j, c| (i * 31 + j * 7 + c) as f64 * 0.1);
        let t = build_matrix(&TransformParams::translation(1.0, 0.0), 6, 7).unwrap();
        let y = warp(&x, &t);
        for i in 0..5 {
            for j in 0..7 {
                for c in 0..2 {
                    assert_eq!(y.get(i, j, c), x.get(i + 1, j, c));
                }
            }
        }
        // last row samples past the edge and clamps
        assert_eq!(y.get(5, 3, 0), x.get(5, 3, 0));
    }

    #[test]
    fn identity_gradient_passes_through() {
        let g = ImageTensor::from_fn(4, 5, 1, |i, j, _| (i as f64) - 0.3 * j as f64);
        let t = AffineTransform::identity(4, 5);
        assert_eq!(warp_gradient(&g, &t), g);
    }
}
