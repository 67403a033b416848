//! Layer kernels on channels-last feature maps. Convolutions go through an
//! explicit im2col buffer and a dense GEMM.

use crate::tensor::ImageTensor;

/// `c = a · b + beta · c` for row-major `a` (m×k), `b` (k×n), `c` (m×n), with
/// arbitrary strides for `a` and `b` so transposes are free.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the index bounds above hold for every caller in this module; the
    // output is a distinct, densely packed m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a same-padded convolution with the given stride.
#[inline]
pub(crate) fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Unfolds `x` into a `(ho·wo) × (k·k·cin)` patch matrix, zero padded.
pub(crate) fn im2col(x: &ImageTensor, k: usize, stride: usize) -> Vec<f64> {
    let (h, w, cin) = x.shape();
    let pad = k / 2;
    let (ho, wo) = (conv_out_len(h, stride), conv_out_len(w, stride));
    let row = k * k * cin;
    let mut col = vec![0.0; ho * wo * row];
    let src = x.data();
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * row;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * cin;
                    let d = base + (ky * k + kx) * cin;
                    col[d..d + cin].copy_from_slice(&src[s..s + cin]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input grid.
pub(crate) fn col2im(
    gcol: &[f64],
    (h, w, cin): (usize, usize, usize),
    k: usize,
    stride: usize,
) -> ImageTensor {
    let pad = k / 2;
    let (ho, wo) = (conv_out_len(h, stride), conv_out_len(w, stride));
    let row = k * k * cin;
    let mut out = ImageTensor::zeros(h, w, cin);
    let dst = out.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * row;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy as usize * w + ix as usize) * cin;
                    let s = base + (ky * k + kx) * cin;
                    for (a, b) in dst[d..d + cin].iter_mut().zip(&gcol[s..s + cin]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

/// Same-padded convolution. Weights are laid out `[ky][kx][cin][cout]`.
/// Returns the output and the patch matrix needed for the backward pass.
pub(crate) fn conv_forward(
    x: &ImageTensor,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
) -> (ImageTensor, Vec<f64>) {
    let (h, w, cin) = x.shape();
    let cout = bias.len();
    let (ho, wo) = (conv_out_len(h, stride), conv_out_len(w, stride));
    let kk = k * k * cin;
    debug_assert_eq!(weight.len(), kk * cout);
    let col = im2col(x, k, stride);
    let mut out = ImageTensor::zeros(ho, wo, cout);
    {
        let o = out.data_mut();
        for px in o.chunks_exact_mut(cout) {
            px.copy_from_slice(bias);
        }
        gemm(ho * wo, kk, cout, &col, (kk, 1), weight, (cout, 1), 1.0, o);
    }
    (out, col)
}

/// Accumulates weight/bias gradients and optionally returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    gout: &ImageTensor,
    col: &[f64],
    in_shape: (usize, usize, usize),
    weight: &[f64],
    k: usize,
    stride: usize,
    gweight: &mut [f64],
    gbias: &mut [f64],
    need_input_grad: bool,
) -> Option<ImageTensor> {
    let (ho, wo, cout) = gout.shape();
    let kk = k * k * in_shape.2;
    let g = gout.data();
    // dW += colᵀ · gout
    gemm(kk, ho * wo, cout, col, (1, kk), g, (cout, 1), 1.0, gweight);
    for px in g.chunks_exact(cout) {
        for (b, v) in gbias.iter_mut().zip(px) {
            *b += v;
        }
    }
    if !need_input_grad {
        return None;
    }
    // dcol = gout · Wᵀ
    let mut gcol = vec![0.0; ho * wo * kk];
    gemm(
        ho * wo,
        cout,
        kk,
        g,
        (cout, 1),
        weight,
        (1, cout),
        0.0,
        &mut gcol,
    );
    Some(col2im(&gcol, in_shape, k, stride))
}

/// 2×2, stride-2 transposed convolution. Weights are laid out
/// `[cin][ky][kx][cout]`, so the forward pass is a single GEMM followed by a
/// pixel shuffle.
pub(crate) fn tconv_forward(x: &ImageTensor, weight: &[f64], bias: &[f64]) -> ImageTensor {
    let (h, w, cin) = x.shape();
    let cout = bias.len();
    let n = 4 * cout;
    let mut tmp = vec![0.0; h * w * n];
    gemm(
        h * w,
        cin,
        n,
        x.data(),
        (cin, 1),
        weight,
        (n, 1),
        0.0,
        &mut tmp,
    );
    let mut out = ImageTensor::zeros(2 * h, 2 * w, cout);
    for iy in 0..h {
        for ix in 0..w {
            let t = &tmp[(iy * w + ix) * n..(iy * w + ix + 1) * n];
            for ky in 0..2 {
                for kx in 0..2 {
                    let dst = out.pixel_mut(2 * iy + ky, 2 * ix + kx);
                    let src = &t[(ky * 2 + kx) * cout..(ky * 2 + kx + 1) * cout];
                    for ((d, s), b) in dst.iter_mut().zip(src).zip(bias) {
                        *d = s + b;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn tconv_backward(
    gout: &ImageTensor,
    x: &ImageTensor,
    weight: &[f64],
    gweight: &mut [f64],
    gbias: &mut [f64],
    need_input_grad: bool,
) -> Option<ImageTensor> {
    let (h, w, cin) = x.shape();
    let cout = gbias.len();
    let n = 4 * cout;
    let mut gtmp = vec![0.0; h * w * n];
    for iy in 0..h {
        for ix in 0..w {
            let t = &mut gtmp[(iy * w + ix) * n..(iy * w + ix + 1) * n];
            for ky in 0..2 {
                for kx in 0..2 {
                    let src = gout.pixel(2 * iy + ky, 2 * ix + kx);
                    t[(ky * 2 + kx) * cout..(ky * 2 + kx + 1) * cout].copy_from_slice(src);
                    for (b, v) in gbias.iter_mut().zip(src) {
                        *b += v;
                    }
                }
            }
        }
    }
    // dW += xᵀ · gtmp
    gemm(
        cin,
        h * w,
        n,
        x.data(),
        (1, cin),
        &gtmp,
        (n, 1),
        1.0,
        gweight,
    );
    if !need_input_grad {
        return None;
    }
    let mut gin = ImageTensor::zeros(h, w, cin);
    gemm(
        h * w,
        n,
        cin,
        &gtmp,
        (n, 1),
        weight,
        (1, n),
        0.0,
        gin.data_mut(),
    );
    Some(gin)
}

/// 2×2 max pooling; returns the output and the flat source index of each maximum.
pub(crate) fn maxpool_forward(x: &ImageTensor) -> (ImageTensor, Vec<usize>) {
    let (h, w, c) = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = ImageTensor::zeros(ho, wo, c);
    let mut arg = vec![0usize; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut best = x.index(2 * oy, 2 * ox, ch);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = x.index(2 * oy + dy, 2 * ox + dx, ch);
                    if x.data()[k] > x.data()[best] {
                        best = k;
                    }
                }
                let o = out.index(oy, ox, ch);
                out.data_mut()[o] = x.data()[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(
    gout: &ImageTensor,
    arg: &[usize],
    in_shape: (usize, usize, usize),
) -> ImageTensor {
    let mut gin = ImageTensor::zeros(in_shape.0, in_shape.1, in_shape.2);
    let d = gin.data_mut();
    for (g, &k) in gout.data().iter().zip(arg) {
        d[k] += g;
    }
    gin
}

pub(crate) fn upsample_forward(x: &ImageTensor) -> ImageTensor {
    let (h, w, c) = x.shape();
    ImageTensor::from_fn(2 * h, 2 * w, c, |i, j, ch| x.get(i / 2, j / 2, ch))
}

pub(crate) fn upsample_backward(gout: &ImageTensor) -> ImageTensor {
    let (h, w, c) = gout.shape();
    let mut gin = ImageTensor::zeros(h / 2, w / 2, c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let k = gin.index(i / 2, j / 2, ch);
                gin.data_mut()[k] += gout.get(i, j, ch);
            }
        }
    }
    gin
}

pub(crate) fn concat_forward(a: &ImageTensor, b: &ImageTensor) -> ImageTensor {
    let (h, w, ca) = a.shape();
    let cb = b.channels();
    let mut out = ImageTensor::zeros(h, w, ca + cb);
    for i in 0..h {
        for j in 0..w {
            let dst = out.pixel_mut(i, j);
            dst[..ca].copy_from_slice(a.pixel(i, j));
            dst[ca..].copy_from_slice(b.pixel(i, j));
        }
    }
    out
}

pub(crate) fn concat_backward(gout: &ImageTensor, ca: usize) -> (ImageTensor, ImageTensor) {
    let (h, w, c) = gout.shape();
    let ga = ImageTensor::from_fn(h, w, ca, |i, j, ch| gout.get(i, j, ch));
    let gb = ImageTensor::from_fn(h, w, c - ca, |i, j, ch| gout.get(i, j, ca + ch));
    (ga, gb)
}
