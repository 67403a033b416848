//! Temporal smoothness and PSNR.
//!
//! The high-frequency energy of a video `v` is
//! `D[i, j, t] = |v[i, j, t] − (G_σ ∗ v)[i, j, t]|²`, with `G_σ` a Gaussian
//! applied along time only. Smoothness compares that energy between a
//! reference and a reconstruction: `S = sqrt(ΣD(ref) / ΣD(rec))`. `S < 1`
//! means the reconstruction flickers more than the reference.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{ImageTensor, Mask};

/// Normalized temporal Gaussian, truncated at ±3σ.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalFilter {
    pub sigma_seconds: f64,
    pub frame_rate: f64,
    kernel: Vec<f64>,
}

impl TemporalFilter {
    pub const DEFAULT_SIGMA_SECONDS: f64 = 0.15;
    pub const DEFAULT_FRAME_RATE: f64 = 25.0;

    pub fn new(sigma_seconds: f64, frame_rate: f64) -> Result<Self> {
        if !(sigma_seconds > 0.0
            && frame_rate > 0.0
            && sigma_seconds.is_finite()
            && frame_rate.is_finite())
        {
            return Err(Error::Config(format!(
                "temporal filter needs positive sigma and frame rate, got {sigma_seconds} s at {frame_rate} fps"
            )));
        }
        let sigma = sigma_seconds * frame_rate;
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= sum);
        Ok(Self {
            sigma_seconds,
            frame_rate,
            kernel,
        })
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn radius(&self) -> usize {
        self.kernel.len() / 2
    }

    pub fn support(&self) -> usize {
        self.kernel.len()
    }

    pub fn center_weight(&self) -> f64 {
        self.kernel[self.radius()]
    }
}

impl Default for TemporalFilter {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SIGMA_SECONDS, Self::DEFAULT_FRAME_RATE).expect("valid defaults")
    }
}

/// Mirror index into `[0, len)` without repeating the edge sample.
#[inline]
fn reflect(t: i64, len: i64) -> usize {
    let period = 2 * (len - 1);
    if period == 0 {
        return 0;
    }
    let mut m = t.rem_euclid(period);
    if m >= len {
        m = period - m;
    }
    m as usize
}

fn check_sequence(seq: &[ImageTensor], filt: &TemporalFilter, mask: Option<&[Mask]>) -> Result<()> {
    if seq.len() < filt.support() {
        return Err(Error::SequenceLength {
            len: seq.len(),
            needed: filt.support(),
        });
    }
    let shape = seq[0].shape();
    if seq.iter().any(|f| f.shape() != shape) {
        return Err(dim_err("frames of a sequence differ in shape"));
    }
    if let Some(m) = mask {
        if m.len() != seq.len() || m.iter().any(|m| m.shape() != shape) {
            return Err(dim_err("mask does not match the sequence"));
        }
    }
    Ok(())
}

/// Per-value high-frequency energy `D`, one image per frame. Values outside
/// `mask` are zero when a mask is given. Boundaries use mirror padding.
pub fn highpass_energy(
    seq: &[ImageTensor],
    filt: &TemporalFilter,
    mask: Option<&[Mask]>,
) -> Result<Vec<ImageTensor>> {
    check_sequence(seq, filt, mask)?;
    let len = seq.len() as i64;
    let r = filt.radius() as i64;
    let (h, w, c) = seq[0].shape();
    let n = h * w * c;
    let mut out = Vec::with_capacity(seq.len());
    // v − G∗v accumulated as Σ_k g_k (v_t − v_{t+k}), which is exactly zero
    // on constant signals whatever the rounding of the kernel sum.
    let mut high = vec![0.0; n];
    for t in 0..len {
        high.iter_mut().for_each(|v| *v = 0.0);
        let frame = seq[t as usize].data();
        for (k, &wt) in filt.kernel().iter().enumerate() {
            let src = seq[reflect(t + k as i64 - r, len)].data();
            for ((e, &v), &s) in high.iter_mut().zip(frame).zip(src) {
                *e += wt * (v - s);
            }
        }
        let bits = mask.map(|m| m[t as usize].bits());
        let d: Vec<f64> = (0..n)
            .map(|k| {
                if bits.is_some_and(|b| !b[k]) {
                    0.0
                } else {
                    high[k] * high[k]
                }
            })
            .collect();
        out.push(ImageTensor::from_vec(h, w, c, d)?);
    }
    Ok(out)
}

/// `ΣD` over a sequence (masked values only when a mask is given).
pub fn highpass_energy_sum(
    seq: &[ImageTensor],
    filt: &TemporalFilter,
    mask: Option<&[Mask]>,
) -> Result<f64> {
    Ok(highpass_energy(seq, filt, mask)?
        .iter()
        .map(ImageTensor::sum)
        .sum())
}

/// `sqrt(ref_energy / rec_energy)` with the conventions `0/0 → 1` and
/// `x/0 → +∞`.
pub fn smoothness_ratio(ref_energy: f64, rec_energy: f64) -> f64 {
    match (ref_energy == 0.0, rec_energy == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => (ref_energy / rec_energy).sqrt(),
    }
}

/// Smoothness `S` of `rec` relative to `reference`.
pub fn smoothness(
    reference: &[ImageTensor],
    rec: &[ImageTensor],
    filt: &TemporalFilter,
    mask: Option<&[Mask]>,
) -> Result<f64> {
    if reference.len() != rec.len() {
        return Err(dim_err(format!(
            "reference has {} frames, reconstruction {}",
            reference.len(),
            rec.len()
        )));
    }
    if reference
        .iter()
        .zip(rec)
        .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(dim_err(
            "reference and reconstruction frames differ in shape",
        ));
    }
    Ok(smoothness_ratio(
        highpass_energy_sum(reference, filt, mask)?,
        highpass_energy_sum(rec, filt, mask)?,
    ))
}

/// Sum of squared errors and the number of values it covers.
pub fn squared_error(
    reference: &[ImageTensor],
    rec: &[ImageTensor],
    mask: Option<&[Mask]>,
) -> Result<(f64, usize)> {
    if reference.len() != rec.len() {
        return Err(dim_err(
            "reference and reconstruction differ in frame count",
        ));
    }
    if let Some(m) = mask {
        if m.len() != reference.len() {
            return Err(dim_err("mask does not match frame count"));
        }
    }
    let (mut sse, mut count) = (0.0, 0usize);
    for (t, (a, b)) in reference.iter().zip(rec).enumerate() {
        a.check_same_shape(b, "psnr frames")?;
        let bits = match mask {
            Some(m) => {
                if m[t].shape() != a.shape() {
                    return Err(dim_err("mask shape differs from frame shape"));
                }
                Some(m[t].bits())
            }
            None => None,
        };
        for (k, (p, q)) in a.data().iter().zip(b.data()).enumerate() {
            if bits.is_none_or(|b| b[k]) {
                sse += (p - q) * (p - q);
                count += 1;
            }
        }
    }
    Ok((sse, count))
}

/// `10·log10(peak² / MSE)`; returns `+∞` when the inputs agree exactly.
pub fn psnr_from_error(sse: f64, count: usize, peak: f64) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = sse / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn psnr(
    reference: &[ImageTensor],
    rec: &[ImageTensor],
    peak: f64,
    mask: Option<&[Mask]>,
) -> Result<f64> {
    let (sse, count) = squared_error(reference, rec, mask)?;
    psnr_from_error(sse, count, peak)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMetrics {
    pub psnr: f64,
    pub smoothness: f64,
    pub masked_pixels: usize,
}

/// Aggregate and per-sequence quality of a reconstructed sequence set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// PSNR over all evaluated values of all sequences.
    pub psnr: f64,
    /// `S` from energies summed over all sequences.
    pub smoothness: f64,
    pub masked_pixels: usize,
    pub per_sequence: Vec<SequenceMetrics>,
}

/// Builds a [`MetricReport`]: masked PSNR and masked smoothness per sequence,
/// pooled across sequences for the aggregate.
pub fn report(
    references: &[Vec<ImageTensor>],
    recs: &[Vec<ImageTensor>],
    masks: Option<&[Vec<Mask>]>,
    peak: f64,
    filt: &TemporalFilter,
) -> Result<MetricReport> {
    if references.len() != recs.len() || masks.is_some_and(|m| m.len() != references.len()) {
        return Err(dim_err(
            "reference, reconstruction and mask sets differ in length",
        ));
    }
    let (mut sse, mut count, mut e_ref, mut e_rec) = (0.0, 0usize, 0.0, 0.0);
    let mut per_sequence = Vec::with_capacity(references.len());
    for (s, (r, p)) in references.iter().zip(recs).enumerate() {
        let m = masks.map(|m| m[s].as_slice());
        let (se, n) = squared_error(r, p, m)?;
        let (er, ep) = (
            highpass_energy_sum(r, filt, m)?,
            highpass_energy_sum(p, filt, m)?,
        );
        per_sequence.push(SequenceMetrics {
            psnr: if n == 0 {
                f64::NAN
            } else {
                psnr_from_error(se, n, peak)?
            },
            smoothness: smoothness_ratio(er, ep),
            masked_pixels: n,
        });
        sse += se;
        count += n;
        e_ref += er;
        e_rec += ep;
    }
    Ok(MetricReport {
        psnr: psnr_from_error(sse, count, peak)?,
        smoothness: smoothness_ratio(e_ref, e_rec),
        masked_pixels: count,
        per_sequence,
    })
}
