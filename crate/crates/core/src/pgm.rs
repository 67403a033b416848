//! 16-bit binary PGM (`P5`) dumps, one file per channel.
//!
//! Samples are stored big-endian as Netpbm requires for `maxval > 255`.
//! Real values are quantized as `round(v / scale · 65535)` after clamping to
//! `[0, scale]`; the scale is written into a `# scale <value>` header comment
//! and recovered on read.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const MAXVAL: f64 = 65535.0;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "PGM",
        msg: msg.into(),
    }
}

/// Writes channel `c` of `img` to `path`.
pub fn write_channel(path: &Path, img: &ImageTensor, c: usize, scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format_err(format!("invalid scale {scale}")));
    }
    let (h, w, _) = img.shape();
    let mut buf = Vec::with_capacity(64 + 2 * h * w);
    write!(
        buf,
        "P5\n# 16-bit big-endian samples; value = sample / 65535 * scale\n# scale {scale:e}\n{w} {h}\n65535\n"
    )?;
    for i in 0..h {
        for j in 0..w {
            let v = img.get(i, j, c).clamp(0.0, scale);
            let s = (v / scale * MAXVAL).round() as u16;
            buf.extend_from_slice(&s.to_be_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a single-channel image written by [`write_channel`].
pub fn read_channel(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut scale = 1.0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(format_err("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            let line = String::from_utf8_lossy(&bytes[pos + 1..end]);
            if let Some(s) = line.trim().strip_prefix("scale ") {
                scale = s
                    .trim()
                    .parse()
                    .map_err(|_| format_err(format!("bad scale comment {s:?}")))?;
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(format_err(format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| format_err(format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 65535 {
        return Err(format_err(format!("expected maxval 65535, got {maxval}")));
    }
    let raster = bytes
        .get(pos..pos + 2 * w * h)
        .ok_or_else(|| format_err("truncated raster"))?;
    let data = raster
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / MAXVAL * scale)
        .collect();
    ImageTensor::from_vec(h, w, 1, data)
}

/// File names used for a multi-channel image: `stem.pgm` for one channel,
/// otherwise `stem_c0.pgm`, `stem_c1.pgm`, ...
pub fn channel_paths(dir: &Path, stem: &str, channels: usize) -> Vec<PathBuf> {
    if channels == 1 {
        vec![dir.join(format!("{stem}.pgm"))]
    } else {
        (0..channels)
            .map(|c| dir.join(format!("{stem}_c{c}.pgm")))
            .collect()
    }
}

pub fn write_image(dir: &Path, stem: &str, img: &ImageTensor, scale: f64) -> Result<Vec<PathBuf>> {
    let paths = channel_paths(dir, stem, img.channels());
    for (c, p) in paths.iter().enumerate() {
        write_channel(p, img, c, scale)?;
    }
    Ok(paths)
}

pub fn read_image(dir: &Path, stem: &str, channels: usize) -> Result<ImageTensor> {
    let planes = channel_paths(dir, stem, channels)
        .iter()
        .map(|p| read_channel(p))
        .collect::<Result<Vec<_>>>()?;
    let (h, w, _) = planes[0].shape();
    if planes.iter().any(|p| p.shape() != (h, w, 1)) {
        return Err(format_err("channel planes differ in size"));
    }
    Ok(ImageTensor::from_fn(h, w, channels, |i, j, c| {
        planes[c].get(i, j, 0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(5, 7, 2, |i, j, c| {
            (i * 7 + j) as f64 / 35.0 * 4.0 + c as f64 * 0.01
        });
        write_image(dir.path(), "frame", &img, 4.0).unwrap();
        let back = read_image(dir.path(), "frame", 2).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img) <= 4.0 / 65535.0);
    }

    #[test]
    fn header_is_standard_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_channel(&p, &ImageTensor::filled(2, 3, 1, 1.0), 0, 1.0).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n"));
        assert_eq!(&bytes[bytes.len() - 2..], &[0xff, 0xff]);
    }
}
