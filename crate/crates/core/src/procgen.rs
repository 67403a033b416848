//! Seeded procedural scenes for the saturation-recovery task.
//!
//! A scene is a smooth low-intensity background, a set of bright features
//! (disks and rectangles with a dome-shaped intensity profile) and a few dark
//! beams drawn on top. Every pixel is rendered with 4×4 supersampling, so
//! feature and beam edges carry fractional coverage. The ground truth `y`
//! keeps intensities above 1; the input `x` is `y` clipped to `[0, 1]`.
//!
//! Training frames are static. Test sequences animate every feature along a
//! linear drift plus a sinusoidal wobble; beams stay fixed.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::pgm;
use crate::seed::{rng_for, streams};
use crate::tensor::{ImageTensor, Mask};
use crate::transform::Range;

const SUPERSAMPLE: usize = 4;
/// Feature counts in [`SceneSpec::feature_count`] refer to this image size and
/// scale with area.
const REFERENCE_SIZE: f64 = 32.0;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Disk,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub image_size: usize,
    /// Number of features on a 32×32 image; scaled by area for other sizes.
    pub feature_count: (usize, usize),
    pub kinds: Vec<FeatureKind>,
    /// Radius (disks) or half extent (rectangles) in pixels.
    pub feature_size: Range,
    pub peak_intensity: Range,
    pub y_max: f64,
    /// Intensity range of the background gradient endpoints.
    pub background: Range,
    pub beam_count: (usize, usize),
    pub beam_width: Range,
    pub beam_intensity: Range,
    /// Upper bound on a feature center's displacement per frame, in pixels.
    pub max_speed: f64,
    /// Accepted fraction of saturated pixels in a static frame (or the first
    /// frame of a sequence). Scenes outside the band are redrawn.
    pub saturation_band: (f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 32,
            feature_count: (2, 5),
            kinds: vec![FeatureKind::Disk, FeatureKind::Rectangle],
            feature_size: Range::new(2.5, 7.0),
            peak_intensity: Range::new(1.2, 4.0),
            y_max: 4.0,
            background: Range::new(0.05, 0.45),
            beam_count: (0, 2),
            beam_width: Range::new(1.0, 3.0),
            beam_intensity: Range::new(0.0, 0.2),
            max_speed: 2.0,
            saturation_band: (0.01, 0.60),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(config_err("image size must be positive"));
        }
        if self.kinds.is_empty() {
            return Err(config_err("at least one feature kind is required"));
        }
        if self.feature_count.0 > self.feature_count.1 || self.beam_count.0 > self.beam_count.1 {
            return Err(config_err("count ranges must satisfy min <= max"));
        }
        for (name, r) in [
            ("feature size", self.feature_size),
            ("peak intensity", self.peak_intensity),
            ("background", self.background),
            ("beam width", self.beam_width),
            ("beam intensity", self.beam_intensity),
        ] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max || r.min < 0.0 {
                return Err(config_err(format!(
                    "{name} range is invalid: [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        if self.peak_intensity.max > self.y_max {
            return Err(config_err(format!(
                "peak intensity {} exceeds y_max {}",
                self.peak_intensity.max, self.y_max
            )));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(config_err("max speed must be finite and non-negative"));
        }
        if self.saturation_band.0 > self.saturation_band.1 {
            return Err(config_err("saturation band must satisfy min <= max"));
        }
        Ok(())
    }

    fn can_saturate(&self) -> bool {
        self.peak_intensity.max > 1.0
    }
}

fn draw(r: Range, rng: &mut ChaCha8Rng) -> f64 {
    if r.min == r.max {
        r.min
    } else {
        rng.random_range(r.min..=r.max)
    }
}

fn draw_count((lo, hi): (usize, usize), scale: f64, rng: &mut ChaCha8Rng) -> usize {
    let n = if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    };
    ((n as f64) * scale).round() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub kind: FeatureKind,
    /// Center at frame 0, `(row, column)`.
    pub center: (f64, f64),
    pub size: f64,
    pub peak: f64,
    /// Per-frame linear drift.
    pub velocity: (f64, f64),
    pub wobble_amplitude: (f64, f64),
    /// Radians per frame.
    pub wobble_frequency: f64,
    pub wobble_phase: f64,
}

impl Feature {
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        let s = (self.wobble_frequency * t + self.wobble_phase).sin() - self.wobble_phase.sin();
        (
            self.center.0 + self.velocity.0 * t + self.wobble_amplitude.0 * s,
            self.center.1 + self.velocity.1 * t + self.wobble_amplitude.1 * s,
        )
    }

    /// Intensity at `(pi, pj)` when centered at `c`, or `None` outside the shape.
    fn shade(&self, c: (f64, f64), pi: f64, pj: f64) -> Option<f64> {
        let u = (pi - c.0) / self.size;
        let v = (pj - c.1) / self.size;
        let s2 = match self.kind {
            FeatureKind::Disk => u * u + v * v,
            FeatureKind::Rectangle => (u * u).max(v * v),
        };
        (s2 <= 1.0).then_some(self.peak * (1.0 - 0.7 * s2))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    /// A point on the beam's center line and its unit normal.
    pub point: (f64, f64),
    pub normal: (f64, f64),
    pub width: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub background: (f64, f64),
    pub background_dir: (f64, f64),
    pub features: Vec<Feature>,
    pub beams: Vec<Beam>,
}

impl Scene {
    fn sample(spec: &SceneSpec, animated: bool, rng: &mut ChaCha8Rng) -> Self {
        let size = spec.image_size as f64;
        let area_scale = (size / REFERENCE_SIZE).powi(2);
        let theta = rng.random_range(0.0..TAU);
        let background = (draw(spec.background, rng), draw(spec.background, rng));
        let n_features = draw_count(spec.feature_count, area_scale, rng).max(1);
        let mut features = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
            let fsize = draw(spec.feature_size, rng);
            let margin = (fsize * 0.5).min(size * 0.5);
            let center = (
                rng.random_range(margin..=size - margin),
                rng.random_range(margin..=size - margin),
            );
            let peak = draw(spec.peak_intensity, rng);
            let mut f = Feature {
                kind,
                center,
                size: fsize,
                peak,
                velocity: (0.0, 0.0),
                wobble_amplitude: (0.0, 0.0),
                wobble_frequency: 0.0,
                wobble_phase: 0.0,
            };
            if animated && spec.max_speed > 0.0 {
                // |Δc| per frame <= |v| + |A|·ω, split between drift and wobble
                let budget = spec.max_speed * rng.random_range(0.25..=1.0);
                let drift_share = rng.random_range(0.0..=0.3);
                let drift_dir = rng.random_range(0.0..TAU);
                let speed = budget * drift_share;
                f.velocity = (speed * drift_dir.cos(), speed * drift_dir.sin());
                let amp = rng.random_range(2.0..=(size / 4.0).max(2.0));
                let wobble_dir = rng.random_range(0.0..TAU);
                f.wobble_amplitude = (amp * wobble_dir.cos(), amp * wobble_dir.sin());
                f.wobble_frequency = budget * (1.0 - drift_share) / amp;
                f.wobble_phase = rng.random_range(0.0..TAU);
            }
            features.push(f);
        }
        let n_beams = draw_count(spec.beam_count, 1.0, rng);
        let beams = (0..n_beams)
            .map(|_| {
                let phi = rng.random_range(0.0..TAU);
                Beam {
                    point: (rng.random_range(0.0..=size), rng.random_range(0.0..=size)),
                    normal: (phi.cos(), phi.sin()),
                    width: draw(spec.beam_width, rng),
                    intensity: draw(spec.beam_intensity, rng),
                }
            })
            .collect();
        Scene {
            size: spec.image_size,
            background,
            background_dir: (theta.cos(), theta.sin()),
            features,
            beams,
        }
    }

    fn radiance(&self, centers: &[(f64, f64)], pi: f64, pj: f64) -> f64 {
        let size = self.size as f64;
        // projection onto the gradient direction, normalized to [0, 1] over the image
        let s = ((pi - size / 2.0) * self.background_dir.0
            + (pj - size / 2.0) * self.background_dir.1)
            / (size * std::f64::consts::SQRT_2)
            + 0.5;
        let mut v = self.background.0 + (self.background.1 - self.background.0) * s;
        for (f, &c) in self.features.iter().zip(centers) {
            if let Some(val) = f.shade(c, pi, pj) {
                v = val;
            }
        }
        for b in &self.beams {
            let d = (pi - b.point.0) * b.normal.0 + (pj - b.point.1) * b.normal.1;
            if d.abs() <= b.width / 2.0 {
                v = b.intensity;
            }
        }
        v
    }

    /// Renders the ground-truth radiance at frame `t`.
    pub fn render(&self, t: f64) -> ImageTensor {
        let centers: Vec<_> = self.features.iter().map(|f| f.center_at(t)).collect();
        let n = SUPERSAMPLE as f64;
        ImageTensor::from_fn(self.size, self.size, 1, |i, j, _| {
            let mut acc = 0.0;
            for si in 0..SUPERSAMPLE {
                for sj in 0..SUPERSAMPLE {
                    let pi = i as f64 + (si as f64 + 0.5) / n;
                    let pj = j as f64 + (sj as f64 + 0.5) / n;
                    acc += self.radiance(&centers, pi, pj);
                }
            }
            acc / (n * n)
        })
    }
}

/// Ground truth, clipped input and saturation mask for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub y: ImageTensor,
    pub x: ImageTensor,
    pub mask: Mask,
}

impl FramePair {
    pub fn from_ground_truth(y: ImageTensor) -> Self {
        let x = y.clamp(0.0, 1.0);
        let mask = Mask::from_predicate(&y, |v| v > 1.0);
        Self { y, x, mask }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSet {
    pub sequences: Vec<Vec<FramePair>>,
    pub frame_rate: f64,
}

impl SequenceSet {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

fn in_band(spec: &SceneSpec, frame: &FramePair) -> bool {
    let frac = frame.mask.fraction();
    let (lo, hi) = spec.saturation_band;
    frac <= hi && (!spec.can_saturate() || frac >= lo)
}

/// Draws scene `index` of `stream`, redrawing (deterministically) while its
/// first frame falls outside the saturation band.
pub fn generate_scene(spec: &SceneSpec, stream: u64, index: u64, animated: bool) -> Result<Scene> {
    spec.validate()?;
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(
            spec.seed,
            stream,
            index.wrapping_mul(MAX_ATTEMPTS) + attempt,
        );
        let scene = Scene::sample(spec, animated, &mut rng);
        let frame = FramePair::from_ground_truth(scene.render(0.0));
        if in_band(spec, &frame) {
            return Ok(scene);
        }
        last = Some(scene);
    }
    Ok(last.expect("at least one attempt"))
}

/// `count` independent static scenes.
pub fn generate_training_set(spec: &SceneSpec, count: usize) -> Result<Vec<FramePair>> {
    (0..count as u64)
        .map(|k| {
            let scene = generate_scene(spec, streams::TRAIN_SCENES, k, false)?;
            Ok(FramePair::from_ground_truth(scene.render(0.0)))
        })
        .collect()
}

/// `sequences` moving scenes of `frames` frames each at `frame_rate` fps.
pub fn generate_test_sequences(
    spec: &SceneSpec,
    sequences: usize,
    frames: usize,
    frame_rate: f64,
) -> Result<SequenceSet> {
    if frames < 2 {
        return Err(config_err("a test sequence needs at least 2 frames"));
    }
    let sequences = (0..sequences as u64)
        .map(|s| {
            let scene = generate_scene(spec, streams::TEST_SCENES, s, true)?;
            Ok((0..frames)
                .map(|t| FramePair::from_ground_truth(scene.render(t as f64)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceSet {
        sequences,
        frame_rate,
    })
}

pub const MANIFEST_NAME: &str = "manifest.txt";

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "manifest",
        msg: msg.into(),
    }
}

/// Dumps a sequence set as 16-bit PGM frames plus `manifest.txt`.
///
/// The manifest starts with `#`-comment lines carrying `frame_rate`,
/// `y_max` and `channels`, followed by one line per frame:
/// `sequence frame x_file y_file mask_file`.
pub fn write_dataset(dir: &Path, set: &SequenceSet, y_max: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let channels = set
        .sequences
        .first()
        .and_then(|s| s.first())
        .map_or(1, |f| f.y.channels());
    let mut manifest = Vec::new();
    writeln!(manifest, "# frame_rate {}", set.frame_rate)?;
    writeln!(manifest, "# y_max {y_max}")?;
    writeln!(manifest, "# channels {channels}")?;
    writeln!(manifest, "# sequence frame x_file y_file mask_file")?;
    for (s, seq) in set.sequences.iter().enumerate() {
        for (t, fr) in seq.iter().enumerate() {
            let stem = format!("s{s:03}_f{t:04}");
            let name = |p: &Path| {
                p.file_name()
                    .expect("file path")
                    .to_string_lossy()
                    .into_owned()
            };
            let xs = pgm::write_image(dir, &format!("{stem}_x"), &fr.x, 1.0)?;
            let ys = pgm::write_image(dir, &format!("{stem}_y"), &fr.y, y_max)?;
            let ms = pgm::write_image(dir, &format!("{stem}_mask"), &fr.mask.to_image(), 1.0)?;
            // multi-channel images list their first plane; the rest follow the naming scheme
            writeln!(
                manifest,
                "{s} {t} {} {} {}",
                name(&xs[0]),
                name(&ys[0]),
                name(&ms[0])
            )?;
        }
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Reads a dump written by [`write_dataset`]. Returns the set and `y_max`.
pub fn read_dataset(dir: &Path) -> Result<(SequenceSet, f64)> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut frame_rate = 25.0;
    let mut y_max = 4.0;
    let mut channels = 1usize;
    let mut entries: Vec<(usize, usize, [String; 3])> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            let (k, v) = (it.next(), it.next());
            let parse_f = |v: Option<&str>| -> Result<f64> {
                v.and_then(|s| s.parse().ok())
                    .ok_or_else(|| manifest_err(format!("bad header line {line:?}")))
            };
            match k {
                Some("frame_rate") => frame_rate = parse_f(v)?,
                Some("y_max") => y_max = parse_f(v)?,
                Some("channels") => channels = parse_f(v)? as usize,
                _ => {}
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(manifest_err(format!("expected 5 fields, got {line:?}")));
        }
        let s = f[0]
            .parse()
            .map_err(|_| manifest_err(format!("bad sequence id {:?}", f[0])))?;
        let t = f[1]
            .parse()
            .map_err(|_| manifest_err(format!("bad frame index {:?}", f[1])))?;
        entries.push((s, t, [f[2].to_string(), f[3].to_string(), f[4].to_string()]));
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let stem = |file: &str| -> String {
        let base = file.strip_suffix(".pgm").unwrap_or(file);
        if channels > 1 {
            base.strip_suffix("_c0").unwrap_or(base).to_string()
        } else {
            base.to_string()
        }
    };
    let mut sequences: Vec<Vec<FramePair>> = Vec::new();
    for (s, t, files) in entries {
        if s == sequences.len() {
            sequences.push(Vec::new());
        } else if s + 1 != sequences.len() {
            return Err(manifest_err(format!(
                "sequence ids are not contiguous at {s}"
            )));
        }
        let seq = sequences.last_mut().expect("pushed above");
        if t != seq.len() {
            return Err(manifest_err(format!(
                "sequence {s}: frame {t} out of order"
            )));
        }
        let x = pgm::read_image(dir, &stem(&files[0]), channels)?;
        let y = pgm::read_image(dir, &stem(&files[1]), channels)?;
        let mask = Mask::from_image(&pgm::read_image(dir, &stem(&files[2]), channels)?);
        seq.push(FramePair { y, x, mask });
    }
    Ok((
        SequenceSet {
            sequences,
            frame_rate,
        },
        y_max,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dim_scenes_never_saturate() {
        let spec = SceneSpec {
            peak_intensity: Range::new(0.5, 0.9),
            ..SceneSpec::default()
        };
        for fr in generate_training_set(&spec, 20).unwrap() {
            assert_eq!(fr.mask.count(), 0);
            assert_eq!(fr.x, fr.y);
        }
    }

    #[test]
    fn input_is_clipped_ground_truth() {
        for fr in generate_training_set(&SceneSpec::default(), 10).unwrap() {
            for ((&x, &y), &m) in fr.x.data().iter().zip(fr.y.data()).zip(fr.mask.bits()) {
                assert_eq!(x, y.clamp(0.0, 1.0));
                assert_eq!(m, y > 1.0);
                assert!((0.0..=4.0).contains(&y));
            }
        }
    }

    #[test]
    fn frozen_scene_gives_identical_frames() {
        let spec = SceneSpec {
            max_speed: 0.0,
            image_size: 16,
            ..SceneSpec::default()
        };
        let set = generate_test_sequences(&spec, 2, 5, 25.0).unwrap();
        for seq in &set.sequences {
            assert!(seq.iter().all(|f| f.y == seq[0].y));
        }
    }

    #[test]
    fn edges_are_antialiased() {
        let scene = Scene {
            size: 16,
            background: (0.1, 0.1),
            background_dir: (1.0, 0.0),
            features: vec![Feature {
                kind: FeatureKind::Disk,
                center: (8.3, 7.6),
                size: 5.0,
                peak: 2.0,
                velocity: (0.0, 0.0),
                wobble_amplitude: (0.0, 0.0),
                wobble_frequency: 0.0,
                wobble_phase: 0.0,
            }],
            beams: vec![],
        };
        let y = scene.render(0.0);
        // inside the disk values are >= 0.3 * peak = 0.6; a pixel strictly
        // between background and that floor can only come from partial coverage
        let partial = y
            .data()
            .iter()
            .filter(|&&v| v > 0.1 + 1e-9 && v < 0.6 - 1e-9)
            .count();
        assert!(partial >= 8, "only {partial} partially covered pixels");
    }

    #[test]
    fn too_short_sequences_are_rejected() {
        assert!(generate_test_sequences(&SceneSpec::default(), 1, 1, 25.0).is_err());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SceneSpec {
            peak_intensity: Range::new(1.0, 8.0),
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate_training_set(&spec, 1),
            Err(Error::Config(_))
        ));
    }
}
