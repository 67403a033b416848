use std::path::PathBuf;

use crate::error::{config_err, Result};
use crate::kv::KeyValues;
use crate::loss::{LossConfig, RegKind};
use crate::metrics::TemporalFilter;
use crate::nn::NetworkConfig;
use crate::noise::NoiseSpec;
use crate::procgen::SceneSpec;
use crate::transform::{Range, TransformRanges};

/// Epoch count, batch size and Adam learning rate for one training stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Schedule {
    fn validate(&self, name: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err(format!("{name}: batch size must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err(format!(
                "{name}: learning rate must be positive"
            )));
        }
        Ok(())
    }
}

/// `α_i = l_i / (l_i + 1)` with `l_i = 2^(i − 3)`: each step doubles the
/// ratio of regularization to reconstruction weight.
pub fn alpha_at(index: i32) -> f64 {
    let l = 2f64.powi(index - 3);
    l / (l + 1.0)
}

pub fn alpha_grid(indices: impl IntoIterator<Item = i32>) -> Vec<f64> {
    indices.into_iter().map(alpha_at).collect()
}

/// Which fine-tuning conditions a sweep runs besides the baseline and the
/// unregularized fine-tune (both always present).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub reg_kinds: Vec<RegKind>,
    /// Grid indices `i` (1-based) into [`alpha_at`].
    pub alpha_indices: Vec<i32>,
    /// Off-grid strengths evaluated in addition to the grid.
    pub extra_alphas: Vec<f64>,
    /// Weight of the augmented copy for the augmentation condition; `None`
    /// skips it. 0.5 weighs original and transformed pairs equally, which
    /// matches training on a doubled data set.
    pub augmentation_alpha: Option<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            reg_kinds: vec![
                RegKind::StabilityNoise,
                RegKind::StabilityTransform,
                RegKind::TransformInvariance,
                RegKind::SparseJacobian,
            ],
            alpha_indices: (1..=12).collect(),
            extra_alphas: Vec::new(),
            augmentation_alpha: Some(0.5),
        }
    }
}

impl SweepSpec {
    /// Grid values followed by the extra strengths, sorted and deduplicated.
    pub fn alphas(&self) -> Vec<f64> {
        let mut a = alpha_grid(self.alpha_indices.iter().copied());
        a.extend(&self.extra_alphas);
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    pub fn validate(&self) -> Result<()> {
        for &k in &self.reg_kinds {
            if matches!(k, RegKind::None | RegKind::Augmentation) {
                return Err(config_err(format!(
                    "`{k}` is a fixed sweep condition and cannot be listed in sweep.reg_kinds"
                )));
            }
        }
        if self.alpha_indices.iter().any(|&i| i < 1) {
            return Err(config_err("alpha grid indices start at 1"));
        }
        for a in self.alphas().into_iter().chain(self.augmentation_alpha) {
            if !(a > 0.0 && a < 1.0) {
                return Err(config_err(format!("sweep strength {a} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_scene: SceneSpec,
    pub train_count: usize,
    pub test_scene: SceneSpec,
    pub test_sequences: usize,
    pub test_frames: usize,
    pub frame_rate: f64,
    pub network: NetworkConfig,
    pub pretrain: Schedule,
    pub finetune: Schedule,
    /// Objective for a single `finetune` run.
    pub loss: LossConfig,
    pub sweep: SweepSpec,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train_scene = SceneSpec {
            seed: 1,
            image_size: 32,
            ..SceneSpec::default()
        };
        let test_scene = SceneSpec {
            seed: 2,
            image_size: 64,
            ..SceneSpec::default()
        };
        Self {
            seed: 0,
            train_scene,
            train_count: 2000,
            test_scene,
            test_sequences: 8,
            test_frames: 60,
            frame_rate: TemporalFilter::DEFAULT_FRAME_RATE,
            network: NetworkConfig::hdr(&[8, 16]),
            pretrain: Schedule {
                epochs: 20,
                batch_size: 16,
                learning_rate: 1e-3,
            },
            finetune: Schedule {
                epochs: 10,
                batch_size: 16,
                learning_rate: 1e-4,
            },
            loss: LossConfig::rec_only(),
            sweep: SweepSpec::default(),
            repetitions: 5,
            output_dir: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "output_dir",
    "workers",
    "repetitions",
    "frame_rate",
    "y_max",
    "train.count",
    "train.size",
    "train.scene_seed",
    "test.sequences",
    "test.frames",
    "test.size",
    "test.scene_seed",
    "scene.feature_count",
    "scene.feature_size",
    "scene.peak_intensity",
    "scene.background",
    "scene.beam_count",
    "scene.beam_width",
    "scene.max_speed",
    "net.input_channels",
    "net.output_channels",
    "net.encoder_widths",
    "net.skip_connections",
    "net.downsample",
    "net.upsample",
    "net.kernel_size",
    "pretrain.epochs",
    "pretrain.batch_size",
    "pretrain.learning_rate",
    "finetune.epochs",
    "finetune.batch_size",
    "finetune.learning_rate",
    "loss.reg_kind",
    "loss.alpha",
    "loss.noise_sigma",
    "loss.translation",
    "loss.rotation",
    "loss.zoom",
    "loss.shear",
    "sweep.reg_kinds",
    "sweep.alpha_indices",
    "sweep.extra_alphas",
    "sweep.augmentation_alpha",
];

fn range_from(kv: &KeyValues, key: &str, default: Range) -> Result<Range> {
    match kv.get_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok(Range::new(v[0], v[1])),
        Some(v) if v.len() == 1 => Ok(Range::point(v[0])),
        Some(_) => Err(config_err(format!("`{key}` expects `min, max`"))),
    }
}

fn count_range(kv: &KeyValues, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
    match kv.get_list::<usize>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(v) if v.len() == 1 => Ok((v[0], v[0])),
        Some(_) => Err(config_err(format!("`{key}` expects `min, max`"))),
    }
}

fn fmt_range(r: Range) -> String {
    format!("{}, {}", r.min, r.max)
}

impl ExperimentConfig {
    /// Parses the `key = value` config format on top of the defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(config_err(format!("unknown config key `{k}`")));
        }
        let d = Self::default();
        let mut scene = d.train_scene.clone();
        scene.feature_count = count_range(kv, "scene.feature_count", scene.feature_count)?;
        scene.feature_size = range_from(kv, "scene.feature_size", scene.feature_size)?;
        scene.peak_intensity = range_from(kv, "scene.peak_intensity", scene.peak_intensity)?;
        scene.background = range_from(kv, "scene.background", scene.background)?;
        scene.beam_count = count_range(kv, "scene.beam_count", scene.beam_count)?;
        scene.beam_width = range_from(kv, "scene.beam_width", scene.beam_width)?;
        scene.max_speed = kv.get_or("scene.max_speed", scene.max_speed)?;
        scene.y_max = kv.get_or("y_max", scene.y_max)?;

        let train_scene = SceneSpec {
            seed: kv.get_or("train.scene_seed", d.train_scene.seed)?,
            image_size: kv.get_or("train.size", d.train_scene.image_size)?,
            ..scene.clone()
        };
        let test_scene = SceneSpec {
            seed: kv.get_or("test.scene_seed", d.test_scene.seed)?,
            image_size: kv.get_or("test.size", d.test_scene.image_size)?,
            ..scene
        };

        let schedule = |prefix: &str, base: Schedule| -> Result<Schedule> {
            Ok(Schedule {
                epochs: kv.get_or(&format!("{prefix}.epochs"), base.epochs)?,
                batch_size: kv.get_or(&format!("{prefix}.batch_size"), base.batch_size)?,
                learning_rate: kv.get_or(&format!("{prefix}.learning_rate"), base.learning_rate)?,
            })
        };

        let dr = TransformRanges::default();
        let translation = range_from(kv, "loss.translation", dr.tx)?;
        let shear = range_from(kv, "loss.shear", dr.shear_x)?;
        let noise = range_from(
            kv,
            "loss.noise_sigma",
            Range::new(d.loss.noise.sigma_min, d.loss.noise.sigma_max),
        )?;
        let loss = LossConfig {
            alpha: kv.get_or("loss.alpha", d.loss.alpha)?,
            reg_kind: kv.get_or("loss.reg_kind", d.loss.reg_kind)?,
            transform_ranges: TransformRanges {
                tx: translation,
                ty: translation,
                rotation: range_from(kv, "loss.rotation", dr.rotation)?,
                zoom: range_from(kv, "loss.zoom", dr.zoom)?,
                shear_x: shear,
                shear_y: shear,
            },
            noise: NoiseSpec {
                sigma_min: noise.min,
                sigma_max: noise.max,
            },
        };

        let sweep = SweepSpec {
            reg_kinds: kv.get_list("sweep.reg_kinds")?.unwrap_or(d.sweep.reg_kinds),
            alpha_indices: kv
                .get_list("sweep.alpha_indices")?
                .unwrap_or(d.sweep.alpha_indices),
            extra_alphas: kv
                .get_list("sweep.extra_alphas")?
                .unwrap_or(d.sweep.extra_alphas),
            augmentation_alpha: match kv.get_str("sweep.augmentation_alpha") {
                None => d.sweep.augmentation_alpha,
                Some("none") | Some("") => None,
                Some(_) => Some(kv.require("sweep.augmentation_alpha")?),
            },
        };

        let cfg = Self {
            seed: kv.get_or("seed", d.seed)?,
            train_scene,
            train_count: kv.get_or("train.count", d.train_count)?,
            test_scene,
            test_sequences: kv.get_or("test.sequences", d.test_sequences)?,
            test_frames: kv.get_or("test.frames", d.test_frames)?,
            frame_rate: kv.get_or("frame_rate", d.frame_rate)?,
            network: NetworkConfig::read_kv(kv, "net.", &d.network)?,
            pretrain: schedule("pretrain", d.pretrain)?,
            finetune: schedule("finetune", d.finetune)?,
            loss,
            sweep,
            repetitions: kv.get_or("repetitions", d.repetitions)?,
            output_dir: kv.get_or("output_dir", d.output_dir)?,
            workers: kv.get_or("workers", d.workers)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    /// Serializes every setting; parsing the result gives back `self`.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set("output_dir", self.output_dir.display());
        kv.set("workers", self.workers);
        kv.set("repetitions", self.repetitions);
        kv.set("frame_rate", self.frame_rate);
        kv.set("y_max", self.train_scene.y_max);
        kv.set("train.count", self.train_count);
        kv.set("train.size", self.train_scene.image_size);
        kv.set("train.scene_seed", self.train_scene.seed);
        kv.set("test.sequences", self.test_sequences);
        kv.set("test.frames", self.test_frames);
        kv.set("test.size", self.test_scene.image_size);
        kv.set("test.scene_seed", self.test_scene.seed);
        let s = &self.train_scene;
        kv.set(
            "scene.feature_count",
            format!("{}, {}", s.feature_count.0, s.feature_count.1),
        );
        kv.set("scene.feature_size", fmt_range(s.feature_size));
        kv.set("scene.peak_intensity", fmt_range(s.peak_intensity));
        kv.set("scene.background", fmt_range(s.background));
        kv.set(
            "scene.beam_count",
            format!("{}, {}", s.beam_count.0, s.beam_count.1),
        );
        kv.set("scene.beam_width", fmt_range(s.beam_width));
        kv.set("scene.max_speed", s.max_speed);
        self.network.write_kv(&mut kv, "net.");
        for (p, sch) in [("pretrain", self.pretrain), ("finetune", self.finetune)] {
            kv.set(&format!("{p}.epochs"), sch.epochs);
            kv.set(&format!("{p}.batch_size"), sch.batch_size);
            kv.set(&format!("{p}.learning_rate"), sch.learning_rate);
        }
        let l = &self.loss;
        kv.set("loss.reg_kind", l.reg_kind);
        kv.set("loss.alpha", l.alpha);
        kv.set(
            "loss.noise_sigma",
            format!("{}, {}", l.noise.sigma_min, l.noise.sigma_max),
        );
        kv.set("loss.translation", fmt_range(l.transform_ranges.tx));
        kv.set("loss.rotation", fmt_range(l.transform_ranges.rotation));
        kv.set("loss.zoom", fmt_range(l.transform_ranges.zoom));
        kv.set("loss.shear", fmt_range(l.transform_ranges.shear_x));
        kv.set_list("sweep.reg_kinds", &self.sweep.reg_kinds);
        kv.set_list("sweep.alpha_indices", &self.sweep.alpha_indices);
        kv.set_list("sweep.extra_alphas", &self.sweep.extra_alphas);
        match self.sweep.augmentation_alpha {
            Some(a) => kv.set("sweep.augmentation_alpha", a),
            None => kv.set("sweep.augmentation_alpha", "none"),
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.train_scene.validate()?;
        self.test_scene.validate()?;
        self.network.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        self.loss.validate()?;
        self.sweep.validate()?;
        if self.repetitions == 0 {
            return Err(config_err("repetitions must be at least 1"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        if self.train_count == 0 {
            return Err(config_err("training set must not be empty"));
        }
        let m = self.network.size_multiple();
        for (name, size) in [
            ("train.size", self.train_scene.image_size),
            ("test.size", self.test_scene.image_size),
        ] {
            if size % m != 0 {
                return Err(config_err(format!(
                    "{name} = {size} is not a multiple of {m}"
                )));
            }
        }
        if self.network.input_channels != 1 || self.network.output_channels != 1 {
            return Err(config_err("the procedural task is single-channel"));
        }
        TemporalFilter::new(TemporalFilter::DEFAULT_SIGMA_SECONDS, self.frame_rate)?;
        Ok(())
    }

    pub fn y_max(&self) -> f64 {
        self.train_scene.y_max
    }

    /// Seeds of the `repetitions` independent runs.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|r| self.seed + r)
            .collect()
    }
}
