//! A small convolutional autoencoder with exact reverse-mode gradients.
//!
//! The network is compiled from a [`NetworkConfig`] into a fixed, topologically
//! ordered list of nodes. A forward pass optionally records every node value
//! on a [`GradientTape`]; [`Network::backward`] walks the tape in reverse.
//! All parameters live in one flat buffer so optimizers, checkpoints and
//! finite-difference checks can treat them uniformly.

mod checkpoint;
mod ops;
mod optim;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{Adam, AdamState};

use crate::error::{config_err, dim_err, Error, Result};
use crate::kv::KeyValues;
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsample {
    StridedConv,
    MaxPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    /// Nearest-neighbour ×2 resize followed by a convolution.
    NearestConv,
    /// 2×2 transposed convolution with stride 2.
    TransposedConv,
}

impl fmt::Display for Downsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Downsample::StridedConv => "strided-convolution",
            Downsample::MaxPool => "max-pooling",
        })
    }
}

impl FromStr for Downsample {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strided-convolution" => Ok(Downsample::StridedConv),
            "max-pooling" => Ok(Downsample::MaxPool),
            _ => Err(config_err(format!("unknown downsample mode {s:?}"))),
        }
    }
}

impl fmt::Display for Upsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsample::NearestConv => "nearest-resize-then-convolution",
            Upsample::TransposedConv => "transposed-convolution",
        })
    }
}

impl FromStr for Upsample {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest-resize-then-convolution" => Ok(Upsample::NearestConv),
            "transposed-convolution" => Ok(Upsample::TransposedConv),
            _ => Err(config_err(format!("unknown upsample mode {s:?}"))),
        }
    }
}

/// Architecture description. Hidden layers use ReLU, the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    /// Feature count of each down-sampling stage, outermost first.
    pub encoder_widths: Vec<usize>,
    pub skip_connections: bool,
    pub downsample: Downsample,
    pub upsample: Upsample,
    pub kernel_size: usize,
}

impl NetworkConfig {
    /// Max-pooling, transposed convolutions and encoder–decoder skips.
    pub fn hdr(widths: &[usize]) -> Self {
        Self {
            input_channels: 1,
            output_channels: 1,
            encoder_widths: widths.to_vec(),
            skip_connections: true,
            downsample: Downsample::MaxPool,
            upsample: Upsample::TransposedConv,
            kernel_size: 3,
        }
    }

    /// Strided convolutions, resize-convolutions and no skips.
    pub fn colorization(widths: &[usize]) -> Self {
        Self {
            input_channels: 1,
            output_channels: 2,
            encoder_widths: widths.to_vec(),
            skip_connections: false,
            downsample: Downsample::StridedConv,
            upsample: Upsample::NearestConv,
            kernel_size: 3,
        }
    }

    pub fn stages(&self) -> usize {
        self.encoder_widths.len()
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(config_err("channel counts must be positive"));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(config_err(
                "encoder widths must be a non-empty list of positive counts",
            ));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(config_err(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.write_kv(&mut kv, "");
        kv
    }

    pub(crate) fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(&format!("{prefix}input_channels"), self.input_channels);
        kv.set(&format!("{prefix}output_channels"), self.output_channels);
        kv.set_list(&format!("{prefix}encoder_widths"), &self.encoder_widths);
        kv.set(&format!("{prefix}skip_connections"), self.skip_connections);
        kv.set(&format!("{prefix}downsample"), self.downsample);
        kv.set(&format!("{prefix}upsample"), self.upsample);
        kv.set(&format!("{prefix}kernel_size"), self.kernel_size);
    }

    /// Reads keys under `prefix`, falling back to `base` for missing ones.
    pub(crate) fn read_kv(kv: &KeyValues, prefix: &str, base: &Self) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let cfg = Self {
            input_channels: kv.get_or(&key("input_channels"), base.input_channels)?,
            output_channels: kv.get_or(&key("output_channels"), base.output_channels)?,
            encoder_widths: kv
                .get_list(&key("encoder_widths"))?
                .unwrap_or_else(|| base.encoder_widths.clone()),
            skip_connections: kv.get_or(&key("skip_connections"), base.skip_connections)?,
            downsample: kv.get_or(&key("downsample"), base.downsample)?,
            upsample: kv.get_or(&key("upsample"), base.upsample)?,
            kernel_size: kv.get_or(&key("kernel_size"), base.kernel_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        Self::read_kv(kv, "", &Self::hdr(&[8, 16]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LayerKind {
    Conv { k: usize, stride: usize },
    TransposedConv,
}

/// One parameterized layer and where its weights and biases sit in the flat buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
}

impl LayerInfo {
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { k, .. } => k * k * self.cin,
            LayerKind::TransposedConv => self.cin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Input,
    Layer(usize),
    Relu,
    MaxPool,
    Upsample,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Node {
    op: Op,
    inputs: [usize; 2],
}

struct Builder {
    layers: Vec<LayerInfo>,
    nodes: Vec<Node>,
    channels: Vec<usize>,
    n_params: usize,
}

impl Builder {
    fn push(&mut self, op: Op, inputs: [usize; 2], channels: usize) -> usize {
        self.nodes.push(Node { op, inputs });
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    fn layer(&mut self, kind: LayerKind, input: usize, cout: usize) -> usize {
        let cin = self.channels[input];
        let weight_len = match kind {
            LayerKind::Conv { k, .. } => k * k * cin * cout,
            LayerKind::TransposedConv => 4 * cin * cout,
        };
        let info = LayerInfo {
            kind,
            cin,
            cout,
            weight_offset: self.n_params,
            weight_len,
            bias_offset: self.n_params + weight_len,
        };
        self.n_params += weight_len + cout;
        self.layers.push(info);
        self.push(Op::Layer(self.layers.len() - 1), [input, 0], cout)
    }

    fn relu(&mut self, input: usize) -> usize {
        let c = self.channels[input];
        self.push(Op::Relu, [input, 0], c)
    }
}

fn compile(cfg: &NetworkConfig) -> (Vec<LayerInfo>, Vec<Node>, usize) {
    let k = cfg.kernel_size;
    let conv = LayerKind::Conv { k, stride: 1 };
    let mut b = Builder {
        layers: Vec::new(),
        nodes: Vec::new(),
        channels: Vec::new(),
        n_params: 0,
    };
    let mut cur = b.push(Op::Input, [0, 0], cfg.input_channels);
    let mut skips = Vec::new();
    for &w in &cfg.encoder_widths {
        cur = b.layer(conv, cur, w);
        cur = b.relu(cur);
        skips.push(cur);
        cur = match cfg.downsample {
            Downsample::MaxPool => b.push(Op::MaxPool, [cur, 0], w),
            Downsample::StridedConv => {
                let n = b.layer(LayerKind::Conv { k, stride: 2 }, cur, w);
                b.relu(n)
            }
        };
    }
    let deepest = *cfg.encoder_widths.last().expect("validated non-empty");
    cur = b.layer(conv, cur, deepest);
    cur = b.relu(cur);
    for (s, &w) in cfg.encoder_widths.iter().enumerate().rev() {
        cur = match cfg.upsample {
            Upsample::TransposedConv => b.layer(LayerKind::TransposedConv, cur, w),
            Upsample::NearestConv => {
                let up = b.push(Op::Upsample, [cur, 0], b.channels[cur]);
                b.layer(conv, up, w)
            }
        };
        cur = b.relu(cur);
        if cfg.skip_connections {
            cur = b.push(Op::Concat, [cur, skips[s]], 2 * w);
        }
        cur = b.layer(conv, cur, w);
        cur = b.relu(cur);
    }
    b.layer(conv, cur, cfg.output_channels);
    (b.layers, b.nodes, b.n_params)
}

/// Flat parameter gradients, aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Node values from one forward pass, tied to the parameter state that produced them.
#[derive(Clone, Debug, Default)]
pub struct GradientTape {
    generation: Option<u64>,
    values: Vec<ImageTensor>,
    cols: Vec<Option<Vec<f64>>>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.generation.is_some()
    }

    /// The network output recorded on this tape.
    pub fn output(&self) -> Option<&ImageTensor> {
        self.generation.and(self.values.last())
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerInfo>,
    nodes: Vec<Node>,
    params: Vec<f64>,
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

pub fn parameter_count(cfg: &NetworkConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(compile(cfg).2)
}

impl Network {
    /// Fan-in scaled uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(cfg)?;
        for layer in &net.layers {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            for p in &mut net.params[layer.weight_offset..layer.weight_offset + layer.weight_len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeroed(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let (layers, nodes, n) = compile(cfg);
        Ok(Self {
            config: cfg.clone(),
            layers,
            nodes,
            params: vec![0.0; n],
            generation: 0,
        })
    }

    pub fn from_params(cfg: &NetworkConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeroed(cfg)?;
        if params.len() != net.params.len() {
            return Err(dim_err(format!(
                "config needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates previously recorded tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros(self.params.len())
    }

    pub fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let (h, w, c) = x.shape();
        if c != self.config.input_channels {
            return Err(dim_err(format!(
                "network expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let m = self.config.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(dim_err(format!(
                "input size {h}x{w} is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let info = &self.layers[l];
        (
            &self.params[info.weight_offset..info.weight_offset + info.weight_len],
            &self.params[info.bias_offset..info.bias_offset + info.cout],
        )
    }

    /// Runs the network. When `tape` is given, every intermediate is recorded
    /// on it for a later [`Network::backward`].
    pub fn forward(&self, x: &ImageTensor, tape: Option<&mut GradientTape>) -> Result<ImageTensor> {
        self.check_input(x)?;
        let record = tape.is_some();
        let n = self.nodes.len();
        let mut values: Vec<ImageTensor> = Vec::with_capacity(n);
        let mut cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        let mut argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(n);
        for node in &self.nodes {
            let [a, b] = node.inputs;
            let (v, col, arg) = match node.op {
                Op::Input => (x.clone(), None, None),
                Op::Layer(l) => {
                    let (w, bias) = self.layer_params(l);
                    match self.layers[l].kind {
                        LayerKind::Conv { k, stride } => {
                            let (out, col) = ops::conv_forward(&values[a], w, bias, k, stride);
                            (out, record.then_some(col), None)
                        }
                        LayerKind::TransposedConv => {
                            (ops::tconv_forward(&values[a], w, bias), None, None)
                        }
                    }
                }
                Op::Relu => (values[a].map(|v| v.max(0.0)), None, None),
                Op::MaxPool => {
                    let (out, arg) = ops::maxpool_forward(&values[a]);
                    (out, None, record.then_some(arg))
                }
                Op::Upsample => (ops::upsample_forward(&values[a]), None, None),
                Op::Concat => (ops::concat_forward(&values[a], &values[b]), None, None),
            };
            values.push(v);
            cols.push(col);
            argmax.push(arg);
        }
        let out = values.last().expect("network has nodes").clone();
        if let Some(t) = tape {
            *t = GradientTape {
                generation: Some(self.generation),
                values,
                cols,
                argmax,
            };
        }
        Ok(out)
    }

    /// Exact parameter gradients of a scalar loss whose gradient with respect
    /// to the network output is `loss_grad`.
    pub fn backward(&self, tape: &GradientTape, loss_grad: &ImageTensor) -> Result<Gradients> {
        let mut grads = self.zero_gradients();
        self.backward_into(tape, loss_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        tape: &GradientTape,
        loss_grad: &ImageTensor,
        grads: &mut Gradients,
    ) -> Result<()> {
        match tape.generation {
            None => return Err(Error::Tape("tape was never recorded".into())),
            Some(g) if g != self.generation || tape.values.len() != self.nodes.len() => {
                return Err(Error::Tape(
                    "tape is stale: parameters changed since the forward pass".into(),
                ))
            }
            _ => {}
        }
        if grads.len() != self.params.len() {
            return Err(dim_err("gradient buffer does not match parameter count"));
        }
        let out = tape.values.last().expect("non-empty tape");
        loss_grad.check_same_shape(out, "loss gradient vs network output")?;

        let n = self.nodes.len();
        let mut node_grads: Vec<Option<ImageTensor>> = vec![None; n];
        node_grads[n - 1] = Some(loss_grad.clone());

        fn accumulate(slot: &mut Option<ImageTensor>, g: ImageTensor) {
            match slot {
                Some(existing) => existing.axpy(1.0, &g),
                None => *slot = Some(g),
            }
        }

        for idx in (1..n).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let [a, b] = node.inputs;
            // the input image needs no gradient
            let need_in = a != 0;
            match node.op {
                Op::Input => {}
                Op::Layer(l) => {
                    let info = &self.layers[l];
                    let (w, _) = self.layer_params(l);
                    let (gw, rest) =
                        grads.values[info.weight_offset..].split_at_mut(info.weight_len);
                    let gb = &mut rest[..info.cout];
                    let gin = match info.kind {
                        LayerKind::Conv { k, stride } => {
                            let col = tape.cols[idx]
                                .as_ref()
                                .ok_or_else(|| Error::Tape("missing patch matrix".into()))?;
                            ops::conv_backward(
                                &g,
                                col,
                                tape.values[a].shape(),
                                w,
                                k,
                                stride,
                                gw,
                                gb,
                                need_in,
                            )
                        }
                        LayerKind::TransposedConv => {
                            ops::tconv_backward(&g, &tape.values[a], w, gw, gb, need_in)
                        }
                    };
                    if let Some(gin) = gin {
                        accumulate(&mut node_grads[a], gin);
                    }
                }
                Op::Relu => {
                    let gin = g.zip_map(&tape.values[idx], |gv, v| if v > 0.0 { gv } else { 0.0 });
                    accumulate(&mut node_grads[a], gin);
                }
                Op::MaxPool => {
                    let arg = tape.argmax[idx]
                        .as_ref()
                        .ok_or_else(|| Error::Tape("missing pooling indices".into()))?;
                    accumulate(
                        &mut node_grads[a],
                        ops::maxpool_backward(&g, arg, tape.values[a].shape()),
                    );
                }
                Op::Upsample => accumulate(&mut node_grads[a], ops::upsample_backward(&g)),
                Op::Concat => {
                    let (ga, gb) = ops::concat_backward(&g, tape.values[a].channels());
                    accumulate(&mut node_grads[a], ga);
                    accumulate(&mut node_grads[b], gb);
                }
            }
        }
        Ok(())
    }
}
