//! Two-tower convolutional encoder with a rectifier recurrence and per-step softmax head.
//!
//! ```text
//! I     = [image_tower(rgbm) ; force_tower(force_image)]
//! h_0   = relu(W_I·I + b)
//! h_t   = relu(W_I·I + W_h·h_{t-1} + b)
//! o_t   = softmax(g(W_o·h_t + b_o))      g = relu (paper-faithful) or identity
//! ```
//!
//! Everything is `f64` and differentiated by hand. [`backward`] returns gradients of the
//! weighted sequence loss for every parameter tensor, aligned with
//! [`PredictorParams::tensors`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encode::{EncodedSample, ImageTensor};
use crate::quantize::{ClassWeights, VelocitySequence, NUM_CLASSES};
use crate::{seed, train, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        stride: usize,
        out_channels: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Relu,
    Fc {
        out_dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub layers: Vec<LayerSpec>,
}

impl TowerConfig {
    /// conv(5×5, 8) · relu · pool(2) · conv(5×5, 16) · relu · pool(2) · fc(E)
    pub fn small(embed_dim: usize) -> Self {
        Self {
            layers: vec![
                LayerSpec::Conv {
                    kernel: 5,
                    stride: 1,
                    out_channels: 8,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
                LayerSpec::Conv {
                    kernel: 5,
                    stride: 1,
                    out_channels: 16,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
                LayerSpec::Fc { out_dim: embed_dim },
            ],
        }
    }

    /// conv(3×3, 4) · relu · pool(2) · fc(E)
    pub fn tiny(embed_dim: usize) -> Self {
        Self {
            layers: vec![
                LayerSpec::Conv {
                    kernel: 3,
                    stride: 1,
                    out_channels: 4,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
                LayerSpec::Fc { out_dim: embed_dim },
            ],
        }
    }

    pub fn embed_dim(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Fc { out_dim }) => Ok(*out_dim),
            _ => Err(Error::Config(
                "tower must end with a fully-connected layer".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitScheme {
    /// Every weight `N(0, std²)`.
    Gaussian { std: f64 },
    /// He-normal `N(0, 2/fan_in)` for convolutions and towers' fully-connected layers,
    /// `N(0, 1/fan_in)` for `W_I`; image input channels beyond RGB (mask, depth) drawn
    /// from `N(0, extra_channel_std²)`. `W_o ~ N(0, head_std²)` and `b_o = head_bias`:
    /// a small head keeps the identity recurrence from starting with huge logits, and a
    /// positive bias keeps every rectified logit in its linear region at the start.
    Scaled {
        extra_channel_std: f64,
        head_std: f64,
        head_bias: f64,
    },
}

impl InitScheme {
    /// Scaled init tuned for the 64-unit recurrent layer. Very narrow recurrent layers
    /// memorize more reliably with `head_std` near 0.01.
    pub fn scaled() -> Self {
        Self::scaled_with_head(0.3, 1.0)
    }

    pub fn scaled_with_head(head_std: f64, head_bias: f64) -> Self {
        InitScheme::Scaled {
            extra_channel_std: 0.01,
            head_std,
            head_bias,
        }
    }

    fn validate(self) -> Result<()> {
        let ok = match self {
            InitScheme::Gaussian { std } => std > 0.0 && std.is_finite(),
            InitScheme::Scaled {
                extra_channel_std,
                head_std,
                head_bias,
            } => extra_channel_std > 0.0 && head_std > 0.0 && head_bias.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid init scheme {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_tower: TowerConfig,
    pub force_tower: TowerConfig,
    /// `[channels, height, width]` of the RGB-M input.
    pub image_input: [usize; 3],
    pub force_input: [usize; 3],
    pub hidden: usize,
    pub steps: usize,
    /// Rectifier on the logits before the softmax.
    pub relu_head: bool,
    pub init: InitScheme,
}

impl ModelConfig {
    pub fn small(image_channels: usize, height: usize, width: usize) -> Self {
        Self {
            image_tower: TowerConfig::small(64),
            force_tower: TowerConfig::small(64),
            image_input: [image_channels, height, width],
            force_input: [3, height, width],
            hidden: 64,
            steps: crate::quantize::MAX_STEPS,
            relu_head: true,
            init: InitScheme::Gaussian { std: 0.01 },
        }
    }

    /// E = 8, H = 8 towers for 16×16-scale inputs.
    pub fn tiny(image_channels: usize, height: usize, width: usize) -> Self {
        Self {
            image_tower: TowerConfig::tiny(8),
            force_tower: TowerConfig::tiny(8),
            hidden: 8,
            ..Self::small(image_channels, height, width)
        }
    }

    pub fn embed_dim(&self) -> Result<usize> {
        Ok(self.image_tower.embed_dim()? + self.force_tower.embed_dim()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Plan {
    Conv {
        w: usize,
        b: usize,
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        k: usize,
        s: usize,
        out_h: usize,
        out_w: usize,
    },
    Pool {
        c: usize,
        in_h: usize,
        in_w: usize,
        k: usize,
        s: usize,
        out_h: usize,
        out_w: usize,
    },
    Relu,
    Fc {
        w: usize,
        b: usize,
        in_dim: usize,
        out_dim: usize,
    },
}

/// A convolutional feature extractor ending in a fully-connected embedding.
#[derive(Clone, Debug)]
pub struct Tower {
    config: TowerConfig,
    input_shape: [usize; 3],
    plans: Vec<Plan>,
    tensors: Vec<ParamTensor>,
}

/// Activations of one tower forward pass: `acts[0]` is the input, `acts[i + 1]` the
/// output of layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerTrace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

fn out_size(input: usize, k: usize, s: usize) -> Option<usize> {
    (s > 0 && k > 0 && input >= k).then(|| (input - k) / s + 1)
}

impl Tower {
    pub fn new(prefix: &str, config: &TowerConfig, input_shape: [usize; 3]) -> Result<Self> {
        config.embed_dim()?;
        let [mut c, mut h, mut w] = input_shape;
        let mut flat: Option<usize> = None;
        let mut plans = Vec::new();
        let mut tensors = Vec::new();
        let shape_err = |i: usize| Error::Config(format!("{prefix} layer {i}: spatial size collapses"));
        for (i, layer) in config.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    out_channels,
                } => {
                    if flat.is_some() {
                        return Err(Error::Config(format!(
                            "{prefix} layer {i}: convolution after fully-connected layer"
                        )));
                    }
                    let oh = out_size(h, kernel, stride).ok_or_else(|| shape_err(i))?;
                    let ow = out_size(w, kernel, stride).ok_or_else(|| shape_err(i))?;
                    if out_channels == 0 {
                        return Err(shape_err(i));
                    }
                    let wi = tensors.len();
                    tensors.push(ParamTensor::zeros(
                        format!("{prefix}.{i}.weight"),
                        vec![out_channels, c, kernel, kernel],
                    ));
                    tensors.push(ParamTensor::zeros(
                        format!("{prefix}.{i}.bias"),
                        vec![out_channels],
                    ));
                    plans.push(Plan::Conv {
                        w: wi,
                        b: wi + 1,
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: out_channels,
                        k: kernel,
                        s: stride,
                        out_h: oh,
                        out_w: ow,
                    });
                    c = out_channels;
                    h = oh;
                    w = ow;
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    if flat.is_some() {
                        return Err(Error::Config(format!(
                            "{prefix} layer {i}: pooling after fully-connected layer"
                        )));
                    }
                    let oh = out_size(h, kernel, stride).ok_or_else(|| shape_err(i))?;
                    let ow = out_size(w, kernel, stride).ok_or_else(|| shape_err(i))?;
                    plans.push(Plan::Pool {
                        c,
                        in_h: h,
                        in_w: w,
                        k: kernel,
                        s: stride,
                        out_h: oh,
                        out_w: ow,
                    });
                    h = oh;
                    w = ow;
                }
                LayerSpec::Relu => plans.push(Plan::Relu),
                LayerSpec::Fc { out_dim } => {
                    if out_dim == 0 {
                        return Err(shape_err(i));
                    }
                    let in_dim = flat.unwrap_or(c * h * w);
                    let wi = tensors.len();
                    tensors.push(ParamTensor::zeros(
                        format!("{prefix}.{i}.weight"),
                        vec![out_dim, in_dim],
                    ));
                    tensors.push(ParamTensor::zeros(format!("{prefix}.{i}.bias"), vec![out_dim]));
                    plans.push(Plan::Fc {
                        w: wi,
                        b: wi + 1,
                        in_dim,
                        out_dim,
                    });
                    flat = Some(out_dim);
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            input_shape,
            plans,
            tensors,
        })
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim().unwrap()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut_internal(&mut self) -> std::slice::IterMut<'_, ParamTensor> {
        self.tensors.iter_mut()
    }

    fn init(&mut self, rng: &mut impl Rng, scheme: InitScheme, extra_from: Option<usize>) {
        for plan in &self.plans {
            match *plan {
                Plan::Conv {
                    w, in_c, k, out_c, ..
                } => {
                    let fan_in = in_c * k * k;
                    let t = &mut self.tensors[w];
                    for o in 0..out_c {
                        for ic in 0..in_c {
                            let std = match scheme {
                                InitScheme::Gaussian { std } => std,
                                InitScheme::Scaled {
                                    extra_channel_std, ..
                                } => {
                                    if extra_from.is_some_and(|e| ic >= e) {
                                        extra_channel_std
                                    } else {
                                        (2.0 / fan_in as f64).sqrt()
                                    }
                                }
                            };
                            let normal = Normal::new(0.0, std).unwrap();
                            let base = (o * in_c + ic) * k * k;
                            for v in &mut t.data[base..base + k * k] {
                                *v = normal.sample(rng);
                            }
                        }
                    }
                }
                Plan::Fc { w, in_dim, .. } => {
                    let std = match scheme {
                        InitScheme::Gaussian { std } => std,
                        InitScheme::Scaled { .. } => (2.0 / in_dim as f64).sqrt(),
                    };
                    let normal = Normal::new(0.0, std).unwrap();
                    for v in &mut self.tensors[w].data {
                        *v = normal.sample(rng);
                    }
                }
                _ => {}
            }
        }
    }

    fn check_input(&self, input: &ImageTensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "tower expects {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        if input.data.len() != self.input_shape.iter().product::<usize>() {
            return Err(Error::Shape("tensor data length does not match its shape".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &ImageTensor) -> Result<(Vec<f64>, TowerTrace)> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.plans.len() + 1);
        let mut argmax = Vec::with_capacity(self.plans.len());
        acts.push(input.data.clone());
        for plan in &self.plans {
            let x = acts.last().unwrap();
            let (y, am) = match *plan {
                Plan::Conv {
                    w,
                    b,
                    in_c,
                    in_h,
                    in_w,
                    out_c,
                    k,
                    s,
                    out_h,
                    out_w,
                } => {
                    let wt = &self.tensors[w].data;
                    let bt = &self.tensors[b].data;
                    let mut y = vec![0.0; out_c * out_h * out_w];
                    for o in 0..out_c {
                        let plane = &mut y[o * out_h * out_w..(o + 1) * out_h * out_w];
                        plane.fill(bt[o]);
                        for ic in 0..in_c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wv = wt[((o * in_c + ic) * k + ky) * k + kx];
                                    for oy in 0..out_h {
                                        let row = (ic * in_h + oy * s + ky) * in_w + kx;
                                        let out_row = &mut plane[oy * out_w..(oy + 1) * out_w];
                                        if s == 1 {
                                            let src = &x[row..row + out_w];
                                            for (dst, &v) in out_row.iter_mut().zip(src) {
                                                *dst += wv * v;
                                            }
                                        } else {
                                            for (ox, dst) in out_row.iter_mut().enumerate() {
                                                *dst += wv * x[row + ox * s];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    (y, Vec::new())
                }
                Plan::Pool {
                    c,
                    in_h,
                    in_w,
                    k,
                    s,
                    out_h,
                    out_w,
                } => {
                    let mut y = vec![0.0; c * out_h * out_w];
                    let mut am = vec![0u32; c * out_h * out_w];
                    for ch in 0..c {
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                let mut best = usize::MAX;
                                let mut best_v = f64::NEG_INFINITY;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let idx = (ch * in_h + oy * s + ky) * in_w + ox * s + kx;
                                        // NaN wins so divergence reaches the loss.
                                        if x[idx] > best_v || x[idx].is_nan() {
                                            best_v = x[idx];
                                            best = idx;
                                        }
                                    }
                                }
                                let o = (ch * out_h + oy) * out_w + ox;
                                y[o] = best_v;
                                am[o] = best as u32;
                            }
                        }
                    }
                    (y, am)
                }
                Plan::Relu => (x.iter().map(|&v| relu(v)).collect(), Vec::new()),
                Plan::Fc {
                    w,
                    b,
                    in_dim,
                    out_dim,
                } => {
                    let wt = &self.tensors[w].data;
                    let bt = &self.tensors[b].data;
                    let y = (0..out_dim)
                        .map(|j| bt[j] + dot(&wt[j * in_dim..(j + 1) * in_dim], x))
                        .collect();
                    (y, Vec::new())
                }
            };
            acts.push(y);
            argmax.push(am);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, TowerTrace { acts, argmax }))
    }

    /// Accumulates parameter gradients into `grads` (aligned with [`Tower::tensors`]).
    pub fn backward(&self, trace: &TowerTrace, grad_out: &[f64], grads: &mut [Vec<f64>]) {
        let mut g = grad_out.to_vec();
        for (li, plan) in self.plans.iter().enumerate().rev() {
            let x = &trace.acts[li];
            let need_input = li > 0;
            g = match *plan {
                Plan::Conv {
                    w,
                    b,
                    in_c,
                    in_h,
                    in_w,
                    out_c,
                    k,
                    s,
                    out_h,
                    out_w,
                } => {
                    let wt = &self.tensors[w].data;
                    let mut gin = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                    for o in 0..out_c {
                        let plane = &g[o * out_h * out_w..(o + 1) * out_h * out_w];
                        grads[b][o] += plane.iter().sum::<f64>();
                        for ic in 0..in_c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wi = ((o * in_c + ic) * k + ky) * k + kx;
                                    let wv = wt[wi];
                                    let mut acc = 0.0;
                                    for oy in 0..out_h {
                                        let row = (ic * in_h + oy * s + ky) * in_w + kx;
                                        let grow = &plane[oy * out_w..(oy + 1) * out_w];
                                        if s == 1 {
                                            acc += dot(grow, &x[row..row + out_w]);
                                            if need_input {
                                                for (dst, &gv) in
                                                    gin[row..row + out_w].iter_mut().zip(grow)
                                                {
                                                    *dst += wv * gv;
                                                }
                                            }
                                        } else {
                                            for (ox, &gv) in grow.iter().enumerate() {
                                                acc += gv * x[row + ox * s];
                                                if need_input {
                                                    gin[row + ox * s] += wv * gv;
                                                }
                                            }
                                        }
                                    }
                                    grads[w][wi] += acc;
                                }
                            }
                        }
                    }
                    gin
                }
                Plan::Pool { .. } => {
                    let mut gin = vec![0.0; x.len()];
                    for (o, &src) in trace.argmax[li].iter().enumerate() {
                        gin[src as usize] += g[o];
                    }
                    gin
                }
                Plan::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
                Plan::Fc {
                    w,
                    b,
                    in_dim,
                    out_dim,
                } => {
                    let wt = &self.tensors[w].data;
                    let mut gin = if need_input { vec![0.0; in_dim] } else { Vec::new() };
                    for j in 0..out_dim {
                        let gj = g[j];
                        grads[b][j] += gj;
                        if gj == 0.0 {
                            continue;
                        }
                        let gw = &mut grads[w][j * in_dim..(j + 1) * in_dim];
                        for (dst, &xv) in gw.iter_mut().zip(x) {
                            *dst += gj * xv;
                        }
                        if need_input {
                            for (dst, &wv) in gin.iter_mut().zip(&wt[j * in_dim..(j + 1) * in_dim]) {
                                *dst += gj * wv;
                            }
                        }
                    }
                    gin
                }
            };
        }
    }

    fn pattern(&self, trace: &TowerTrace, out: &mut Vec<u32>) {
        for (li, plan) in self.plans.iter().enumerate() {
            match plan {
                Plan::Relu => out.extend(trace.acts[li].iter().map(|&v| (v > 0.0) as u32)),
                Plan::Pool { .. } => out.extend_from_slice(&trace.argmax[li]),
                _ => {}
            }
        }
    }
}

/// Rectifier that lets NaN through; `f64::max` would silently turn NaN into 0.
#[inline]
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Image and force towers whose outputs concatenate into the embedding `I`.
#[derive(Clone, Debug)]
pub struct TwoTower {
    pub image: Tower,
    pub force: Tower,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoTowerTrace {
    image: TowerTrace,
    force: TowerTrace,
}

impl TwoTower {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            image: Tower::new("image_tower", &config.image_tower, config.image_input)?,
            force: Tower::new("force_tower", &config.force_tower, config.force_input)?,
        })
    }

    fn init(&mut self, rng: &mut impl Rng, scheme: InitScheme) {
        self.image.init(rng, scheme, Some(3));
        self.force.init(rng, scheme, None);
    }

    pub fn embed_dim(&self) -> usize {
        self.image.embed_dim() + self.force.embed_dim()
    }

    pub fn forward(
        &self,
        rgbm: &ImageTensor,
        force: &ImageTensor,
    ) -> Result<(Vec<f64>, TwoTowerTrace)> {
        let (mut a, image) = self.image.forward(rgbm)?;
        let (b, force) = self.force.forward(force)?;
        a.extend(b);
        Ok((a, TwoTowerTrace { image, force }))
    }

    /// `grads` covers the image tower tensors followed by the force tower tensors.
    pub fn backward(&self, trace: &TwoTowerTrace, grad_embed: &[f64], grads: &mut [Vec<f64>]) {
        let ei = self.image.embed_dim();
        let ni = self.image.tensors.len();
        let (gi, gf) = grads.split_at_mut(ni);
        self.image.backward(&trace.image, &grad_embed[..ei], gi);
        self.force.backward(&trace.force, &grad_embed[ei..], gf);
    }

    pub fn tensors(&self) -> impl Iterator<Item = &ParamTensor> {
        self.image.tensors.iter().chain(self.force.tensors.iter())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.image.tensors.iter_mut().chain(self.force.tensors.iter_mut())
    }

    fn num_tensors(&self) -> usize {
        self.image.tensors.len() + self.force.tensors.len()
    }
}

/// All weights of the sequence predictor.
#[derive(Clone, Debug)]
pub struct PredictorParams {
    config: ModelConfig,
    towers: TwoTower,
    /// `W_I` (H × 2E), `W_h` (H × H), `b` (H), `W_o` (18 × H), `b_o` (18).
    rnn: Vec<ParamTensor>,
    version: u64,
}

const W_I: usize = 0;
const W_H: usize = 1;
const B_H: usize = 2;
const W_O: usize = 3;
const B_O: usize = 4;

impl PredictorParams {
    /// Zero-initialized parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        if config.hidden == 0 || config.steps == 0 {
            return Err(Error::Config("hidden size and steps must be positive".into()));
        }
        let towers = TwoTower::new(config)?;
        let e2 = towers.embed_dim();
        let h = config.hidden;
        let rnn = vec![
            ParamTensor::zeros("rnn.w_i".into(), vec![h, e2]),
            ParamTensor::zeros("rnn.w_h".into(), vec![h, h]),
            ParamTensor::zeros("rnn.b".into(), vec![h]),
            ParamTensor::zeros("head.w_o".into(), vec![NUM_CLASSES, h]),
            ParamTensor::zeros("head.b_o".into(), vec![NUM_CLASSES]),
        ];
        Ok(Self {
            config: config.clone(),
            towers,
            rnn,
            version: 0,
        })
    }

    /// Rebuilds parameters from named tensors (e.g. a loaded model file).
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let expected = p.tensors().len();
        if tensors.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
            if dst.name != src.name || dst.shape != src.shape || src.data.len() != dst.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.data = src.data;
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn towers(&self) -> &TwoTower {
        &self.towers
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    /// Incremented on every mutable access; forward traces record it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        self.towers.tensors().chain(self.rnn.iter()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.version += 1;
        self.towers
            .tensors_mut()
            .chain(self.rnn.iter_mut())
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors().into_iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors_mut().into_iter().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.tensors().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    /// Runs the recurrence and head on a precomputed embedding.
    pub fn head_forward(&self, embedding: &[f64]) -> Result<HeadTrace> {
        let h = self.config.hidden;
        let e2 = self.towers.embed_dim();
        if embedding.len() != e2 {
            return Err(Error::Shape(format!(
                "embedding has {} entries, expected {e2}",
                embedding.len()
            )));
        }
        let w_i = &self.rnn[W_I].data;
        let w_h = &self.rnn[W_H].data;
        let b = &self.rnn[B_H].data;
        let w_o = &self.rnn[W_O].data;
        let b_o = &self.rnn[B_O].data;
        let base: Vec<f64> = (0..h)
            .map(|j| b[j] + dot(&w_i[j * e2..(j + 1) * e2], embedding))
            .collect();
        let mut trace = HeadTrace {
            base: base.clone(),
            pre_h: Vec::with_capacity(self.config.steps),
            h: Vec::with_capacity(self.config.steps),
            pre_logits: Vec::with_capacity(self.config.steps),
            probs: Vec::with_capacity(self.config.steps),
        };
        for t in 0..self.config.steps {
            let pre: Vec<f64> = if t == 0 {
                base.clone()
            } else {
                let prev = &trace.h[t - 1];
                (0..h)
                    .map(|j| base[j] + dot(&w_h[j * h..(j + 1) * h], prev))
                    .collect()
            };
            let ht: Vec<f64> = pre.iter().map(|&v| relu(v)).collect();
            let mut z = [0.0; NUM_CLASSES];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = b_o[c] + dot(&w_o[c * h..(c + 1) * h], &ht);
            }
            let logits = if self.config.relu_head {
                z.map(relu)
            } else {
                z
            };
            trace.probs.push(softmax(&logits));
            trace.pre_logits.push(z);
            trace.pre_h.push(pre);
            trace.h.push(ht);
        }
        Ok(trace)
    }
}

/// Recurrent and head activations for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    /// `W_I·I + b`, shared by every step.
    pub base: Vec<f64>,
    pub pre_h: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub pre_logits: Vec<[f64; NUM_CLASSES]>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
}

/// Everything [`backward`] needs, stamped with the parameter version it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub version: u64,
    towers: TwoTowerTrace,
    pub embedding: Vec<f64>,
    pub head: HeadTrace,
}

impl ForwardTrace {
    pub fn distributions(&self) -> &[[f64; NUM_CLASSES]] {
        &self.head.probs
    }

    /// Rectifier signs and pooling winners along the whole forward pass.
    fn pattern(&self, params: &PredictorParams) -> Vec<u32> {
        let mut out = Vec::new();
        params.towers.image.pattern(&self.towers.image, &mut out);
        params.towers.force.pattern(&self.towers.force, &mut out);
        for pre in &self.head.pre_h {
            out.extend(pre.iter().map(|&v| (v > 0.0) as u32));
        }
        if params.config.relu_head {
            for z in &self.head.pre_logits {
                out.extend(z.iter().map(|&v| (v > 0.0) as u32));
            }
        }
        out
    }
}

/// Gradient buffers aligned with [`PredictorParams::tensors`] (or any parameter list).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.0.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = logits.map(|z| (z - m).exp());
    let s: f64 = e.iter().sum();
    for v in e.iter_mut() {
        *v /= s;
    }
    e
}

pub fn init_params(seed: u64, config: &ModelConfig) -> Result<PredictorParams> {
    config.init.validate()?;
    let mut p = PredictorParams::zeros(config)?;
    let mut rng = seed::rng(seed);
    p.towers.init(&mut rng, config.init);
    let h = config.hidden;
    let e2 = p.towers.embed_dim();
    let (std_i, std_o, bias_o) = match config.init {
        InitScheme::Gaussian { std } => (std, std, 0.0),
        InitScheme::Scaled {
            head_std,
            head_bias,
            ..
        } => ((1.0 / e2 as f64).sqrt(), head_std, head_bias),
    };
    let ni = Normal::new(0.0, std_i).unwrap();
    for v in &mut p.rnn[W_I].data {
        *v = ni.sample(&mut rng);
    }
    for j in 0..h {
        p.rnn[W_H].data[j * h + j] = 1.0;
    }
    let no = Normal::new(0.0, std_o).unwrap();
    for v in &mut p.rnn[W_O].data {
        *v = no.sample(&mut rng);
    }
    p.rnn[B_O].data.fill(bias_o);
    Ok(p)
}

/// The concatenated tower outputs `I`.
pub fn embed(params: &PredictorParams, sample: &EncodedSample) -> Result<Vec<f64>> {
    embed_tensors(params.towers(), &sample.rgbm, &sample.force_image)
}

pub fn embed_tensors(towers: &TwoTower, rgbm: &ImageTensor, force: &ImageTensor) -> Result<Vec<f64>> {
    Ok(towers.forward(rgbm, force)?.0)
}

pub fn forward(
    params: &PredictorParams,
    sample: &EncodedSample,
) -> Result<(Vec<[f64; NUM_CLASSES]>, ForwardTrace)> {
    forward_tensors(params, &sample.rgbm, &sample.force_image)
}

pub fn forward_tensors(
    params: &PredictorParams,
    rgbm: &ImageTensor,
    force: &ImageTensor,
) -> Result<(Vec<[f64; NUM_CLASSES]>, ForwardTrace)> {
    let (embedding, towers) = params.towers.forward(rgbm, force)?;
    let head = params.head_forward(&embedding)?;
    let probs = head.probs.clone();
    Ok((
        probs,
        ForwardTrace {
            version: params.version,
            towers,
            embedding,
            head,
        },
    ))
}

/// Greedy decoding: per-step argmax (lowest index wins ties), truncated at the first stop.
pub fn decode_greedy(distributions: &[[f64; NUM_CLASSES]]) -> VelocitySequence {
    VelocitySequence::from_stream(distributions.iter().map(|o| {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if o[c] > o[best] {
                best = c;
            }
        }
        crate::quantize::Token::new(best).unwrap()
    }))
}

/// Exact gradients of the weighted sequence loss.
pub fn backward(
    params: &PredictorParams,
    trace: &ForwardTrace,
    label: &VelocitySequence,
    weights: &ClassWeights,
) -> Result<Gradients> {
    if trace.version != params.version {
        return Err(Error::StaleTrace {
            trace: trace.version,
            params: params.version,
        });
    }
    let steps = params.config.steps;
    if weights.steps() < steps {
        return Err(Error::Shape(format!(
            "class weights cover {} steps, model has {steps}",
            weights.steps()
        )));
    }
    let h = params.config.hidden;
    let e2 = params.towers.embed_dim();
    let nt = params.towers.num_tensors();
    let mut grads = params.zero_grads();
    let w_h = &params.rnn[W_H].data;
    let w_o = &params.rnn[W_O].data;
    let w_i = &params.rnn[W_I].data;
    let targets = label.padded(steps);
    let head = &trace.head;

    let mut d_base = vec![0.0; h];
    let mut d_h_next = vec![0.0; h];
    for t in (0..steps).rev() {
        let v = targets[t].index();
        let scale = weights.get(t, v) / steps as f64;
        let mut dz = head.probs[t].map(|p| p * scale);
        dz[v] -= scale;
        if params.config.relu_head {
            for (d, &z) in dz.iter_mut().zip(&head.pre_logits[t]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let ht = &head.h[t];
        let mut dh = d_h_next.clone();
        for c in 0..NUM_CLASSES {
            let g = dz[c];
            grads.0[nt + B_O][c] += g;
            if g == 0.0 {
                continue;
            }
            for j in 0..h {
                grads.0[nt + W_O][c * h + j] += g * ht[j];
                dh[j] += g * w_o[c * h + j];
            }
        }
        let dpre: Vec<f64> = dh
            .iter()
            .zip(&head.pre_h[t])
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        for j in 0..h {
            d_base[j] += dpre[j];
        }
        d_h_next = vec![0.0; h];
        if t > 0 {
            let prev = &head.h[t - 1];
            for j in 0..h {
                let g = dpre[j];
                if g == 0.0 {
                    continue;
                }
                for k in 0..h {
                    grads.0[nt + W_H][j * h + k] += g * prev[k];
                    d_h_next[k] += g * w_h[j * h + k];
                }
            }
        }
    }

    let mut d_embed = vec![0.0; e2];
    for j in 0..h {
        let g = d_base[j];
        grads.0[nt + B_H][j] += g;
        if g == 0.0 {
            continue;
        }
        for i in 0..e2 {
            grads.0[nt + W_I][j * e2 + i] += g * trace.embedding[i];
            d_embed[i] += g * w_i[j * e2 + i];
        }
    }
    params
        .towers
        .backward(&trace.towers, &d_embed, &mut grads.0[..nt]);
    Ok(grads)
}

/// Loss of one sample under the current parameters.
pub fn sample_loss(
    params: &PredictorParams,
    sample: &EncodedSample,
    label: &VelocitySequence,
    weights: &ClassWeights,
) -> Result<f64> {
    let (probs, _) = forward(params, sample)?;
    Ok(train::sequence_loss(&probs, label, weights))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±ε perturbation flips a rectifier or a pooling winner.
    pub excluded: usize,
    pub excluded_fraction: f64,
    pub groups: Vec<GroupError>,
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Central finite differences over every parameter coordinate.
pub fn grad_check(
    params: &PredictorParams,
    sample: &EncodedSample,
    label: &VelocitySequence,
    weights: &ClassWeights,
    epsilon: f64,
) -> Result<GradCheckReport> {
    grad_check_subsampled(params, sample, label, weights, epsilon, None, 0)
}

/// Like [`grad_check`], but checks at most `per_tensor` random coordinates of each tensor.
pub fn grad_check_subsampled(
    params: &PredictorParams,
    sample: &EncodedSample,
    label: &VelocitySequence,
    weights: &ClassWeights,
    epsilon: f64,
    per_tensor: Option<usize>,
    rng_seed: u64,
) -> Result<GradCheckReport> {
    let (_, trace) = forward(params, sample)?;
    let analytic = backward(params, &trace, label, weights)?;
    let base_pattern = trace.pattern(params);
    let mut probe = params.clone();
    let mut rng = seed::rng(rng_seed);
    let names: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    let mut groups: Vec<GroupError> = Vec::new();
    let (mut checked, mut excluded) = (0usize, 0usize);
    let mut max_err: f64 = 0.0;

    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].len();
        let coords: Vec<usize> = match per_tensor {
            Some(n) if n < len => (0..n).map(|_| rng.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        let gname = group_of(name).to_string();
        if !groups.iter().any(|g| g.group == gname) {
            groups.push(GroupError {
                group: gname.clone(),
                checked: 0,
                max_rel_error: 0.0,
            });
        }
        for ci in coords {
            let orig = params.tensors()[ti].data[ci];
            let mut eval = |value: f64| -> Result<(f64, Vec<u32>)> {
                probe.tensors_mut()[ti].data[ci] = value;
                let (probs, tr) = forward(&probe, sample)?;
                Ok((train::sequence_loss(&probs, label, weights), tr.pattern(&probe)))
            };
            let (lp, pp) = eval(orig + epsilon)?;
            let (lm, pm) = eval(orig - epsilon)?;
            eval(orig)?;
            if pp != base_pattern || pm != base_pattern {
                excluded += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic.0[ti][ci];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            checked += 1;
            max_err = max_err.max(err);
            let g = groups.iter_mut().find(|g| g.group == gname).unwrap();
            g.checked += 1;
            g.max_rel_error = g.max_rel_error.max(err);
        }
    }
    let total = checked + excluded;
    Ok(GradCheckReport {
        epsilon,
        max_rel_error: max_err,
        checked,
        excluded,
        excluded_fraction: if total > 0 { excluded as f64 / total as f64 } else { 0.0 },
        groups,
    })
}
