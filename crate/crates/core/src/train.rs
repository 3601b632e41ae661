//! Weighted sequence loss, momentum SGD with geometric learning-rate decay, and the two
//! baselines (direct velocity regression and nearest-neighbour retrieval on `I`).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::EncodedSample;
use crate::net::{self, Gradients, InitScheme, ModelConfig, ParamTensor, PredictorParams, TwoTower};
use crate::quantize::{
    class_weights, quantize_velocity, ClassWeights, DirectionVocabulary, VelocitySequence,
    MAX_STEPS, NUM_CLASSES,
};
use crate::scene::Vec3;
use crate::{seed, Error, Result};

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const STREAM_BATCHES: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_REGRESSION_HEAD: u64 = 3;

static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of labelled probabilities clamped to [`PROB_FLOOR`] since process start.
pub fn clamp_warnings() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// `−(1/T) Σ_t q_t(v_t) · ln o_t[v_t]` with the label padded to `T = outputs.len()` by `stop`.
pub fn sequence_loss(
    outputs: &[[f64; NUM_CLASSES]],
    label: &VelocitySequence,
    weights: &ClassWeights,
) -> f64 {
    let steps = outputs.len();
    if steps == 0 {
        return 0.0;
    }
    let targets = label.padded(steps);
    let mut total = 0.0;
    for (t, (o, v)) in outputs.iter().zip(&targets).enumerate() {
        let mut p = o[v.index()];
        if !(p >= PROB_FLOOR) && !p.is_nan() {
            CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
            p = PROB_FLOOR;
        }
        total -= weights.get(t, v.index()) * p.ln();
    }
    total / steps as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub seed: u64,
    pub steps: usize,
    /// Inverse-frequency class weights from the training labels; unit weights otherwise.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            iterations: 1500,
            lr_start: 1e-2,
            lr_end: 1e-4,
            momentum: 0.9,
            seed: 0,
            steps: MAX_STEPS,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            return Err(Error::Config(format!("steps must be in 1..={MAX_STEPS}")));
        }
        Ok(())
    }
}

/// Geometric decay from `lr_start` at iteration 0 to `lr_end` at the last iteration.
pub fn lr_at(iteration: usize, cfg: &TrainConfig) -> f64 {
    if cfg.iterations <= 1 {
        return cfg.lr_start;
    }
    let r = (iteration.min(cfg.iterations - 1)) as f64 / (cfg.iterations - 1) as f64;
    cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(r)
}

/// A model the SGD loop can optimize.
trait Objective: Sync {
    fn loss_and_grads(&self, sample: &EncodedSample, weights: &ClassWeights) -> Result<(f64, Gradients)>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;
}

impl Objective for PredictorParams {
    fn loss_and_grads(&self, sample: &EncodedSample, weights: &ClassWeights) -> Result<(f64, Gradients)> {
        let (probs, trace) = net::forward(self, sample)?;
        let loss = sequence_loss(&probs, &sample.label, weights);
        Ok((loss, net::backward(self, &trace, &sample.label, weights)?))
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.tensors_mut()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    pub params: P,
    /// Mean batch loss per iteration.
    pub loss_history: Vec<f64>,
}

fn sgd<M: Objective>(
    model: &mut M,
    samples: &[EncodedSample],
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut rng = seed::rng(seed::derive(cfg.seed, STREAM_BATCHES));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut velocity: Vec<Vec<f64>> = model.params_mut().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut history = Vec::with_capacity(cfg.iterations);
    let bs = cfg.batch_size.min(samples.len());
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let lr = lr_at(it, cfg);
        let results: Vec<Result<(f64, Gradients)>> = {
            let m: &M = model;
            batch
                .par_iter()
                .map(|&i| m.loss_and_grads(&samples[i], weights))
                .collect()
        };
        let mut loss = 0.0;
        let mut total: Option<Gradients> = None;
        for r in results {
            let (l, g) = r?;
            loss += l;
            match total.as_mut() {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
        let mut grads = total.unwrap();
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        grads.scale(inv);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NumericAbort {
                iteration: it,
                lr,
                batch,
            });
        }
        history.push(loss);
        for ((t, v), g) in model.params_mut().into_iter().zip(&mut velocity).zip(&grads.0) {
            for ((p, vi), gi) in t.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = cfg.momentum * *vi + gi;
                *p -= lr * *vi;
            }
        }
    }
    Ok(history)
}

fn training_weights(samples: &[EncodedSample], cfg: &TrainConfig) -> Result<ClassWeights> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.class_weighting {
        let labels: Vec<VelocitySequence> = samples.iter().map(|s| s.label.clone()).collect();
        class_weights(&labels, cfg.steps)
    } else {
        Ok(ClassWeights::uniform(cfg.steps))
    }
}

/// Trains the sequence predictor end to end; class weights come from `samples`' labels.
pub fn train(
    samples: &[EncodedSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<PredictorParams>> {
    cfg.validate()?;
    let weights = training_weights(samples, cfg)?;
    let mut config = model.clone();
    config.steps = cfg.steps;
    let mut params = net::init_params(seed::derive(cfg.seed, STREAM_INIT), &config)?;
    let loss_history = sgd(&mut params, samples, &weights, cfg)?;
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

/// Continues training from existing parameters with explicit weights.
pub fn train_from(
    params: PredictorParams,
    samples: &[EncodedSample],
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<PredictorParams>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = params;
    let loss_history = sgd(&mut params, samples, weights, cfg)?;
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

/// Elementwise Huber loss with δ = 1.
pub fn smooth_l1(residual: f64) -> f64 {
    let a = residual.abs();
    if a < 1.0 {
        0.5 * residual * residual
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(residual: f64) -> f64 {
    residual.clamp(-1.0, 1.0)
}

pub const REGRESSION_OUTPUTS: usize = 3 * MAX_STEPS;

/// Six per-step unit direction vectors; `stop` and padding are zero.
pub fn regression_targets(label: &VelocitySequence, vocab: &DirectionVocabulary) -> [f64; REGRESSION_OUTPUTS] {
    let mut out = [0.0; REGRESSION_OUTPUTS];
    for (t, tok) in label.tokens().iter().enumerate() {
        if !tok.is_stop() {
            let d = vocab.direction(tok.index());
            out[3 * t..3 * t + 3].copy_from_slice(&d.to_array());
        }
    }
    out
}

/// Shared towers plus a fully-connected map from `I` to six 3-vectors.
#[derive(Clone, Debug)]
pub struct RegressionParams {
    config: ModelConfig,
    towers: TwoTower,
    /// `head.w` (18 × 2E) and `head.b` (18).
    head: Vec<ParamTensor>,
}

impl RegressionParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let towers = TwoTower::new(config)?;
        let e2 = towers.embed_dim();
        Ok(Self {
            config: config.clone(),
            towers,
            head: vec![
                ParamTensor {
                    name: "regression.w".into(),
                    shape: vec![REGRESSION_OUTPUTS, e2],
                    data: vec![0.0; REGRESSION_OUTPUTS * e2],
                },
                ParamTensor {
                    name: "regression.b".into(),
                    shape: vec![REGRESSION_OUTPUTS],
                    data: vec![0.0; REGRESSION_OUTPUTS],
                },
            ],
        })
    }

    pub fn from_tensors(config: &ModelConfig, tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let expected = p.tensors().len();
        if tensors.len() != expected {
            return Err(Error::Shape(format!("expected {expected} tensors, got {}", tensors.len())));
        }
        for (dst, src) in p.params_mut().into_iter().zip(tensors) {
            if dst.name != src.name || dst.shape != src.shape || dst.data.len() != src.data.len() {
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

    pub fn tensors(&self) -> Vec<&ParamTensor> {
        self.towers.tensors().chain(self.head.iter()).collect()
    }

    /// The raw 18 outputs.
    pub fn outputs(&self, sample: &EncodedSample) -> Result<[f64; REGRESSION_OUTPUTS]> {
        let (e, _) = self.towers.forward(&sample.rgbm, &sample.force_image)?;
        Ok(self.head_outputs(&e))
    }

    fn head_outputs(&self, e: &[f64]) -> [f64; REGRESSION_OUTPUTS] {
        let n = e.len();
        let w = &self.head[0].data;
        let b = &self.head[1].data;
        let mut out = [0.0; REGRESSION_OUTPUTS];
        for (j, o) in out.iter_mut().enumerate() {
            *o = b[j] + w[j * n..(j + 1) * n].iter().zip(e).map(|(a, x)| a * x).sum::<f64>();
        }
        out
    }
}

struct RegressionObjective<'a> {
    params: RegressionParams,
    vocab: &'a DirectionVocabulary,
}

impl Objective for RegressionObjective<'_> {
    fn loss_and_grads(&self, sample: &EncodedSample, _: &ClassWeights) -> Result<(f64, Gradients)> {
        let p = &self.params;
        let (e, trace) = p.towers.forward(&sample.rgbm, &sample.force_image)?;
        let out = p.head_outputs(&e);
        let target = regression_targets(&sample.label, self.vocab);
        let n = e.len();
        let inv = 1.0 / REGRESSION_OUTPUTS as f64;
        let mut grads = Gradients(p.tensors().iter().map(|t| vec![0.0; t.len()]).collect());
        let nt = grads.0.len() - 2;
        let mut loss = 0.0;
        let mut d_embed = vec![0.0; n];
        let w = &p.head[0].data;
        for j in 0..REGRESSION_OUTPUTS {
            let r = out[j] - target[j];
            loss += smooth_l1(r) * inv;
            let g = smooth_l1_grad(r) * inv;
            grads.0[nt + 1][j] += g;
            for i in 0..n {
                grads.0[nt][j * n + i] += g * e[i];
                d_embed[i] += g * w[j * n + i];
            }
        }
        p.towers.backward(&trace, &d_embed, &mut grads.0[..nt]);
        Ok((loss, grads))
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.params.params_mut()
    }
}

impl RegressionParams {
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.towers
            .image
            .tensors_mut_internal()
            .chain(self.towers.force.tensors_mut_internal())
            .chain(self.head.iter_mut())
            .collect()
    }
}

pub fn init_regression(seed_value: u64, config: &ModelConfig) -> Result<RegressionParams> {
    let donor = net::init_params(seed_value, config)?;
    let mut p = RegressionParams::zeros(config)?;
    let nt = p.tensors().len() - 2;
    for (dst, src) in p.params_mut().into_iter().zip(donor.tensors()).take(nt) {
        dst.data.clone_from(&src.data);
    }
    let e2 = p.towers.embed_dim();
    let std = match config.init {
        InitScheme::Gaussian { std } => std,
        InitScheme::Scaled { .. } => (1.0 / e2 as f64).sqrt(),
    };
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = seed::rng(seed::derive(seed_value, STREAM_REGRESSION_HEAD));
    for v in &mut p.head[0].data {
        *v = normal.sample(&mut rng);
    }
    Ok(p)
}

pub fn train_regression(
    samples: &[EncodedSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &DirectionVocabulary,
) -> Result<TrainOutcome<RegressionParams>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut obj = RegressionObjective {
        params: init_regression(seed::derive(cfg.seed, STREAM_INIT), model)?,
        vocab,
    };
    let loss_history = sgd(&mut obj, samples, &ClassWeights::uniform(cfg.steps), cfg)?;
    Ok(TrainOutcome {
        params: obj.params,
        loss_history,
    })
}

/// Quantizes six 3-vectors step by step and truncates at the first `stop`.
pub fn decode_regression(
    outputs: &[f64; REGRESSION_OUTPUTS],
    vocab: &DirectionVocabulary,
    stop_speed: f64,
) -> VelocitySequence {
    VelocitySequence::from_stream(outputs.chunks_exact(3).map(|c| {
        quantize_velocity(Vec3::new(c[0], c[1], c[2]), vocab, stop_speed)
    }))
}

pub fn predict_regression(
    params: &RegressionParams,
    sample: &EncodedSample,
    vocab: &DirectionVocabulary,
    stop_speed: f64,
) -> Result<VelocitySequence> {
    Ok(decode_regression(&params.outputs(sample)?, vocab, stop_speed))
}

/// Training embeddings `I` with their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<VelocitySequence>,
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row of the nearest embedding and its squared distance; ties go to the lower row.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.embeddings.iter().enumerate() {
            if row.len() != query.len() {
                return Err(Error::LengthMismatch(row.len(), query.len()));
            }
            let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.ok_or(Error::Empty("neighbor index"))
    }
}

pub fn build_index(params: &PredictorParams, samples: &[EncodedSample]) -> Result<NeighborIndex> {
    let embeddings = samples
        .par_iter()
        .map(|s| net::embed(params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(NeighborIndex {
        embeddings,
        labels: samples.iter().map(|s| s.label.clone()).collect(),
    })
}

pub fn nn_predict(
    index: &NeighborIndex,
    params: &PredictorParams,
    sample: &EncodedSample,
) -> Result<VelocitySequence> {
    let (row, _) = index.nearest(&net::embed(params, sample)?)?;
    Ok(index.labels[row].clone())
}

/// Most frequent sequence and its count; ties go to the smallest sequence in token order.
pub fn majority_sequence(labels: &[VelocitySequence]) -> Option<(VelocitySequence, usize)> {
    let mut counts = std::collections::BTreeMap::<&VelocitySequence, usize>::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(&VelocitySequence, usize)> = None;
    for (s, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((s, c));
        }
    }
    best.map(|(s, c)| (s.clone(), c))
}

/// Greedy predictions of the sequence model.
pub fn predict_all(params: &PredictorParams, samples: &[EncodedSample]) -> Result<Vec<VelocitySequence>> {
    samples
        .par_iter()
        .map(|s| Ok(net::decode_greedy(&net::forward(params, s)?.0)))
        .collect()
}
