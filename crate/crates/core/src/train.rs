//! Loss, learning-rate schedule, Adam and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{LabelVector, VideoFeatures};
use crate::decoder::model_forward;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tape::GradTape;
use crate::tensor::SeqTensor;

const PROB_FLOOR: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Loss

pub(crate) fn bce_forward<S: Scalar>(p: &[S], y: &[S]) -> S {
    let lo = S::lit(PROB_FLOOR);
    let hi = S::one() - lo;
    let total: S = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            // Explicit comparisons so a NaN prediction stays NaN.
            let p = if p < lo {
                lo
            } else if p > hi {
                hi
            } else {
                p
            };
            -(y * p.ln() + (S::one() - y) * (S::one() - p).ln())
        })
        .sum();
    total / S::from_usize_exact(p.len().max(1))
}

/// Derivative of the mean clamped BCE; zero where the clamp is active.
pub(crate) fn bce_backward<S: Scalar>(p: &[S], y: &[S], upstream: S) -> Vec<S> {
    let lo = S::lit(PROB_FLOOR);
    let hi = S::one() - lo;
    let scale = upstream / S::from_usize_exact(p.len().max(1));
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < lo || p > hi {
                S::zero()
            } else {
                scale * ((S::one() - y) / (S::one() - p) - y / p)
            }
        })
        .collect()
}

/// Mean per-frame binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(pred: &[f64], target: &LabelVector) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    Ok(bce_forward(pred, target.as_slice()))
}

// ---------------------------------------------------------------------------
// Schedule

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    /// Smooth predictions with the Gaussian filter before the loss.
    pub smooth_targets: bool,
    /// Smooth predictions before peak picking at inference time.
    pub smooth_inference: bool,
    /// Frames on each side of a boundary's nearest frame labelled positive.
    pub label_radius: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr_peak: 4e-4,
            lr_final: 4e-6,
            warmup_epochs: 2,
            smooth_targets: true,
            smooth_inference: true,
            label_radius: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if !(self.lr_final >= 0.0 && self.lr_final < self.lr_peak && self.lr_peak.is_finite()) {
            return Err(Error::Invalid(format!(
                "need 0 <= lr_final < lr_peak, got {} and {}",
                self.lr_final, self.lr_peak
            )));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::Invalid(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_peak`, then cosine decay reaching `lr_final`
/// on the last step.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warmup {
        return cfg.lr_peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    let u = if span == 0 {
        1.0
    } else {
        ((step - warmup) as f64 / span as f64).min(1.0)
    };
    cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * (1.0 + (std::f64::consts::PI * u).cos()) / 2.0
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates mirroring the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<SeqTensor<S>>,
    pub v: Vec<SeqTensor<S>>,
    pub step: u64,
    pub hyper: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[SeqTensor<S>], hyper: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| SeqTensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<S: Scalar>(
    params: &mut [SeqTensor<S>],
    grads: &[SeqTensor<S>],
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    if let Some(i) = (0..params.len()).find(|&i| params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
        return Err(Error::shape("adam_step", format!("tensor {i} shapes disagree")));
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let b1 = S::lit(h.beta1);
    let b2 = S::lit(h.beta2);
    let c1 = S::lit(1.0 - h.beta1.powi(t));
    let c2 = S::lit(1.0 - h.beta2.powi(t));
    let lr = S::lit(lr);
    let eps = S::lit(h.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + (S::one() - b1) * gv;
            *vv = b2 * *vv + (S::one() - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop

/// One training sequence and its frame labels.
#[derive(Clone, Debug)]
pub struct TrainExample<S> {
    pub features: VideoFeatures<S>,
    pub labels: LabelVector,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for p in curve {
        let _ = writeln!(s, "{},{:e},{:.8}", p.step, p.lr, p.loss);
    }
    s
}

pub fn save_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    write_atomic(path, curve_to_csv(curve).as_bytes())
}

/// Loss of one example and its adjoints for every parameter tensor.
pub fn example_gradients<S: Scalar>(
    params: &ModelParams<S>,
    example: &TrainExample<S>,
    smooth_targets: bool,
) -> Result<(f64, Vec<SeqTensor<S>>)> {
    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape);
    let trace = model_forward(&mut tape, &bound, &example.features)?;
    let pred = if smooth_targets {
        tape.gaussian_smooth(trace.scores, example.features.fps)
    } else {
        trace.scores
    };
    let target: Vec<S> = example.labels.as_slice().iter().map(|&v| S::lit(v)).collect();
    let loss = tape.bce_loss(pred, &target)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).get(0, 0).to_f64_lossy();
    let per_param = bound
        .vars
        .iter()
        .map(|&v| grads.take(v).expect("leaf adjoint present"))
        .collect();
    Ok((value, per_param))
}

/// Parameters plus optimizer state, advanced one mini-batch at a time.
pub struct Trainer<S> {
    pub params: ModelParams<S>,
    pub adam: AdamState<S>,
    pub smooth_targets: bool,
    steps_taken: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(params: ModelParams<S>, smooth_targets: bool) -> Self {
        let adam = AdamState::new(params.tensors(), AdamConfig::default());
        Self {
            params,
            adam,
            smooth_targets,
            steps_taken: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Mean loss and mean gradients over a batch. Examples are processed in
    /// parallel and reduced in batch order, so the result does not depend on
    /// the thread count.
    pub fn batch_gradients(&self, batch: &[&TrainExample<S>]) -> Result<(f64, Vec<SeqTensor<S>>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let results = batch
            .par_iter()
            .map(|ex| example_gradients(&self.params, ex, self.smooth_targets))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len();
        let mut iter = results.into_iter();
        let (mut loss, mut grads) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
        }
        let inv = S::one() / S::from_usize_exact(n);
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        Ok((loss / n as f64, grads))
    }

    /// Forward, backward and one Adam update at learning rate `lr`.
    pub fn step(&mut self, batch: &[&TrainExample<S>], lr: f64) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.steps_taken });
        }
        adam_step(self.params.tensors_mut(), &grads, &mut self.adam, lr)?;
        self.steps_taken += 1;
        Ok(loss)
    }
}

pub struct TrainOutcome<S> {
    pub params: ModelParams<S>,
    pub curve: Vec<CurvePoint>,
}

/// Seeded mini-batch training; returns the parameters after the last epoch.
pub fn train<S: Scalar>(dataset: &[TrainExample<S>], model: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    cfg.validate()?;
    let frames = dataset[0].features.frames();
    if let Some(ex) = dataset.iter().find(|ex| ex.features.frames() != frames) {
        return Err(Error::Invalid(format!(
            "training sequences must share a length: {} has {} frames, expected {frames}",
            ex.features.video_id,
            ex.features.frames()
        )));
    }
    if let Some(ex) = dataset.iter().find(|ex| ex.labels.len() != ex.features.frames()) {
        return Err(Error::shape(
            "train",
            format!("{} has {} labels for {} frames", ex.features.video_id, ex.labels.len(), frames),
        ));
    }
    let params = ModelParams::init(model, cfg.seed)?;
    let mut trainer = Trainer::new(params, cfg.smooth_targets);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = trainer.steps_taken();
            let lr = lr_schedule(step, steps_per_epoch, cfg);
            let batch: Vec<&TrainExample<S>> = chunk.iter().map(|&i| &dataset[i]).collect();
            let loss = trainer.step(&batch, lr)?;
            curve.push(CurvePoint { step, lr, loss });
        }
    }
    Ok(TrainOutcome {
        params: trainer.params,
        curve,
    })
}
