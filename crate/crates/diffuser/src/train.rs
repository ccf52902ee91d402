//! Noise-prediction training with AdamW.
//!
//! Each step draws a batch of samples, a uniform step `k` in `1..=K` and
//! unit Gaussian noise per sample, and minimises the mean squared error
//! between the noise and its prediction. With probability
//! `cond_dropout` a sample's condition vector is replaced by zeros.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TrainingSample;
use crate::model::{hwc_to_chw, Denoiser};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// The learning rate follows a cosine from `learning_rate` down to
    /// `learning_rate * final_lr_fraction`; 1.0 keeps it constant.
    pub final_lr_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            steps: 10_000,
            learning_rate: 1e-5,
            final_lr_fraction: 1.0,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::Invalid("condition dropout must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Invalid("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Denoiser<T>,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.losses)
    }
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    out
}

pub fn write_loss_csv(losses: &[f64], path: &Path) -> Result<()> {
    std::fs::write(path, loss_csv(losses)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    fn new(n: usize) -> Self {
        AdamW {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grads: &[T], cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let step = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(cfg.adam_eps);
        let decay = T::of(1.0 - lr * cfg.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let denom = (self.v[i] * inv_bc2).sqrt() + eps;
            params[i] = params[i] * decay - step * self.m[i] / denom;
        }
    }
}

/// Trains `model` in place on `samples`; `progress` sees `(step, loss)`
/// after every step.
pub fn train<T: Scalar>(
    mut model: Denoiser<T>,
    samples: &[TrainingSample],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let dim = model.config().cond_dim;
    if let Some(bad) = samples
        .iter()
        .position(|s| s.condition.dim() != dim || !s.delta_image.is_finite())
    {
        return Err(Error::Invalid(format!("training sample {bad} is malformed")));
    }
    let targets: Vec<Vec<T>> = samples.iter().map(|s| hwc_to_chw(s.delta_image.as_slice())).collect();
    let zero_cond = vec![0f32; dim];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.param_count());
    let mut grads = vec![T::zero(); model.param_count()];
    let mut losses = Vec::with_capacity(cfg.steps);
    let weight = 1.0 / cfg.batch as f64;
    let n_pix = targets[0].len();

    for step in 0..cfg.steps {
        grads.fill(T::zero());
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = rng.random_range(0..samples.len());
            batch.push(idx);
            let k = rng.random_range(1..=sched.steps());
            let drop = rng.random_bool(cfg.cond_dropout);
            let eps: Vec<T> = (0..n_pix)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(z)
                })
                .collect();
            let ab = sched.alpha_bar(k);
            let (a, s) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
            let xk: Vec<T> = targets[idx].iter().zip(&eps).map(|(x, e)| a * *x + s * *e).collect();
            let cond = if drop {
                &zero_cond[..]
            } else {
                samples[idx].condition.values()
            };
            total += model.loss_and_grad(&xk, cond, k, ab, &eps, weight, &mut grads)?;
        }
        let loss = total * weight;
        let grad_ok = grads.iter().all(|g| g.is_finite());
        if !loss.is_finite() || !grad_ok {
            let from = losses.len().saturating_sub(10);
            return Err(Error::NonFiniteLoss {
                step: step + 1,
                loss,
                batch,
                tail: losses[from..].to_vec(),
            });
        }
        if cfg.grad_clip > 0.0 {
            let norm = grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let s = T::of(cfg.grad_clip / norm);
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        opt.step(model.params_mut(), &grads, cfg, cfg.lr_at(step));
        losses.push(loss);
        progress(step + 1, loss);
    }
    Ok(TrainOutcome { model, losses })
}
