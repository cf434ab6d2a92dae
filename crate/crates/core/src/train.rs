//! Minibatch training: Adam on the negated SA-MMI objective, with an optional
//! warm-up phase that trains recognition alone.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSequence;
use crate::loss::{sa_mmi_gradients, LossBreakdown, LossError};
use crate::model::{ModelParams, SpeakerInventory};
use crate::numerics::Tensor;
use crate::sot::SerializedTarget;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss or gradient on batch item {item}")]
    NonFinite { item: usize },
    #[error("optimizer state does not match the parameters")]
    StateMismatch,
    #[error("training item {item}: {source}")]
    Item { item: usize, source: LossError },
}

/// One supervised mixture.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureSequence,
    pub target: SerializedTarget,
    pub inventory: SpeakerInventory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// When set, the rate decays linearly from `learning_rate` to this value over `steps`.
    pub final_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub steps: u64,
    /// Steps trained with γ = 0 and a detached weighted profile before full SA-MMI.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            learning_rate: 1e-3,
            final_learning_rate: None,
            batch_size: 8,
            steps: 1000,
            warmup_steps: 0,
            clip_norm: None,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if matches!(self.final_learning_rate, Some(f) if !f.is_finite() || f < 0.0) {
            return Err("final_learning_rate must be >= 0".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return Err("clip_norm must be positive".into());
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        match self.final_learning_rate {
            Some(f) if self.steps > 1 => {
                let t = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
                self.learning_rate + (f - self.learning_rate) * t
            }
            _ => self.learning_rate,
        }
    }

    /// γ and profile detachment in effect at `step`.
    pub fn phase(&self, step: u64) -> (f64, bool) {
        if step < self.warmup_steps {
            (0.0, true)
        } else {
            (self.gamma, false)
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != self.m.len() {
            return Err(TrainError::StateMismatch);
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.tensor_mut(i).data_mut();
            if g.len() != w.len() {
                return Err(TrainError::StateMismatch);
            }
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors for checkpointing.
    pub fn state_tensors(&self, params: &ModelParams) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (kind, moments) in [("adam.m", &self.m), ("adam.v", &self.v)] {
            for ((name, t), data) in params.names().iter().zip(params.tensors()).zip(moments) {
                out.push((
                    format!("{kind}.{name}"),
                    Tensor::new(t.shape().to_vec(), data.clone()).expect("shape from params"),
                ));
            }
        }
        out
    }

    pub fn from_state(params: &ModelParams, steps: u64, state: &[(String, Tensor)]) -> Result<Self, TrainError> {
        let mut adam = Self::new(params);
        adam.steps = steps;
        for (i, name) in params.names().iter().enumerate() {
            for (kind, slot) in [("adam.m", &mut adam.m[i]), ("adam.v", &mut adam.v[i])] {
                let key = format!("{kind}.{name}");
                let t = state.iter().find(|(n, _)| *n == key).ok_or(TrainError::StateMismatch)?;
                if t.1.len() != slot.len() {
                    return Err(TrainError::StateMismatch);
                }
                slot.copy_from_slice(t.1.data());
            }
        }
        Ok(adam)
    }
}

/// Per-step outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mean over the batch.
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
}

impl StepReport {
    pub fn log_line(&self) -> String {
        let b = &self.breakdown;
        format!(
            "step {} total {:.6} token {:.6} speaker {:.6} gamma {} grad_norm {:.6}",
            self.step, b.total, b.token_logprob, b.speaker_logprob, b.gamma, self.grad_norm
        )
    }
}

/// Mean-over-batch gradients and breakdown.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&Example],
    gamma: f64,
    detach_profile: bool,
    threads: usize,
) -> Result<(LossBreakdown, Vec<Vec<f64>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let run = |i: usize| {
        let ex = batch[i];
        sa_mmi_gradients(params, &ex.features, &ex.target, &ex.inventory, gamma, detach_profile)
            .map_err(|source| TrainError::Item { item: i, source })
    };
    let results: Vec<_> = if threads <= 1 || batch.len() == 1 {
        (0..batch.len()).map(run).collect()
    } else {
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..batch.len())
                .collect::<Vec<_>>()
                .chunks(chunk)
                .map(|ids| {
                    let ids = ids.to_vec();
                    let run = &run;
                    s.spawn(move || ids.into_iter().map(run).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let scale = 1.0 / batch.len() as f64;
    let mut sum: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let (mut tok, mut spk) = (0.0, 0.0);
    for (i, r) in results.into_iter().enumerate() {
        let (b, g) = r?;
        if !b.total.is_finite() || g.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { item: i });
        }
        tok += b.token_logprob;
        spk += b.speaker_logprob;
        for (acc, gi) in sum.iter_mut().zip(&g) {
            for (a, v) in acc.iter_mut().zip(gi) {
                *a += v * scale;
            }
        }
    }
    Ok((LossBreakdown::new(tok * scale, spk * scale, gamma), sum))
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// One optimizer step on `batch`.
pub fn train_step(
    batch: &[&Example],
    params: &mut ModelParams,
    adam: &mut Adam,
    cfg: &TrainConfig,
    step: u64,
    threads: usize,
) -> Result<StepReport, TrainError> {
    let (gamma, detach) = cfg.phase(step);
    let (breakdown, mut grads) = batch_gradients(params, batch, gamma, detach, threads)?;
    let grad_norm = global_norm(&grads);
    if let Some(c) = cfg.clip_norm {
        if grad_norm > c {
            let s = c / grad_norm;
            grads.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }
    adam.update(params, &grads, cfg.learning_rate_at(step))?;
    Ok(StepReport { step, breakdown, grad_norm })
}

/// Item indices of the batch used at `step`: a fresh permutation per epoch,
/// seeded by (seed, epoch), so any step's batch is reproducible on resume.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    assert!(n > 0, "empty training set");
    let perm = |epoch: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        p
    };
    let first = step as u128 * batch_size as u128;
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for j in 0..batch_size as u128 {
        let pos = first + j;
        let epoch = (pos / n as u128) as u64;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, perm(epoch)));
        }
        out.push(cached.as_ref().unwrap().1[(pos % n as u128) as usize]);
    }
    out
}

/// Mean (negated) objective over a held-out set at the configured γ.
pub fn evaluate_loss(params: &ModelParams, data: &[Example], gamma: f64) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, ex) in data.iter().enumerate() {
        let b = crate::loss::sa_mmi_loss(params, &ex.features, &ex.target, &ex.inventory, gamma)
            .map_err(|source| TrainError::Item { item: i, source })?;
        total += b.loss();
    }
    Ok(total / data.len() as f64)
}

/// Runs `cfg.steps - start` steps, invoking `on_step` after each one.
#[allow(clippy::too_many_arguments)]
pub fn train_loop<E: From<TrainError>>(
    params: &mut ModelParams,
    adam: &mut Adam,
    data: &[Example],
    cfg: &TrainConfig,
    seed: u64,
    start: u64,
    threads: usize,
    mut log: Option<&mut dyn Write>,
    mut on_step: impl FnMut(&StepReport, &ModelParams, &Adam) -> Result<(), E>,
) -> Result<(), E> {
    for step in start..cfg.steps {
        let idx = batch_indices(seed, step, cfg.batch_size, data.len());
        let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
        let report = train_step(&batch, params, adam, cfg, step, threads)?;
        if let Some(w) = log.as_deref_mut() {
            let _ = writeln!(w, "{}", report.log_line());
        }
        on_step(&report, params, adam)?;
    }
    Ok(())
}
