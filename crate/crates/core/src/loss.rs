//! The speaker-attributed MMI objective: token log-likelihood plus a
//! γ-scaled speaker log-likelihood, both teacher forced.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSequence, SpeakerId};
use crate::model::{Graph, ModelError, ModelParams, SpeakerInventory};
use crate::numerics::Var;
use crate::sot::{SerializedTarget, SotError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("target speaker {0} is not in the inventory")]
    UnknownSpeaker(SpeakerId),
    #[error("gamma must be finite and non-negative, got {0}")]
    BadGamma(f64),
    #[error(transparent)]
    Target(#[from] SotError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Sum of token log-probabilities.
    pub token_logprob: f64,
    /// Sum of log inventory-attention weights on the labelled speakers.
    pub speaker_logprob: f64,
    pub gamma: f64,
    /// `token_logprob + gamma * speaker_logprob`; the loss is its negation.
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(token_logprob: f64, speaker_logprob: f64, gamma: f64) -> Self {
        Self { token_logprob, speaker_logprob, gamma, total: token_logprob + gamma * speaker_logprob }
    }

    pub fn loss(&self) -> f64 {
        -self.total
    }
}

/// Tape nodes of a teacher-forced forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub token: Var,
    pub speaker: Var,
    /// Scalar to minimize: `-(token + gamma * speaker)`.
    pub loss: Var,
}

/// Builds the objective on `graph` and returns its tape nodes.
pub fn sa_mmi_forward(
    graph: &mut Graph,
    x: &FeatureSequence,
    target: &SerializedTarget,
    inventory: &SpeakerInventory,
    gamma: f64,
) -> Result<(LossBreakdown, LossVars), LossError> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(LossError::BadGamma(gamma));
    }
    target.validate()?;
    let labels = target
        .speakers
        .iter()
        .map(|s| inventory.index_of(s).ok_or_else(|| LossError::UnknownSpeaker(s.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let enc = graph.encode(x)?;
    let inv = graph.inventory(inventory)?;
    let mut state = graph.initial_state(&enc)?;
    let mut prev = graph.params().config().sos_row();
    let mut token_terms = Vec::with_capacity(target.len());
    let mut speaker_terms = Vec::with_capacity(target.len());
    for (&y, &k) in target.tokens.iter().zip(&labels) {
        let out = graph.decoder_step(prev, &state, &enc, &inv)?;
        let t = graph.tape_mut();
        token_terms.push(t.pick(out.log_probs, y).map_err(ModelError::from)?);
        speaker_terms.push(t.pick(out.speaker.log_beta, k).map_err(ModelError::from)?);
        state = out.state;
        prev = y;
    }
    let t = graph.tape_mut();
    let token = t.concat(&token_terms).and_then(|v| t.sum(v)).map_err(ModelError::from)?;
    let speaker = t.concat(&speaker_terms).and_then(|v| t.sum(v)).map_err(ModelError::from)?;
    let scaled = t.scale(speaker, gamma).map_err(ModelError::from)?;
    let total = t.add(token, scaled).map_err(ModelError::from)?;
    let loss = t.scale(total, -1.0).map_err(ModelError::from)?;
    let breakdown = LossBreakdown::new(t.scalar(token), t.scalar(speaker), gamma);
    Ok((breakdown, LossVars { token, speaker, loss }))
}

/// Objective value only.
pub fn sa_mmi_loss(
    params: &ModelParams,
    x: &FeatureSequence,
    target: &SerializedTarget,
    inventory: &SpeakerInventory,
    gamma: f64,
) -> Result<LossBreakdown, LossError> {
    let mut g = Graph::new(params, false);
    Ok(sa_mmi_forward(&mut g, x, target, inventory, gamma)?.0)
}

/// Objective value and loss gradients in parameter storage order.
pub fn sa_mmi_gradients(
    params: &ModelParams,
    x: &FeatureSequence,
    target: &SerializedTarget,
    inventory: &SpeakerInventory,
    gamma: f64,
    detach_profile: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>), LossError> {
    let mut g = Graph::new(params, true).with_detached_profile(detach_profile);
    let (b, vars) = sa_mmi_forward(&mut g, x, target, inventory, gamma)?;
    let grads = g.param_gradients(vars.loss)?;
    Ok((b, grads))
}
