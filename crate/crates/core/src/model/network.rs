//! Forward pass of the joint recognizer, recorded on a tape.
//!
//! Per decoder step the order is: decoder RNN state from the previous token
//! and context, location-aware attention over the ASR embeddings, the same
//! attention weights pooled over speaker embeddings, the speaker query RNN,
//! cosine attention over the inventory, and the output LSTM fed with
//! `context + state + W_d · weighted_profile`.

use super::params::{BiLstmIds, LstmIds, NormIds};
use super::{ModelError, ModelParams, SpeakerInventory};
use crate::features::{FeatureSequence, TokenId};
use crate::numerics::{lstm_step, LstmVars, NumericsError, Tape, Var};

/// Embeddings of one input; both sequences have the same length.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[frames, 2 * encoder_hidden]`
    pub asr: Var,
    /// `[frames, speaker_embed_dim]`
    pub speaker: Var,
    /// Attention projection of `asr`, computed once per input.
    asr_proj: Var,
    pub frames: usize,
}

/// Recurrent state carried between decoder steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    dec: Vec<(Var, Var)>,
    /// Attention weights of the previous step.
    pub alpha: Var,
    /// Context vector of the previous step.
    pub context: Var,
    query: Option<(Var, Var)>,
    out: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub alpha: Var,
    pub context: Var,
    /// Attention-pooled speaker embedding.
    pub pooled: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct InventoryAttention {
    /// Cosine similarities, one per profile.
    pub logits: Var,
    pub beta: Var,
    pub log_beta: Var,
    pub weighted_profile: Var,
}

/// Tape handles for one inventory.
#[derive(Debug, Clone)]
pub struct InventoryVars {
    matrix: Var,
    rows: Vec<Var>,
}

impl InventoryVars {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Log-probabilities over the full vocabulary.
    pub log_probs: Var,
    pub speaker: InventoryAttention,
    pub attention: AttentionOutput,
    /// Decoder RNN output of this step.
    pub decoder_out: Var,
    pub query: Var,
    pub state: DecoderState,
}

/// A tape plus the parameter leaves of one model.
pub struct Graph<'m> {
    tape: Tape,
    params: &'m ModelParams,
    vars: Vec<Var>,
    detach_profile: bool,
}

impl<'m> Graph<'m> {
    pub fn new(params: &'m ModelParams, trainable: bool) -> Self {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, trainable);
        Self { tape, params, vars, detach_profile: false }
    }

    /// Stops gradients flowing into the speaker path through the weighted profile.
    pub fn with_detached_profile(mut self, detach: bool) -> Self {
        self.detach_profile = detach;
        self
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Tape leaf of the parameter at storage index `i`.
    pub fn param_var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.tape.value(v)
    }

    fn lstm_vars(&self, ids: LstmIds) -> LstmVars {
        LstmVars { w: self.vars[ids.w], b: self.vars[ids.b] }
    }

    fn hidden_of(&self, ids: LstmIds) -> usize {
        self.params.tensors()[ids.b].len() / 4
    }

    fn zeros(&mut self, n: usize) -> Result<Var, NumericsError> {
        self.tape.constant_vec(vec![0.0; n])
    }

    fn check_input(&self, x: &FeatureSequence) -> Result<(), ModelError> {
        let cfg = self.params.config();
        if x.frames() == 0 {
            return Err(ModelError::EmptyInput);
        }
        if x.dim() != cfg.feature_dim {
            return Err(ModelError::Numerics(NumericsError::ShapeMismatch {
                op: "encode",
                expected: vec![cfg.feature_dim],
                got: vec![x.dim()],
            }));
        }
        Ok(())
    }

    fn input_rows(&mut self, x: &FeatureSequence) -> Result<Vec<Var>, ModelError> {
        self.check_input(x)?;
        let stacked = x.stack(self.params.config().frame_stack);
        let rows = stacked.dims2().map(|d| d.0).unwrap_or(0);
        (0..rows).map(|r| self.tape.constant_vec(stacked.row(r).to_vec()).map_err(ModelError::from)).collect()
    }

    fn bilstm(&mut self, inputs: &[Var], ids: BiLstmIds) -> Result<Vec<Var>, NumericsError> {
        let hidden = self.hidden_of(ids.fwd);
        let (fwd, bwd) = (self.lstm_vars(ids.fwd), self.lstm_vars(ids.bwd));
        let zero = self.zeros(hidden)?;
        let mut fwd_out = Vec::with_capacity(inputs.len());
        let (mut h, mut c) = (zero, zero);
        for &x in inputs {
            (h, c) = lstm_step(&mut self.tape, x, h, c, fwd)?;
            fwd_out.push(h);
        }
        let mut bwd_out = vec![zero; inputs.len()];
        let (mut h, mut c) = (zero, zero);
        for (t, &x) in inputs.iter().enumerate().rev() {
            (h, c) = lstm_step(&mut self.tape, x, h, c, bwd)?;
            bwd_out[t] = h;
        }
        fwd_out.iter().zip(&bwd_out).map(|(&f, &b)| self.tape.concat(&[f, b])).collect()
    }

    fn bilstm_stack(
        &mut self,
        mut rows: Vec<Var>,
        layers: &[BiLstmIds],
        norms: &[NormIds],
    ) -> Result<Vec<Var>, NumericsError> {
        for (l, ids) in layers.iter().enumerate() {
            rows = self.bilstm(&rows, *ids)?;
            if let Some(n) = norms.get(l) {
                let (g, b) = (self.vars[n.gain], self.vars[n.bias]);
                rows = rows.iter().map(|&r| self.tape.layer_norm(r, g, b)).collect::<Result<_, _>>()?;
            }
        }
        Ok(rows)
    }

    /// ASR embedding sequence, `[ceil(T / stack), 2 * encoder_hidden]`.
    pub fn asr_encode(&mut self, x: &FeatureSequence) -> Result<Var, ModelError> {
        let rows = self.input_rows(x)?;
        let layout = self.params.layout.clone();
        let out = self.bilstm_stack(rows, &layout.asr, &layout.asr_norm)?;
        Ok(self.tape.stack_rows(&out)?)
    }

    /// Frame-synchronous speaker embeddings, `[ceil(T / stack), speaker_embed_dim]`.
    pub fn speaker_encode(&mut self, x: &FeatureSequence) -> Result<Var, ModelError> {
        let rows = self.input_rows(x)?;
        let layout = self.params.layout.clone();
        let out = self.bilstm_stack(rows, &layout.spk, &layout.spk_norm)?;
        let h = self.tape.stack_rows(&out)?;
        let proj = self.tape.matmul_t(h, self.vars[layout.spk_proj_w])?;
        Ok(self.tape.add_rows(proj, self.vars[layout.spk_proj_b])?)
    }

    pub fn encode(&mut self, x: &FeatureSequence) -> Result<EncoderOutput, ModelError> {
        let asr = self.asr_encode(x)?;
        let speaker = self.speaker_encode(x)?;
        let l = &self.params.layout;
        let (w_h, b) = (self.vars[l.att_w_h], self.vars[l.att_b]);
        let proj = self.tape.matmul_t(asr, w_h)?;
        let asr_proj = self.tape.add_rows(proj, b)?;
        let frames = self.tape.shape(asr)[0];
        Ok(EncoderOutput { asr, speaker, asr_proj, frames })
    }

    pub fn inventory(&mut self, inv: &SpeakerInventory) -> Result<InventoryVars, ModelError> {
        let dim = self.params.config().speaker_embed_dim;
        if inv.dim() != dim {
            return Err(ModelError::Inventory(format!(
                "profile dimension {} does not match speaker_embed_dim {dim}",
                inv.dim()
            )));
        }
        let matrix = self.tape.constant(vec![inv.len(), dim], inv.matrix_data())?;
        let rows = (0..inv.len()).map(|k| self.tape.row(matrix, k)).collect::<Result<_, _>>()?;
        Ok(InventoryVars { matrix, rows })
    }

    /// Zero recurrent states, uniform attention and a zero context.
    pub fn initial_state(&mut self, enc: &EncoderOutput) -> Result<DecoderState, ModelError> {
        let cfg = self.params.config().clone();
        let dec_zero = self.zeros(cfg.decoder_hidden)?;
        let dec = vec![(dec_zero, dec_zero); cfg.decoder_layers];
        let alpha = self.tape.constant_vec(vec![1.0 / enc.frames as f64; enc.frames])?;
        let context = self.zeros(cfg.encoder_dim())?;
        let query = if cfg.use_query_rnn {
            let q = self.zeros(cfg.query_rnn_dim)?;
            Some((q, q))
        } else {
            None
        };
        Ok(DecoderState { dec, alpha, context, query, out: (dec_zero, dec_zero) })
    }

    fn check_token(&self, y: TokenId) -> Result<(), ModelError> {
        let cfg = self.params.config();
        if y > cfg.sos_row() {
            return Err(ModelError::InvalidToken(y));
        }
        Ok(())
    }

    /// Embedding row; `vocab_size` selects the start-of-sequence row.
    pub fn embed(&mut self, y: TokenId) -> Result<Var, ModelError> {
        self.check_token(y)?;
        Ok(self.tape.row(self.vars[self.params.layout.embedding], y)?)
    }

    /// Location-aware content attention; the weights also pool the speaker embeddings.
    pub fn attend(&mut self, u: Var, alpha_prev: Var, enc: &EncoderOutput) -> Result<AttentionOutput, ModelError> {
        if enc.frames == 0 {
            return Err(ModelError::EmptyInput);
        }
        let l = &self.params.layout;
        let (w_u, w_f, kernel, v) =
            (self.vars[l.att_w_u], self.vars[l.att_w_f], self.vars[l.att_kernel], self.vars[l.att_v]);
        let t = &mut self.tape;
        let loc = t.conv1d(alpha_prev, kernel)?;
        let loc = t.matmul_t(loc, w_f)?;
        let up = t.matvec(w_u, u)?;
        let s = t.add(enc.asr_proj, loc)?;
        let s = t.add_rows(s, up)?;
        let s = t.tanh(s)?;
        let scores = t.matvec(s, v)?;
        let alpha = t.softmax(scores)?;
        let context = t.weighted_row_sum(alpha, enc.asr)?;
        let pooled = t.weighted_row_sum(alpha, enc.speaker)?;
        Ok(AttentionOutput { alpha, context, pooled })
    }

    /// Speaker query update from the pooled embedding and the previous token.
    pub fn speaker_query_step(
        &mut self,
        pooled: Var,
        y_prev: TokenId,
        q_prev: (Var, Var),
    ) -> Result<(Var, Var), ModelError> {
        let ids = self.params.layout.query.ok_or_else(|| ModelError::Config("speaker query RNN disabled".into()))?;
        let emb = self.embed(y_prev)?;
        self.query_from_embedding(pooled, emb, q_prev, ids)
    }

    fn query_from_embedding(
        &mut self,
        pooled: Var,
        emb: Var,
        q_prev: (Var, Var),
        ids: LstmIds,
    ) -> Result<(Var, Var), ModelError> {
        let p = self.lstm_vars(ids);
        let x = self.tape.concat(&[pooled, emb])?;
        Ok(lstm_step(&mut self.tape, x, q_prev.0, q_prev.1, p)?)
    }

    /// Softmax over cosine similarities between the query and every profile,
    /// and the resulting weighted profile.
    pub fn inventory_attend(&mut self, q: Var, inv: &InventoryVars) -> Result<InventoryAttention, ModelError> {
        if self.tape.value(q).iter().all(|v| *v == 0.0) {
            return Err(ModelError::DegenerateQuery);
        }
        let sims = inv.rows.iter().map(|&d| self.tape.cosine(q, d)).collect::<Result<Vec<_>, _>>()?;
        let logits = self.tape.concat(&sims)?;
        let beta = self.tape.softmax(logits)?;
        let log_beta = self.tape.log_softmax(logits)?;
        let weighted_profile = self.tape.weighted_row_sum(beta, inv.matrix)?;
        Ok(InventoryAttention { logits, beta, log_beta, weighted_profile })
    }

    /// One full decoder step given the previous token.
    pub fn decoder_step(
        &mut self,
        y_prev: TokenId,
        state: &DecoderState,
        enc: &EncoderOutput,
        inv: &InventoryVars,
    ) -> Result<StepOutput, ModelError> {
        let layout = self.params.layout.clone();
        let emb = self.embed(y_prev)?;

        let mut input = self.tape.concat(&[emb, state.context])?;
        let mut dec = Vec::with_capacity(state.dec.len());
        for (ids, &(h, c)) in layout.dec.iter().zip(&state.dec) {
            let p = self.lstm_vars(*ids);
            let (h, c) = lstm_step(&mut self.tape, input, h, c, p)?;
            dec.push((h, c));
            input = h;
        }
        let u = input;

        let attention = self.attend(u, state.alpha, enc)?;

        let (query, query_state) = match (layout.query, state.query) {
            (Some(ids), Some(q_prev)) => {
                let q = self.query_from_embedding(attention.pooled, emb, q_prev, ids)?;
                (q.0, Some(q))
            }
            _ => (attention.pooled, None),
        };
        let speaker = self.inventory_attend(query, inv)?;

        let mut z = self.tape.add(attention.context, u)?;
        if let Some(w_d) = layout.w_d {
            let profile = if self.detach_profile {
                let v = self.tape.value(speaker.weighted_profile).to_vec();
                self.tape.constant_vec(v)?
            } else {
                speaker.weighted_profile
            };
            let proj = self.tape.matvec(self.vars[w_d], profile)?;
            z = self.tape.add(z, proj)?;
        }
        let out_vars = self.lstm_vars(layout.out_lstm);
        let out = lstm_step(&mut self.tape, z, state.out.0, state.out.1, out_vars)?;
        let logits = self.tape.matvec(self.vars[layout.w_out], out.0)?;
        let logits = self.tape.add(logits, self.vars[layout.b_out])?;
        let log_probs = self.tape.log_softmax(logits)?;

        let state = DecoderState { dec, alpha: attention.alpha, context: attention.context, query: query_state, out };
        Ok(StepOutput { log_probs, speaker, attention, decoder_out: u, query, state })
    }

    /// Backward pass; gradients aligned with the parameter storage order.
    pub fn param_gradients(&self, loss: Var) -> Result<Vec<Vec<f64>>, ModelError> {
        let grads = self.tape.backward(loss)?;
        Ok(self.vars.iter().zip(self.params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t.len())).collect())
    }
}
