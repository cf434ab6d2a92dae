use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::{ModelConfig, ModelError};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BiLstmIds {
    pub fwd: LstmIds,
    pub bwd: LstmIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

/// Indices of every named parameter, derived from the config alone.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub asr: Vec<BiLstmIds>,
    pub asr_norm: Vec<NormIds>,
    pub spk: Vec<BiLstmIds>,
    pub spk_norm: Vec<NormIds>,
    pub spk_proj_w: usize,
    pub spk_proj_b: usize,
    pub embedding: usize,
    pub att_w_h: usize,
    pub att_b: usize,
    pub att_w_u: usize,
    pub att_w_f: usize,
    pub att_kernel: usize,
    pub att_v: usize,
    pub dec: Vec<LstmIds>,
    pub query: Option<LstmIds>,
    pub w_d: Option<usize>,
    pub out_lstm: LstmIds,
    pub w_out: usize,
    pub b_out: usize,
}

/// Coarse grouping of parameters by network block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    AsrEncoder,
    SpeakerEncoder,
    Embedding,
    Attention,
    DecoderRnn,
    SpeakerQueryRnn,
    DecoderOut,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::AsrEncoder,
        ParamGroup::SpeakerEncoder,
        ParamGroup::Embedding,
        ParamGroup::Attention,
        ParamGroup::DecoderRnn,
        ParamGroup::SpeakerQueryRnn,
        ParamGroup::DecoderOut,
    ];

    pub fn of(name: &str) -> ParamGroup {
        let prefix = name.split('.').next().unwrap_or("");
        match prefix {
            "asr_encoder" => ParamGroup::AsrEncoder,
            "speaker_encoder" => ParamGroup::SpeakerEncoder,
            "embedding" => ParamGroup::Embedding,
            "attention" => ParamGroup::Attention,
            "decoder_rnn" => ParamGroup::DecoderRnn,
            "speaker_query_rnn" => ParamGroup::SpeakerQueryRnn,
            _ => ParamGroup::DecoderOut,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Const(f64),
    /// LSTM bias: zero except the forget block, which starts at one.
    LstmBias(usize),
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(Spec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: String, out: usize, inp: usize) -> usize {
        self.add(name, vec![out, inp], Init::Uniform(1.0 / (inp as f64).sqrt()))
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> LstmIds {
        let w = self.add(
            format!("{prefix}.w"),
            vec![4 * hidden, input + hidden],
            Init::Uniform(1.0 / (hidden as f64).sqrt()),
        );
        let b = self.add(format!("{prefix}.b"), vec![4 * hidden], Init::LstmBias(hidden));
        LstmIds { w, b }
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> NormIds {
        let gain = self.add(format!("{prefix}.gain"), vec![dim], Init::Const(1.0));
        let bias = self.add(format!("{prefix}.bias"), vec![dim], Init::Const(0.0));
        NormIds { gain, bias }
    }

    fn bilstm_stack(
        &mut self,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> (Vec<BiLstmIds>, Vec<NormIds>) {
        let mut stack = Vec::with_capacity(layers);
        let mut norms = Vec::new();
        for l in 0..layers {
            let inp = if l == 0 { input } else { 2 * hidden };
            let fwd = self.lstm(&format!("{prefix}.{l}.fwd"), inp, hidden);
            let bwd = self.lstm(&format!("{prefix}.{l}.bwd"), inp, hidden);
            stack.push(BiLstmIds { fwd, bwd });
            if l + 1 < layers {
                norms.push(self.norm(&format!("{prefix}.{l}.norm"), 2 * hidden));
            }
        }
        (stack, norms)
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<Spec>) {
    let mut b = Builder::default();
    let stacked = cfg.stacked_dim();
    let (asr, asr_norm) = b.bilstm_stack("asr_encoder", stacked, cfg.encoder_hidden, cfg.encoder_layers);
    let (spk, spk_norm) =
        b.bilstm_stack("speaker_encoder", stacked, cfg.speaker_encoder_hidden, cfg.speaker_encoder_layers);
    let spk_proj_w = b.linear("speaker_encoder.proj.w".into(), cfg.speaker_embed_dim, 2 * cfg.speaker_encoder_hidden);
    let spk_proj_b = b.add("speaker_encoder.proj.b".into(), vec![cfg.speaker_embed_dim], Init::Const(0.0));
    let embedding = b.add("embedding".into(), vec![cfg.vocab_size + 1, cfg.embed_dim], Init::Uniform(0.5));
    let enc = cfg.encoder_dim();
    let att_w_h = b.linear("attention.w_h".into(), cfg.attention_dim, enc);
    let att_b = b.add("attention.b".into(), vec![cfg.attention_dim], Init::Const(0.0));
    let att_w_u = b.linear("attention.w_u".into(), cfg.attention_dim, cfg.decoder_hidden);
    let att_w_f = b.linear("attention.w_f".into(), cfg.attention_dim, cfg.attention_conv_channels);
    let att_kernel = b.add(
        "attention.kernel".into(),
        vec![cfg.attention_conv_channels, cfg.attention_conv_width],
        Init::Uniform(1.0 / (cfg.attention_conv_width as f64).sqrt()),
    );
    let att_v =
        b.add("attention.v".into(), vec![cfg.attention_dim], Init::Uniform(1.0 / (cfg.attention_dim as f64).sqrt()));
    let dec = (0..cfg.decoder_layers)
        .map(|l| {
            let inp = if l == 0 { cfg.embed_dim + enc } else { cfg.decoder_hidden };
            b.lstm(&format!("decoder_rnn.{l}"), inp, cfg.decoder_hidden)
        })
        .collect();
    let query = cfg
        .use_query_rnn
        .then(|| b.lstm("speaker_query_rnn", cfg.speaker_embed_dim + cfg.embed_dim, cfg.query_rnn_dim));
    let w_d =
        cfg.use_weighted_profile.then(|| b.linear("decoder_out.w_d".into(), cfg.decoder_hidden, cfg.speaker_embed_dim));
    let out_lstm = b.lstm("decoder_out.lstm", cfg.decoder_hidden, cfg.decoder_hidden);
    let w_out = b.linear("decoder_out.w_out".into(), cfg.vocab_size, cfg.decoder_hidden);
    let b_out = b.add("decoder_out.b_out".into(), vec![cfg.vocab_size], Init::Const(0.0));
    let layout = Layout {
        asr,
        asr_norm,
        spk,
        spk_norm,
        spk_proj_w,
        spk_proj_b,
        embedding,
        att_w_h,
        att_b,
        att_w_u,
        att_w_f,
        att_kernel,
        att_v,
        dec,
        query,
        w_d,
        out_lstm,
        w_out,
        b_out,
    };
    (layout, b.specs)
}

/// All named parameter tensors of the network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    pub(crate) layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl ModelParams {
    /// Randomly initialized parameters.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |spec| match spec.init {
            Init::Uniform(s) => (0..spec.shape.iter().product::<usize>()).map(|_| rng.random_range(-s..s)).collect(),
            Init::Const(v) => vec![v; spec.shape.iter().product()],
            Init::LstmBias(h) => (0..4 * h).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect(),
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, |spec| vec![0.0; spec.shape.iter().product()])
    }

    fn build(config: &ModelConfig, mut fill: impl FnMut(&Spec) -> Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let data = fill(spec);
            tensors.push(Tensor::new(spec.shape.clone(), data)?.with_grad());
            names.push(spec.name.clone());
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { config: config.clone(), names, tensors, index, layout })
    }

    /// Expected `(name, shape)` pairs for a config, in storage order.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
        config.validate()?;
        Ok(build_layout(config).1.into_iter().map(|s| (s.name, s.shape)).collect())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    /// Replaces one parameter's values; the shape must match.
    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<(), ModelError> {
        let i = self.index_of(name).ok_or_else(|| ModelError::UnknownParam(name.to_owned()))?;
        let t = &mut self.tensors[i];
        if t.len() != data.len() {
            return Err(ModelError::Config(format!("{name}: expected {} values, got {}", t.len(), data.len())));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Copies every identically-named, identically-shaped tensor from `other`.
    pub fn copy_shared_from(&mut self, other: &ModelParams) -> usize {
        let mut copied = 0;
        for (name, t) in other.names.iter().zip(&other.tensors) {
            if let Some(i) = self.index_of(name) {
                if self.tensors[i].shape() == t.shape() {
                    self.tensors[i].data_mut().copy_from_slice(t.data());
                    copied += 1;
                }
            }
        }
        copied
    }

    /// All values concatenated in storage order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.num_scalars() {
            return Err(ModelError::Config(format!("expected {} values, got {}", self.num_scalars(), flat.len())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Registers every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf_as(t, trainable)).collect()
    }

    pub(crate) fn from_parts(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let expected = Self::expected_shapes(&config)?;
        if expected.len() != named.len() {
            return Err(ModelError::Config(format!("expected {} parameters, found {}", expected.len(), named.len())));
        }
        let mut params = Self::zeros(&config)?;
        for ((want_name, want_shape), (name, t)) in expected.iter().zip(named) {
            if *want_name != name {
                return Err(ModelError::UnknownParam(name));
            }
            if want_shape.as_slice() != t.shape() {
                return Err(ModelError::Config(format!(
                    "{name}: expected shape {want_shape:?}, found {:?}",
                    t.shape()
                )));
            }
            let i = params.index_of(&name).expect("name from layout");
            params.tensors[i].data_mut().copy_from_slice(t.data());
        }
        Ok(params)
    }
}
