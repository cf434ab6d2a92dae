use serde::{Deserialize, Serialize};

use super::ModelError;

/// Network dimensions and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of one raw input frame, before stacking.
    pub feature_dim: usize,
    /// Consecutive frames concatenated into one encoder step.
    pub frame_stack: usize,
    pub encoder_layers: usize,
    /// Per-direction hidden width of the bidirectional ASR encoder.
    pub encoder_hidden: usize,
    pub speaker_encoder_layers: usize,
    pub speaker_encoder_hidden: usize,
    /// Width of speaker embeddings and inventory profiles.
    pub speaker_embed_dim: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub attention_conv_channels: usize,
    pub attention_conv_width: usize,
    pub query_rnn_dim: usize,
    /// Output vocabulary, including `<eos>` and `<sc>`.
    pub vocab_size: usize,
    /// When false the pooled speaker embedding queries the inventory directly.
    pub use_query_rnn: bool,
    /// When false the weighted profile is not fed to the output layer.
    pub use_weighted_profile: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            frame_stack: 3,
            encoder_layers: 2,
            encoder_hidden: 32,
            speaker_encoder_layers: 1,
            speaker_encoder_hidden: 16,
            speaker_embed_dim: 16,
            decoder_layers: 1,
            decoder_hidden: 64,
            embed_dim: 16,
            attention_dim: 32,
            attention_conv_channels: 8,
            attention_conv_width: 11,
            query_rnn_dim: 16,
            vocab_size: 14,
            use_query_rnn: true,
            use_weighted_profile: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("frame_stack", self.frame_stack),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
            ("speaker_encoder_layers", self.speaker_encoder_layers),
            ("speaker_encoder_hidden", self.speaker_encoder_hidden),
            ("speaker_embed_dim", self.speaker_embed_dim),
            ("decoder_layers", self.decoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("embed_dim", self.embed_dim),
            ("attention_dim", self.attention_dim),
            ("attention_conv_channels", self.attention_conv_channels),
            ("attention_conv_width", self.attention_conv_width),
            ("query_rnn_dim", self.query_rnn_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.vocab_size < 3 {
            return Err(ModelError::Config("vocab_size must be at least 3".into()));
        }
        // context and decoder state are summed before the output LSTM
        if 2 * self.encoder_hidden != self.decoder_hidden {
            return Err(ModelError::Config(format!(
                "decoder_hidden ({}) must equal 2 * encoder_hidden ({})",
                self.decoder_hidden,
                2 * self.encoder_hidden
            )));
        }
        // the query is compared with profiles by cosine similarity
        if self.use_query_rnn && self.query_rnn_dim != self.speaker_embed_dim {
            return Err(ModelError::Config(format!(
                "query_rnn_dim ({}) must equal speaker_embed_dim ({})",
                self.query_rnn_dim, self.speaker_embed_dim
            )));
        }
        Ok(())
    }

    /// Width of one encoder step after frame stacking.
    pub fn stacked_dim(&self) -> usize {
        self.feature_dim * self.frame_stack
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Row of the embedding table used as the start-of-sequence input.
    pub fn sos_row(&self) -> usize {
        self.vocab_size
    }
}
