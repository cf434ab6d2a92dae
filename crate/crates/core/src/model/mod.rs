//! The joint recognizer: ASR encoder, speaker encoder, shared attention,
//! speaker query RNN, inventory attention and the profile-conditioned output.

mod checkpoint;
mod config;
mod inventory;
mod network;
mod params;


pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use inventory::SpeakerInventory;
pub use network::{AttentionOutput, DecoderState, EncoderOutput, Graph, InventoryAttention, InventoryVars, StepOutput};
pub use params::{ModelParams, ParamGroup};

use crate::numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid token id {0}")]
    InvalidToken(usize),
    #[error("input has no frames")]
    EmptyInput,
    #[error("speaker query has zero norm")]
    DegenerateQuery,
    #[error("invalid inventory: {0}")]
    Inventory(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
