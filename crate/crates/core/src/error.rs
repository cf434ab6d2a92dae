use thiserror::Error;

use crate::decode::DecodeError;
use crate::loss::LossError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::simkit::SimError;
use crate::sot::SotError;
use crate::train::TrainError;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sot(#[from] SotError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Numerics(NumericsError::NonFinite { .. } | NumericsError::ZeroNorm)
        | ModelError::DegenerateQuery => exit::NUMERIC,
        ModelError::Config(_) => exit::USAGE,
        _ => exit::DATA,
    }
}

fn loss_code(e: &LossError) -> i32 {
    match e {
        LossError::Model(m) => model_code(m),
        LossError::BadGamma(_) => exit::USAGE,
        _ => exit::DATA,
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => exit::USAGE,
            Error::Model(m) => model_code(m),
            Error::Decode(DecodeError::Model(m)) => model_code(m),
            Error::Loss(l) => loss_code(l),
            Error::Train(TrainError::NonFinite { .. }) => exit::NUMERIC,
            Error::Train(TrainError::Item { source, .. }) => loss_code(source),
            Error::Sim(SimError::Config(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
