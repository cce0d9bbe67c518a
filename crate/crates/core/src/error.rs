use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("audio too short: {samples} samples, need at least {min}")]
    AudioTooShort { samples: usize, min: usize },

    #[error("empty after trim")]
    EmptyAfterTrim,

    #[error("utterance too short: {frames} frames, minimum is {min}")]
    UtteranceTooShort { frames: usize, min: usize },

    #[error("empty expansion: every duration is zero")]
    EmptyExpansion,

    #[error("phoneme id {id} is outside the vocabulary of size {vocab}")]
    PhonemeOutOfVocab { id: u32, vocab: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no records")]
    NoRecords,

    #[error("tool not found: {0}")]
    ToolNotFound(String),

    #[error("external tool `{tool}` failed ({status}): {stderr}")]
    ToolFailed {
        tool: String,
        status: String,
        stderr: String,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },

    #[error("non-finite loss at iteration {iteration}; offending batch ids: {batch_ids:?}")]
    NonFiniteLoss {
        iteration: usize,
        batch_ids: Vec<String>,
    },

    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("pipeline aborted in stage {stage} (last good checkpoint: {}): {source}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    PipelineAborted {
        stage: String,
        last_good: Option<PathBuf>,
        source: Box<Error>,
    },

    #[error("vocoder backend `{0}` is not available")]
    VocoderMissing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(context: impl Into<String>, reason: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn checkpoint(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Checkpoint {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
