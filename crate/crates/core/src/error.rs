use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav header: {0}")]
    MalformedWav(String),

    #[error("unsupported encoding: format tag {0} (only PCM is supported)")]
    UnsupportedEncoding(u16),

    #[error("unsupported channel count: {0} (only mono is supported)")]
    UnsupportedChannels(u16),

    #[error("unsupported bit depth: {0} (only 16-bit is supported)")]
    UnsupportedBitDepth(u16),

    #[error("unsupported sample rate: {found} Hz (expected {expected} Hz)")]
    UnsupportedSampleRate { expected: u32, found: u32 },

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("unknown noise kind: {0}")]
    UnknownNoiseKind(String),

    #[error("zero signal power in {0}")]
    ZeroPower(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("invalid stft config: {0}")]
    InvalidStft(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid label: q_hat {q_hat} exceeds q_max {q_max}")]
    LabelAboveMax { q_hat: f64, q_max: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid epsilon: {0}")]
    InvalidEpsilon(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint dims mismatch: expected F={exp_f} H={exp_h}, found F={found_f} H={found_h}")]
    CheckpointDims {
        exp_f: usize,
        exp_h: usize,
        found_f: usize,
        found_h: usize,
    },

    #[error("corrupt feature file: {0}")]
    CorruptFeatures(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
