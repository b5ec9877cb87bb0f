//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped by the
//! subsystem that raises them; `exit_code` maps them onto the CLI contract
//! (1 = validation error, 2 = runtime failure).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- text frontend ----
    #[error("empty text")]
    EmptyText,
    #[error("unpronounceable word: {0:?}")]
    UnpronounceableWord(String),

    // ---- audio features ----
    #[error("waveform too short: {len} samples, frame size {frame}")]
    WaveformTooShort { len: usize, frame: usize },
    #[error("sample rate mismatch: waveform {got} Hz, config {want} Hz")]
    SampleRateMismatch { got: f32, want: f32 },
    #[error("invalid token boundary [{start}, {end}) against {frames} frames")]
    InvalidBoundary {
        start: usize,
        end: usize,
        frames: usize,
    },

    // ---- corpus ----
    #[error("manifest unreadable: {0}")]
    ManifestUnreadable(String),
    #[error("all {0} manifest rows invalid")]
    AllRowsInvalid(usize),
    #[error("no token reaches {min_occurrences} occurrences at the requested scale")]
    NoEligibleTokens { min_occurrences: usize },
    #[error("token {0:?} is not in the index")]
    TokenNotIndexed(String),
    #[error("token {0:?} has fewer than 2 distinct occurrences")]
    TokenDegenerate(String),

    // ---- encoders / numerics ----
    #[error("empty sequence")]
    EmptySequence,
    #[error("alignment gap: word {0} owns zero units")]
    AlignmentGap(usize),
    #[error("index out of range: {index} against length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("token position {position} out of range at {scale} scale (length {len})")]
    PositionOutOfRange {
        position: usize,
        scale: String,
        len: usize,
    },
    #[error("shape mismatch: got {got:?}, want {want:?}")]
    ShapeMismatch { got: (usize, usize), want: (usize, usize) },

    // ---- pretraining ----
    #[error("embedding count mismatch: {text} text vs {speech} speech")]
    CountMismatch { text: usize, speech: usize },
    #[error("similarity matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("non-finite loss at step {step} (batch token {token:?})")]
    NonFiniteLoss { step: u64, token: String },
    #[error("checkpoint malformed: {0}")]
    CheckpointMalformed(String),

    // ---- analysis / probe ----
    #[error("need at least 2 contexts, got {0}")]
    TooFewContexts(usize),
    #[error("zero vector has no cosine direction")]
    ZeroVector,
    #[error("token {token:?} absent in sentence {sentence:?}")]
    TokenAbsentInSentence { token: String, sentence: String },
    #[error("token {0:?} absent at the analysis scale")]
    TokenAbsent(String),
    #[error("manifest rows carry no pitch/duration targets")]
    MissingTargets,

    // ---- generator / config / CLI ----
    #[error("synthetic corpus spec invalid: {0}")]
    SpecInvalid(String),
    #[error("config invalid: {0}")]
    ConfigInvalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyText
            | Error::UnpronounceableWord(_)
            | Error::SampleRateMismatch { .. }
            | Error::InvalidBoundary { .. }
            | Error::TokenNotIndexed(_)
            | Error::TokenDegenerate(_)
            | Error::TooFewContexts(_)
            | Error::TokenAbsentInSentence { .. }
            | Error::TokenAbsent(_)
            | Error::MissingTargets
            | Error::SpecInvalid(_)
            | Error::ConfigInvalid(_) => 1,
            _ => 2,
        }
    }
}
