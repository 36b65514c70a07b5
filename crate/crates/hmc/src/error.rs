use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmcError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid sampler configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered during leapfrog integration")]
    Divergence,

    #[error("sampler failed to adapt: every warmup transition diverged (chain {chain})")]
    AdaptationFailed { chain: usize },

    #[error("no finite initial log density after {attempts} attempts (chain {chain})")]
    Initialization { chain: usize, attempts: usize },

    #[error(
        "need at least 4 split-chain segments of length >= 2, got {segments} of length {length}"
    )]
    TooFewSegments { segments: usize, length: usize },

    #[error("draws have zero variance; R-hat and ESS are undefined")]
    DegenerateVariance,

    #[error("non-finite draw value")]
    NonFiniteDraw,
}
