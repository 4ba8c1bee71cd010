use std::fmt;

use crate::memsim::RegionKind;

/// Role a buffer plays in a deployed network; drives where the allocator places it.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weights,
    Thresholds,
    InputFeatures,
    OutputFeatures,
    /// Classifier scores read back by the core after the last layer.
    Results,
    Instructions,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Weights => "weights",
            Role::Thresholds => "thresholds",
            Role::InputFeatures => "input_features",
            Role::OutputFeatures => "output_features",
            Role::Results => "results",
            Role::Instructions => "instructions",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("threshold overflow: {threshold} << {shift} does not fit the 16-bit accumulator")]
    ThresholdOverflow { threshold: u8, shift: u8 },

    #[error("accumulator overflow risk: up to {max_accumulation} does not fit 16 bits")]
    AccumulatorOverflow { max_accumulation: u64 },

    #[error("bus error: access of {len} bytes at {addr:#010x} is not fully mapped")]
    Bus { addr: u32, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("allocation error: no {kind} space for {size} bytes of {role}")]
    Allocation {
        role: Role,
        kind: RegionKind,
        size: usize,
    },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
