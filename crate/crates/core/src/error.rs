use alloc::string::String;
use core::fmt;

/// Errors raised by the core contracts.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The architecture description violates one or more rules.
    InvalidSpec(String),
    /// Tensor or layer shapes are incompatible.
    Shape(String),
    /// Input spatial extent is too small for the backbone's five reductions.
    SpatialTooSmall { height: usize, width: usize, min: usize },
    /// Clip layout does not match what the model family consumes.
    LayoutMismatch { expected: &'static str, found: &'static str },
    /// Clip frame count does not match the model's configured frames.
    FrameMismatch { expected: usize, found: usize },
    /// A named weight is absent from a weight source.
    MissingWeight(String),
    /// A named weight is present but has the wrong shape.
    WeightShape { name: String, expected: alloc::vec::Vec<usize>, found: alloc::vec::Vec<usize> },
    /// A weight source carries entries the model does not have.
    UnexpectedWeight(String),
    /// Factorization was requested for the network's first convolution.
    FirstConvFactorization,
    /// Non-local blocks need a ResNet backbone.
    NonResNetBackbone(String),
    /// A disentanglement record has no TSN baseline.
    MissingBaseline(String),
    /// Baseline accuracy of 100 makes the temporal improvement undefined.
    SaturatedBaseline(String),
    /// A grid cell needed for an architecture average is absent.
    MissingCell(String),
    /// Accuracy outside [0, 100].
    AccuracyRange(f64),
    /// Duplicate unique key among run records.
    DuplicateRecord(String),
    /// Progressive chain is not strictly increasing.
    BrokenChain(String),
    /// Generic contract violation.
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSpec(msg) => write!(f, "invalid architecture spec: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::SpatialTooSmall { height, width, min } => write!(
                f,
                "spatial dims {height}x{width} too small: both must be at least {min}"
            ),
            Error::LayoutMismatch { expected, found } => {
                write!(f, "clip layout mismatch: model expects {expected}, got {found}")
            }
            Error::FrameMismatch { expected, found } => {
                write!(f, "frame count mismatch: model expects {expected}, got {found}")
            }
            Error::MissingWeight(name) => write!(f, "missing weight `{name}`"),
            Error::WeightShape { name, expected, found } => write!(
                f,
                "weight `{name}` has shape {found:?}, expected {expected:?}"
            ),
            Error::UnexpectedWeight(name) => write!(f, "unexpected weight `{name}`"),
            Error::FirstConvFactorization => {
                f.write_str("the first convolution of the network is never factorized")
            }
            Error::NonResNetBackbone(b) => {
                write!(f, "non-local blocks require a ResNet backbone, got {b}")
            }
            Error::MissingBaseline(key) => write!(f, "missing TSN baseline for {key}"),
            Error::SaturatedBaseline(key) => {
                write!(f, "TSN baseline accuracy is 100 for {key}; temporal improvement undefined")
            }
            Error::MissingCell(key) => write!(f, "missing grid cell {key}"),
            Error::AccuracyRange(v) => write!(f, "accuracy {v} outside [0, 100]"),
            Error::DuplicateRecord(key) => write!(f, "duplicate run record {key}"),
            Error::BrokenChain(msg) => write!(f, "broken progressive chain: {msg}"),
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
