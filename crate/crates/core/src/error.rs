use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimensions disagree with what an operation requires.
    Shape(String),
    /// A NaN (or other unusable value) reached mask construction.
    InvalidMetric,
    /// A non-finite value where a finite matrix is required.
    NonFinite,
    EmptyCalibration,
    EmptyEval,
    /// Argument outside the mathematical domain of a function.
    Domain(String),
    /// A configuration scalar violates its documented range.
    InvalidConfig(String),
    /// Requested behaviour that has no defined semantics.
    NotImplemented(&'static str),
    Token { token: u32, vocab_size: usize },
    Corpus(String),
    /// Failure inside one named layer during a model-wide pass.
    Layer { layer_id: String, source: Box<Error> },
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::InvalidMetric => "InvalidMetric",
            Error::NonFinite => "NonFinite",
            Error::EmptyCalibration => "EmptyCalibration",
            Error::EmptyEval => "EmptyEval",
            Error::Domain(_) => "DomainError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NotImplemented(_) => "NotImplemented",
            Error::Token { .. } => "TokenError",
            Error::Corpus(_) => "CorpusError",
            Error::Layer { source, .. } => source.kind(),
        }
    }

    pub(crate) fn in_layer(self, layer_id: &str) -> Self {
        Error::Layer {
            layer_id: layer_id.into(),
            source: Box::new(self),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidMetric => f.write_str("importance metric contains NaN"),
            Error::NonFinite => f.write_str("matrix contains NaN or infinite values"),
            Error::EmptyCalibration => f.write_str("calibration set is empty"),
            Error::EmptyEval => f.write_str("evaluation set is empty"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NotImplemented(what) => write!(f, "not implemented: {what}"),
            Error::Token { token, vocab_size } => {
                write!(f, "token {token} out of range for vocabulary of {vocab_size}")
            }
            Error::Corpus(msg) => write!(f, "corpus error: {msg}"),
            Error::Layer { layer_id, source } => write!(f, "{layer_id}: {source}"),
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Layer { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
