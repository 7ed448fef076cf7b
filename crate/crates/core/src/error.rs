//! Error taxonomy shared by all pipeline stages.

use std::fmt;
use std::io;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by image primitives, detectors and the pipeline stages.
#[derive(Debug)]
pub enum Error {
    /// Shape or size constraint violated (kernel larger than image,
    /// descriptor length mismatch, even structuring element, ...).
    Dimension(String),
    /// Invalid scalar parameter (non-positive gamma, zero target width, ...).
    InvalidParam(String),
    /// A patch, strip or trace footprint leaves the image.
    OutOfBounds(String),
    /// Crop rectangle does not intersect the image.
    EmptyRegion,
    /// Adaptive binarization exhausted its threshold schedule without
    /// producing a long enough edge component.
    EdgeNotFound { threshold_floor: f32 },
    /// Refined corner distance is implausibly short compared to the coarse
    /// estimate; signals a coarse-stage failure.
    ImplausibleCorners { l_g: f64, l_p: f64 },
    /// No local maxima survived the mark threshold on a traced column.
    NoMarks,
    /// Column scan exhausted its offset budget without finding a line that
    /// crosses only major marks.
    MajorLineNotFound,
    /// Interval merging could not produce a consistent mark period.
    StainFilter(String),
    /// Mark count after filtering is not the expected ten.
    MarkCount { found: usize },
    /// Training input is unusable (empty sample set, missing annotation).
    Training(String),
    /// Model / annotation / config file could not be parsed.
    Format(String),
    /// Evaluation inputs do not match up.
    Eval(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::OutOfBounds(msg) => write!(f, "out of bounds: {msg}"),
            Error::EmptyRegion => write!(f, "crop rectangle does not intersect the image"),
            Error::EdgeNotFound { threshold_floor } => write!(
                f,
                "no edge component long enough before threshold floor {threshold_floor}"
            ),
            Error::ImplausibleCorners { l_g, l_p } => write!(
                f,
                "refined corner distance {l_g:.1} px implausible against coarse estimate {l_p:.1} px"
            ),
            Error::NoMarks => write!(f, "no scale marks found on traced column"),
            Error::MajorLineNotFound => {
                write!(f, "no column crossing only major marks within offset budget")
            }
            Error::StainFilter(msg) => write!(f, "stain filter: {msg}"),
            Error::MarkCount { found } => {
                write!(f, "expected 10 major scale marks, found {found}")
            }
            Error::Training(msg) => write!(f, "training error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Eval(msg) => write!(f, "evaluation error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
