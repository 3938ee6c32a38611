use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("palette does not match the VOC colormap at entry {0}")]
    PaletteMismatch(usize),
    #[error("target dimensions must be at least 1x1 (got {0}x{1})")]
    ZeroDimension(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dtype error: expected {expected}, found {found}")]
    DType { expected: String, found: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("expected a probability map, got a raw score map")]
    Kind,
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("cue set has no set elements")]
    EmptyCues,
    #[error("predicted class set is empty")]
    EmptyPrediction,
    #[error("prediction contains the ignore label at pixel {0}")]
    IgnoreInPrediction(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dims_match(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}
