use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank error: {0}")]
    RankError(String),
    #[error("geometry error: {0}")]
    GeometryError(String),
    #[error("invalid quantization table: {0}")]
    InvalidQuant(String),
    #[error("quantization tables differ between operands")]
    QuantMismatch,
    #[error("unsupported stride {0}, expected 1 or 2")]
    StrideUnsupported(usize),
    #[error("frequency budget {0} outside 1..=15")]
    InvalidBudget(usize),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("truncated file")]
    TruncatedFile,
    #[error("chroma subsampling is not supported by the network path")]
    SubsamplingUnsupported,
    #[error("corrupt weight file: {0}")]
    CorruptFile(String),
    #[error("weight file version mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
