use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}; expected 1, 2 or 3")]
    InvalidDimension(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point {index} lies outside [-1,1]^d")]
    OutOfBox { index: usize },
    #[error("points {0} and {1} coincide")]
    DuplicatePoints(usize, usize),
    #[error("depth {depth} leaves some of the {cells} cells empty for {n} points")]
    EmptyCells { n: usize, depth: usize, cells: usize },
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("unknown kernel id `{0}`")]
    UnknownKernel(String),
    #[error("size {size} exceeds the cap {cap}")]
    SizeCap { size: usize, cap: usize },
    #[error("boxes overlap; far-field block requested for touching clusters")]
    OverlappingBoxes,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular pivot at cluster {index}, level {level} (condition estimate {cond:.3e})")]
    SingularPivot { level: usize, index: usize, cond: f64 },
    #[error("singular matrix")]
    Singular,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
