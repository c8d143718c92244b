use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("anchor grid needs at least one level")]
    NoLevels,
    #[error("level {level}: stride, scale, rows and cols must be positive")]
    BadLevel { level: usize },
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("focusing parameter must be finite and non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("no samples to fit")]
    EmptySamples,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("mixture model is degenerate")]
    DegenerateModel,
    #[error("prediction at position {position} refers to anchor {anchor_id}")]
    PredictionOrder { position: usize, anchor_id: usize },
    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),
    #[error("invalid world config: {0}")]
    InvalidWorld(&'static str),
    #[error("invalid training config: {0}")]
    InvalidTrain(&'static str),
    #[error("strategy requires a teacher model")]
    MissingTeacher,
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, component: &'static str },
}
