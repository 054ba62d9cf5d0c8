//! Forward passes for the two encoder-only heuristic models, plus the weight
//! container they load from. No training or gradients live here.

pub mod encoder;
pub mod models;
pub mod tensor;
pub mod weights;

use thiserror::Error;

use crate::riskmap::Cell;

pub use encoder::{encoder_forward, Probe};
pub use models::{
    expected_shape_trace, flatten, pad_risks, riskmap2_decode, riskmap2_forward, riskmap2_forward_tokens,
    state_forward, state_forward_input, tokenize, StateInput, TokenizedTask, PADDING_RISK,
};
pub use tensor::Matrix;
pub use weights::{
    load_weights, riskmap2_classes, Architecture, ModelKind, ModelWeights, Tensor, DEFAULT_STATE_MAX_SIZE,
    DEFAULT_STATE_SCALE, WEIGHTS_MAGIC,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("weight file: {0}")]
    Format(String),
    #[error("unknown architecture kind `{0}`")]
    UnknownKind(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{name}` has a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },
    #[error("tensor `{name}` spans bytes {offset}+{length} of a {payload}-byte payload or disagrees with its shape")]
    BadExtent {
        name: String,
        offset: u64,
        length: u64,
        payload: u64,
    },
    #[error("expected a {expected} model, got {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("model expects {model}x{model} maps, got {width}x{height}")]
    SizeMismatch { model: usize, width: usize, height: usize },
    #[error("map {width}x{height} exceeds the model's {max}x{max} limit")]
    MapTooLarge { width: usize, height: usize, max: usize },
    #[error("map {width}x{height} is not square")]
    NonSquare { width: usize, height: usize },
    #[error("cell {0} is outside the map")]
    OutOfBounds(Cell),
    #[error("{what}: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
