//! Dense-tensor reverse-mode differentiation and the Adam optimizer.
//!
//! A [`Tape`] records primitive ops on `f64` tensors; [`Tape::backward`]
//! sweeps it once in reverse. Learnable tensors live in a [`ParamStore`]
//! and are bound onto a fresh tape for every step.

mod adam;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheck, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use params::{format_f64, Bindings, ParamStore, Parameter, PARAMS_FORMAT_VERSION};
pub(crate) use params::ParamsIn;
pub use rng::{session_rng, standard_normal, stream_rng, SessionRng};
pub use tape::{BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any tensor that requires grad")]
    Detached,
    #[error("unknown tape variable {0}")]
    UnknownVar(usize),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("parameter serialization: {0}")]
    Serialization(String),
}
