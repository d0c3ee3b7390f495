//! Linear algebra, reverse-mode differentiation, parameters and Adam.

pub mod adam;
pub mod archive;
pub mod params;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use archive::TensorArchive;
pub use params::{init_params, ParamShapes, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{AttentionAudit, Gradients, Tape, Var};
pub use tensor::Tensor;
