//! Dense models, softmax cross-entropy, analytic gradients and Adam.

pub mod adam;
pub mod loss;
pub mod model;
pub mod params;

pub use adam::AdamState;
pub use loss::{accuracy, argmax, softmax_cross_entropy, Problem};
pub use model::{backward, dropout_mask, forward, Backward, ForwardCache, InputGrads, ModelKind, ModelSpec};
pub use params::{GradientSet, ModelParams};
