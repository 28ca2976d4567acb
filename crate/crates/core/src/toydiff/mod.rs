//! Reverse-mode autodiff and the deterministic toy models the pipeline is
//! verified against.

mod linear;
mod mlp;
mod model;
mod tape;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub use linear::{LinearModel, LINEAR_WEIGHT_FORMAT};
pub use mlp::{Activation, Dense, LinearFn, Mlp, MlpOutput};
pub use model::{make_toy_model, Ablation, ToyConfig, ToyDims, ToyVLModel, EOS_ID, PAD_ID, WEIGHT_FORMAT};
pub use tape::{affine, Gradients, Real, Tape, Var};

/// Derivative of one scalar model output with respect to every input entry,
/// shaped like the input it differentiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    /// Value of the differentiated output, when the oracle reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub text: Matrix,
    pub visual: Matrix,
}
