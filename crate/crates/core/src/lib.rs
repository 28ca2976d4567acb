//! Faithfulness measurement for natural-language explanations of
//! vision-language predictions.
//!
//! Integrated Gradients attributions are computed once for the predicted
//! answer and once for the generated explanation. The two are then compared
//! (attribution similarity) and used to drive feature-removal tests
//! (sufficiency and comprehensiveness). The [`analysis`] module summarizes the
//! resulting scores.
//!
//! Models are reached through the [`Oracle`] trait. [`ToyOracle`] wraps a
//! small differentiable model that ships with the crate; [`RemoteOracle`]
//! talks to an external process over a line-delimited JSON protocol.

pub mod alignment;
pub mod analysis;
pub mod attribution;
pub mod error;
pub mod faithfulness;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod selftest;
pub mod synth;
pub mod toydiff;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use oracle::{LinearOracle, ModelInput, Oracle, OracleInfo, RemoteOracle, Target, ToyOracle};
pub use types::{
    AttributionPair, AttributionVector, MetricRow, Modality, PredictionDistribution, TaskExample, Token,
};
