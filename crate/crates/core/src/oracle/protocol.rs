//! Newline-delimited JSON wire format spoken between the toolkit and an
//! external oracle process.
//!
//! ```text
//! -> {"id":1,"op":"info"}
//! <- {"id":1,"classes":3,"vis_dims":[4,6],"vocab":32,"embed_dim":8,"pad_id":0,"embeddings":[[..]],"explainer_sees_vision":true}
//! -> {"id":2,"op":"predict","payload":{"text":[[..]],"visual":[[..]]}}
//! <- {"id":2,"probs":[0.2,0.3,0.5]}
//! -> {"id":3,"op":"gradient","payload":{..},"target":{"kind":"answer","class":2}}
//! <- {"id":3,"value":0.41,"grads":{"text":[[..]],"visual":[[..]]}}
//! <- {"id":4,"error":"message"}
//! ```
//!
//! Each request carries a fresh id; each response echoes it. Numbers are
//! plain decimal JSON.

use serde::{Deserialize, Serialize};

use super::{ModelInput, OracleInfo, Target};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Info,
    Predict,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ModelInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grads {
    pub text: Matrix,
    pub visual: Matrix,
}

/// Union of all response shapes; exactly one group of fields is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grads: Option<Grads>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub info: Option<OracleInfo>,
}

impl Response {
    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            id,
            error: Some(message.into()),
            ..Self::default()
        }
    }
}

/// One request or response as a single line, without the trailing newline.
pub fn encode<T: Serialize>(message: &T) -> String {
    serde_json::to_string(message).expect("protocol messages always serialize")
}
