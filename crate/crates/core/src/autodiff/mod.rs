//! Minimal reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use param::{
    GradUpdate, Param, ParamGrads, ParamId, ParamManifest, ParamRecord, ParamSet, PARAM_MANIFEST_FORMAT,
    PARAM_MANIFEST_VERSION,
};
pub use tape::{gelu, sigmoid, Conv1dOptions, Tape, Var, INSTANCE_NORM_EPS};
pub use tensor::Tensor;
