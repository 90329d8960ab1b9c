//! Model builders and initialization.

mod builders;
mod init;
mod model;
mod probe;

pub use builders::{build_mlp, build_small_cnn, CnnSpec};
pub use init::{init_scaled_uniform, InitSpec};
pub use model::{ForwardPass, LayerSpec, Model, ParamKind, ParamRole, Parameter};
pub use probe::{zero_output_check, ZeroOutputReport};
