//! Minimal reverse-mode differentiation: dense matrices, a single-use tape, parameter sets with
//! gradient buffers, Adam, and checkpoint IO.

mod adam;
mod checkpoint;
pub mod matrix;
mod params;
mod scalar;
mod tape;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, TensorEntry,
    CHECKPOINT_MAGIC,
};
pub use matrix::Matrix;
pub use params::{Grads, ParamId, ParameterSet, Weights};
pub use scalar::Scalar;
pub use tape::{InputGrads, Mode, Tape, Var};
