//! Two-branch self-supervised monocular depth estimation for day/night
//! image pairs: a CNN branch for local detail, a transformer branch for
//! global context, channel-selection + spatial-attention fusion, an
//! attention-gated decoder, differentiable view-synthesis training, and
//! the standard depth metric suite.

pub mod tensor;

pub use tensor::{Grads, ParamId, ParamStore, Tape, Tensor};
