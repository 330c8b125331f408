//! Numeric substrate: dense tensors, a reverse-mode tape, Adam, gradient
//! clipping and spectral normalization.

mod optim;
mod params;
mod spectral;
mod tape;
mod tensor;

pub use optim::{adam_step, clip_gradients, global_norm, AdamState};
pub use params::{Param, ParamId, ParamSet};
pub use spectral::{spectral_normalize, SpectralNorm};
pub use tape::{log_sum_exp, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
