//! Tensors, the reverse-mode tape, Gumbel-Softmax sampling and seeded
//! random streams.

mod gradcheck;
mod gumbel;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, DEFAULT_EPS};
pub use gumbel::{gumbel_softmax, sample_gumbel, GumbelNoise};
pub use rng::{Rng, RngStream};
pub use tape::{Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{matmul_into, sigmoid};
