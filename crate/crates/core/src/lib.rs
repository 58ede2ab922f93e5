//! Topic-conditioned text generation from unlabeled corpora.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of
//! the pipeline: a small reverse-mode autodiff engine, corpus views, a
//! variational topic model with its coherence metrics, a tiny causal
//! transformer LM, an attribute discriminator over its hidden states, and
//! gradient-based steering of the LM's key/value history.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod auto_eval;
pub mod autodiff;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod gradcheck;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod steering;
pub mod synth;
pub mod tensor;
pub mod topic_model;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
