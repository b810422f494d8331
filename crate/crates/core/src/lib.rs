//! Multilinear latent conditioning for variational autoencoders.
//!
//! The latent prior of each attribute combination is `N(M(y₁, …, y_N), I)`,
//! where the mean `M` is a multilinear function of the one-hot labels whose
//! interaction tensors are kept in CP or Tucker form. Because the factors are
//! shared across combinations, `M` is defined (and trained) for every
//! combination, including ones that never occur in the training data.

pub mod autograd;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
