//! Training substrate: reverse-mode tape, dense layers, Adam, and
//! finite-difference gradient checking.

mod gradcheck;
mod nn;
mod params;
mod tape;

pub use gradcheck::{grad_check, grad_check_where, relative_error, GradCheckReport};
pub use nn::Mlp;
pub use params::{glorot_uniform, normal_init, AdamConfig, Param, ParamStore};
pub use tape::{log_sum_exp, sigmoid, softmax_rows, Gradients, Tape, Var};
