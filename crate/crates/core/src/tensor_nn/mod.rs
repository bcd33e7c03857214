//! Dense numerics and a small trainable MLP with activation capture.

mod io;
mod matrix;
mod mlp;

pub use io::{format_f64, load_model, model_to_string, parse_model, save_model};
pub use matrix::{argmax, dot, euclidean, log_sum_exp, softmax, squared_distance, Matrix};
pub use mlp::{
    kl_uniform_logit_grad, kl_uniform_to_softmax, ForwardTrace, MlpModel, TrainHyper, TrainReport,
};
