//! Deterministic tensor engine: dense arrays, differentiable kernels, AdamW,
//! seeded random streams and finite-difference gradient checks.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use kernels::{cosine_similarity, cross_entropy, matmul, sigmoid, softmax_rows};
pub use optim::{adamw_step, AdamWConfig, ParamStore, StepLr};
pub use rng::{gaussian2d, stream_id, Gaussian2, RngStream};
pub use tensor::Tensor;
