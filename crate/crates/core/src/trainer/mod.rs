//! Training: batch assembly, the analytic backward pass, AdamW with a
//! cosine-annealed learning rate, finite-difference gradient checking and
//! the epoch loop.

mod backward;
mod batch;
mod config;
mod gradcheck;
mod optim;
mod train;

pub use backward::{forward_backward, forward_loss, Gradients};
pub use batch::{build_batch, Batch, TrainingData};
pub use config::TrainConfig;
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use optim::{adamw_step, adamw_update, lr_at_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{train, train_knowledge_embeddings, EpochLog, KeOnlyOutcome, TrainOutcome};
