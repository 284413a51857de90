//! Separation objective, optimizer and training loop.
//!
//! The objective is the utterance-level permutation-invariant loss in the
//! mel domain plus the MoE load-balancing term. Gradients flow only through
//! the winning permutation.

mod check;
mod loss;
mod optim;
mod schedule;
mod trainer;
mod upit;

pub use check::{model_gradcheck, tiny_config};
pub use loss::{aux_weights, combined_loss, moe_loss, AuxReduction};
pub use optim::{clip_global_norm, AdamW, DEFAULT_BETAS, DEFAULT_CLIP_NORM, DEFAULT_EPS};
pub use schedule::LrSchedule;
pub use trainer::{
    prepare_batch, write_log_line, LogRecord, PreparedBatch, StepMetrics, TrainConfig, Trainer,
};
pub use upit::{permutations, upit_loss, PermutationAssignment, UpitOutput, MAX_SPEAKERS};
