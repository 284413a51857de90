//! Conformer mask estimator with optional mixture-of-experts blocks.
//!
//! Each block is `x + MHSA(LN x)`, then `x + Conv(LN x)`, then
//! `x + FFN(LN x)` where the last module is a MoE layer on every
//! `moe_block_stride`-th block starting from the first. There is no dropout
//! inside blocks; only the experts carry it.

mod block;
mod config;
mod io;
mod model;

pub use block::{BlockCache, BlockOutput, ConformerBlock, ConvModule, FfnModule};
pub use config::{ConformerConfig, ExpertConfig, MoeVariant};
pub use io::{config_path_for, load_model, save_model};
pub use model::{split_masks, ModelCache, ModelOutput, SsModel};

#[cfg(test)]
mod tests;
