//! Sparsely-gated expert layer with top-1 switch routing.
//!
//! Tokens are individual time frames. Each token goes to the argmax expert of
//! its router softmax; per-expert capacity is `⌈cf · tokens / N⌉` and
//! overflow tokens (in token order) contribute zero, leaving the surrounding
//! residual connection to carry them. The router learns only through the
//! `gate_prob` scaling of the expert output and the auxiliary load loss.

mod ffn;
mod gate;
mod layer;
pub mod trace;

pub use ffn::{FeedForward, FeedForwardCache};
pub use gate::{Gate, GateCache, GateId, RoutingDecision, DEFAULT_JITTER};
pub use layer::{
    aux_loss, expert_capacity, DispatchCache, ExpertBank, Gating, LoadStats, MoeCache, MoeLayer,
    MoeOutput, MoeShape, DEFAULT_ALPHA, DEFAULT_CAPACITY_FACTOR, DEFAULT_EXPERT_DROPOUT,
};
