//! Continuous separation of long recordings.
//!
//! The recording is cut into overlapping windows, each window is separated
//! independently, the channels of every window are permuted to best match
//! the previous window on their shared frames, and the aligned windows are
//! crossfaded back into continuous streams.

mod plan;
mod separate;
mod stitch;

pub use plan::{WindowPlan, DEFAULT_HOP_SECONDS, DEFAULT_WINDOW_SECONDS};
pub use separate::{separate_long, separate_once, Separation};
pub use stitch::{align_permutation, stitch, StitchState};

#[cfg(test)]
mod tests;
