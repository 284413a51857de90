use crate::error::{invalid, Result};

pub const DEFAULT_WINDOW_SECONDS: f64 = 2.4;
pub const DEFAULT_HOP_SECONDS: f64 = 0.8;

/// Sliding-window layout over a signal. Every window is `window` samples;
/// the last one is zero-padded past the end of the signal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub window: usize,
    pub hop: usize,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl WindowPlan {
    pub fn from_seconds(total: usize, window_s: f64, hop_s: f64, sample_rate: u32) -> Result<Self> {
        if !(window_s > 0.0 && hop_s > 0.0) {
            return invalid(format!(
                "window {window_s} s and hop {hop_s} s must be positive"
            ));
        }
        let sr = sample_rate as f64;
        Self::new(
            total,
            (window_s * sr).round() as usize,
            (hop_s * sr).round() as usize,
        )
    }

    /// Full windows every `hop` samples from 0, plus one padded tail window
    /// when the last full window stops short of the end.
    pub fn new(total: usize, window: usize, hop: usize) -> Result<Self> {
        if total == 0 {
            return invalid("cannot plan windows over an empty signal");
        }
        if hop == 0 || window == 0 || hop > window {
            return invalid(format!("need 0 < hop ({hop}) <= window ({window})"));
        }
        let mut offsets = vec![0];
        while offsets[offsets.len() - 1] + window < total {
            let next = offsets[offsets.len() - 1] + hop;
            offsets.push(next);
        }
        Ok(Self {
            window,
            hop,
            offsets,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Samples shared by consecutive windows.
    pub fn overlap(&self) -> usize {
        self.window - self.hop
    }
}
