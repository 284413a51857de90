use crate::moe::{aux_loss, LoadStats};

/// How per-layer load-balancing losses combine into one term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AuxReduction {
    /// Token-weighted mean over MoE layers.
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for AuxReduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            _ => Err(format!("expected mean|sum, got `{s}`")),
        }
    }
}

impl std::fmt::Display for AuxReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
        })
    }
}

/// Weight of each layer's auxiliary loss in the combined objective.
pub fn aux_weights(stats: &[LoadStats], reduction: AuxReduction) -> Vec<f64> {
    match reduction {
        AuxReduction::Sum => vec![1.0; stats.len()],
        AuxReduction::Mean => {
            let total: usize = stats.iter().map(|s| s.tokens).sum();
            stats
                .iter()
                .map(|s| s.tokens as f64 / total.max(1) as f64)
                .collect()
        }
    }
}

/// Reduced auxiliary loss over MoE layers; zero for a dense model.
pub fn moe_loss(stats: &[LoadStats], reduction: AuxReduction) -> f64 {
    aux_weights(stats, reduction)
        .iter()
        .zip(stats)
        .map(|(w, s)| w * aux_loss(s))
        .sum()
}

/// `L_uPIT + L_MoE`; `α` is already inside each layer's statistics.
pub fn combined_loss(upit: f64, stats: &[LoadStats], reduction: AuxReduction) -> f64 {
    upit + moe_loss(stats, reduction)
}
