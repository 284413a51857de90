use std::io::Write;

use super::gate::RoutingDecision;
use crate::error::Result;
use crate::nn::Scalar;

/// One row of the routing trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTraceRow {
    pub step: usize,
    pub layer: usize,
    pub expert: usize,
    pub token_count: usize,
    pub mean_prob: f64,
    pub dropped_count: usize,
}

pub const TRACE_HEADER: &str = "step,layer,expert,token_count,mean_prob,dropped_count";

pub fn summarize<T: Scalar>(
    step: usize,
    layer: usize,
    d: &RoutingDecision<T>,
) -> Vec<RoutingTraceRow> {
    let n = d.n_experts();
    let mut count = vec![0usize; n];
    let mut prob = vec![0.0f64; n];
    let mut dropped = vec![0usize; n];
    for t in 0..d.tokens() {
        let e = d.expert_index[t];
        count[e] += 1;
        prob[e] += d.gate_prob[t].as_f64();
        if d.dropped[t] {
            dropped[e] += 1;
        }
    }
    (0..n)
        .map(|e| RoutingTraceRow {
            step,
            layer,
            expert: e,
            token_count: count[e],
            mean_prob: if count[e] > 0 {
                prob[e] / count[e] as f64
            } else {
                0.0
            },
            dropped_count: dropped[e],
        })
        .collect()
}

pub fn write_csv<W: Write>(out: &mut W, rows: &[RoutingTraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{}",
            r.step, r.layer, r.expert, r.token_count, r.mean_prob, r.dropped_count
        )?;
    }
    Ok(())
}
