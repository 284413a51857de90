use std::fmt;

use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::moe::{DEFAULT_CAPACITY_FACTOR, DEFAULT_EXPERT_DROPOUT, DEFAULT_JITTER};
use crate::nn::attention::DEFAULT_MAX_REL;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertConfig {
    pub experts: usize,
    pub capacity_factor: f64,
    pub jitter: f64,
    pub expert_dropout: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            experts: 4,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            jitter: DEFAULT_JITTER,
            expert_dropout: DEFAULT_EXPERT_DROPOUT,
        }
    }
}

/// Which feed-forward module the MoE-carrying blocks use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MoeVariant {
    Dense,
    Moe(ExpertConfig),
    /// Two gates sharing one expert bank.
    Mmoe(ExpertConfig),
}

impl MoeVariant {
    pub fn experts(&self) -> Option<&ExpertConfig> {
        match self {
            MoeVariant::Dense => None,
            MoeVariant::Moe(e) | MoeVariant::Mmoe(e) => Some(e),
        }
    }

    pub fn is_multi_gate(&self) -> bool {
        matches!(self, MoeVariant::Mmoe(_))
    }

    /// Config-file spelling: `none`, `moe` or `mmoe`.
    pub fn tag(&self) -> &'static str {
        match self {
            MoeVariant::Dense => "none",
            MoeVariant::Moe(_) => "moe",
            MoeVariant::Mmoe(_) => "mmoe",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub conv_kernel: usize,
    pub moe: MoeVariant,
    /// MoE sits on blocks `0, stride, 2·stride, …`.
    pub moe_block_stride: usize,
    pub num_speakers: usize,
    /// Frequency bins per frame; the FFT size is `2 (input_dim − 1)`.
    pub input_dim: usize,
    pub hop_length: usize,
    pub max_rel: usize,
}

impl Default for ConformerConfig {
    /// Desk-scale model: 256-point frames, four 64-wide blocks.
    fn default() -> Self {
        Self {
            num_blocks: 4,
            model_dim: 64,
            heads: 4,
            ffn_hidden: 128,
            conv_kernel: 15,
            moe: MoeVariant::Dense,
            moe_block_stride: 2,
            num_speakers: 2,
            input_dim: 129,
            hop_length: 128,
            max_rel: DEFAULT_MAX_REL,
        }
    }
}

impl ConformerConfig {
    pub fn with_moe(mut self, moe: MoeVariant) -> Self {
        self.moe = moe;
        self
    }

    pub fn frame_length(&self) -> usize {
        2 * (self.input_dim - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 || self.model_dim == 0 || self.ffn_hidden == 0 {
            return bad("block count, model dim and ffn hidden must be positive".into());
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.num_speakers == 0 {
            return bad("num_speakers must be positive".into());
        }
        if self.input_dim < 3 {
            return bad(format!("input_dim {} too small", self.input_dim));
        }
        let frame = self.frame_length();
        if self.hop_length != frame / 2 && self.hop_length != frame / 4 {
            return bad(format!(
                "hop_length must be {} or {} for {}-point frames",
                frame / 2,
                frame / 4,
                frame
            ));
        }
        if self.moe_block_stride == 0 {
            return bad("moe_block_stride must be positive".into());
        }
        if let Some(e) = self.moe.experts() {
            if e.experts == 0 {
                return bad("experts must be positive".into());
            }
            if !(e.capacity_factor > 0.0) {
                return bad(format!(
                    "capacity_factor must be > 0, got {}",
                    e.capacity_factor
                ));
            }
            if !(0.0..1.0).contains(&e.expert_dropout) || e.jitter < 0.0 {
                return bad("expert_dropout must lie in [0, 1) and jitter be ≥ 0".into());
            }
        }
        Ok(())
    }

    pub fn is_moe_block(&self, i: usize) -> bool {
        self.moe.experts().is_some() && i % self.moe_block_stride == 0
    }

    pub fn moe_blocks(&self) -> Vec<usize> {
        (0..self.num_blocks)
            .filter(|&i| self.is_moe_block(i))
            .collect()
    }

    /// Parameter count in closed form, independent of the module builders.
    pub fn param_count(&self) -> usize {
        let (d, h, f, s, k) = (
            self.model_dim,
            self.ffn_hidden,
            self.input_dim,
            self.num_speakers,
            self.conv_kernel,
        );
        let linear = |i: usize, o: usize| i * o + o;
        let norm = 2 * d;
        let mhsa = 4 * linear(d, d) + self.heads * (2 * self.max_rel + 1);
        let conv = linear(d, 2 * d) + (k * d + d) + norm + linear(d, d);
        let ffn = linear(d, h) + linear(h, d);
        let mut total = linear(f, d) + linear(d, s * f);
        for i in 0..self.num_blocks {
            total += 3 * norm + mhsa + conv;
            total += match (self.is_moe_block(i), self.moe) {
                (true, MoeVariant::Moe(e)) => e.experts * ffn + d * e.experts,
                (true, MoeVariant::Mmoe(e)) => e.experts * ffn + 2 * d * e.experts,
                _ => ffn,
            };
        }
        total
    }

    /// Overrides fields from `map`, consuming the keys it recognizes.
    pub fn apply(&mut self, map: &mut KvMap) -> Result<()> {
        map.take_into("num_blocks", &mut self.num_blocks)?;
        map.take_into("model_dim", &mut self.model_dim)?;
        map.take_into("heads", &mut self.heads)?;
        map.take_into("ffn_hidden", &mut self.ffn_hidden)?;
        map.take_into("conv_kernel", &mut self.conv_kernel)?;
        map.take_into("moe_block_stride", &mut self.moe_block_stride)?;
        map.take_into("num_speakers", &mut self.num_speakers)?;
        map.take_into("input_dim", &mut self.input_dim)?;
        map.take_into("max_rel", &mut self.max_rel)?;
        let frame = self.frame_length();
        self.hop_length = map.take("hop_length")?.unwrap_or(frame / 2);
        let mut e = self.moe.experts().copied().unwrap_or_default();
        map.take_into("experts", &mut e.experts)?;
        map.take_into("capacity_factor", &mut e.capacity_factor)?;
        map.take_into("jitter", &mut e.jitter)?;
        map.take_into("expert_dropout", &mut e.expert_dropout)?;
        let tag = map.take::<String>("moe")?;
        self.moe = match tag.as_deref().unwrap_or(self.moe.tag()) {
            "none" => MoeVariant::Dense,
            "moe" => MoeVariant::Moe(e),
            "mmoe" => MoeVariant::Mmoe(e),
            other => {
                return Err(Error::Config(format!(
                    "moe must be none|moe|mmoe, got `{other}`"
                )))
            }
        };
        self.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::default();
        m.insert("num_blocks", self.num_blocks);
        m.insert("model_dim", self.model_dim);
        m.insert("heads", self.heads);
        m.insert("ffn_hidden", self.ffn_hidden);
        m.insert("conv_kernel", self.conv_kernel);
        m.insert("moe", self.moe.tag());
        m.insert("moe_block_stride", self.moe_block_stride);
        m.insert("num_speakers", self.num_speakers);
        m.insert("input_dim", self.input_dim);
        m.insert("hop_length", self.hop_length);
        m.insert("max_rel", self.max_rel);
        if let Some(e) = self.moe.experts() {
            m.insert("experts", e.experts);
            m.insert("capacity_factor", e.capacity_factor);
            m.insert("jitter", e.jitter);
            m.insert("expert_dropout", e.expert_dropout);
        }
        m
    }
}

impl fmt::Display for ConformerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render())
    }
}
