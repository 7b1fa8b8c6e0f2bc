use super::attention::AttentionOutput;
use super::{dropout, visit_child, visit_child_mut, LayerNorm, Linear, MultiHeadAttention, Parameters, Phase};
use crate::autodiff::{Tape, Var};
use crate::error::{param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shared hyperparameters of the post-norm encoder and decoder blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerBlockConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub dropout_p: f64,
}

impl Default for TransformerBlockConfig {
    fn default() -> Self {
        TransformerBlockConfig { d_model: 512, num_heads: 8, d_ff: 2048, dropout_p: 0.1 }
    }
}

impl TransformerBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_ff < 1 {
            return Err(param_err!("d_ff must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) || self.dropout_p >= 1.0 {
            return Err(param_err!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return Err(param_err!("d_model {} is not divisible by {} heads", self.d_model, self.num_heads));
        }
        Ok(())
    }
}

/// Position-wise feed-forward: linear, ReLU, dropout, linear.
#[derive(Debug, Clone, PartialEq)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(cfg: &TransformerBlockConfig, rng: &mut Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new("ff.up", cfg.d_model, cfg.d_ff, rng)?,
            down: Linear::new("ff.down", cfg.d_ff, cfg.d_model, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: f64, phase: &mut Phase<'_>) -> Result<Var> {
        let h = self.up.forward(tape, x)?;
        let h = tape.relu(h);
        let h = dropout(tape, h, p, phase)?;
        self.down.forward(tape, h)
    }
}

impl Parameters for FeedForward {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("up", &self.up, f);
        visit_child("down", &self.down, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("up", &mut self.up, f);
        visit_child_mut("down", &mut self.down, f);
    }
}

/// `norm(x + dropout(branch))`.
fn add_norm(tape: &mut Tape, x: Var, branch: Var, norm: &LayerNorm, p: f64, phase: &mut Phase<'_>) -> Result<Var> {
    let branch = dropout(tape, branch, p, phase)?;
    let sum = tape.add(x, branch)?;
    norm.forward(tape, sum)
}

/// Self-attention, add & norm, feed-forward, add & norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub cfg: TransformerBlockConfig,
    pub self_attn: MultiHeadAttention,
    ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(cfg: TransformerBlockConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(EncoderBlock {
            cfg,
            self_attn: MultiHeadAttention::new(cfg.d_model, cfg.num_heads, rng)?,
            ff: FeedForward::new(&cfg, rng)?,
            norm1: LayerNorm::new(cfg.d_model)?,
            norm2: LayerNorm::new(cfg.d_model)?,
        })
    }

    /// `x: [batch·L×d]` to the same shape.
    pub fn forward(&self, tape: &mut Tape, x: Var, batch: usize, phase: &mut Phase<'_>) -> Result<Var> {
        let p = self.cfg.dropout_p;
        let AttentionOutput { output: sa, .. } = self.self_attn.forward_batched(tape, x, x, x, batch, p, phase)?;
        self.forward_after_attention(tape, x, sa, phase)
    }

    /// Everything after the self-attention stage, given its output `attn`.
    pub fn forward_after_attention(&self, tape: &mut Tape, x: Var, attn: Var, phase: &mut Phase<'_>) -> Result<Var> {
        let p = self.cfg.dropout_p;
        let x = add_norm(tape, x, attn, &self.norm1, p, phase)?;
        let ff = self.ff.forward(tape, x, p, phase)?;
        add_norm(tape, x, ff, &self.norm2, p, phase)
    }
}

impl Parameters for EncoderBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("self_attn", &self.self_attn, f);
        visit_child("ff", &self.ff, f);
        visit_child("norm1", &self.norm1, f);
        visit_child("norm2", &self.norm2, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("self_attn", &mut self.self_attn, f);
        visit_child_mut("ff", &mut self.ff, f);
        visit_child_mut("norm1", &mut self.norm1, f);
        visit_child_mut("norm2", &mut self.norm2, f);
    }
}

/// Self-attention, add & norm, cross-attention over the encoder memory,
/// add & norm, feed-forward, add & norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub cfg: TransformerBlockConfig,
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

/// Decoder output with the attention weights of both attention stages.
pub struct DecoderOutput {
    pub output: Var,
    pub self_weights: alloc::vec::Vec<Var>,
    pub cross_weights: alloc::vec::Vec<Var>,
}

impl DecoderBlock {
    pub fn new(cfg: TransformerBlockConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(DecoderBlock {
            cfg,
            self_attn: MultiHeadAttention::new(cfg.d_model, cfg.num_heads, rng)?,
            cross_attn: MultiHeadAttention::new(cfg.d_model, cfg.num_heads, rng)?,
            ff: FeedForward::new(&cfg, rng)?,
            norm1: LayerNorm::new(cfg.d_model)?,
            norm2: LayerNorm::new(cfg.d_model)?,
            norm3: LayerNorm::new(cfg.d_model)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, memory: Var, batch: usize, phase: &mut Phase<'_>) -> Result<Var> {
        Ok(self.forward_traced(tape, x, memory, batch, phase)?.output)
    }

    /// `x: [batch·L×d]`, `memory: [batch·Lm×d]`.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        x: Var,
        memory: Var,
        batch: usize,
        phase: &mut Phase<'_>,
    ) -> Result<DecoderOutput> {
        let p = self.cfg.dropout_p;
        let sa = self.self_attn.forward_batched(tape, x, x, x, batch, p, phase)?;
        let x = add_norm(tape, x, sa.output, &self.norm1, p, phase)?;
        let ca = self.cross_attn.forward_batched(tape, x, memory, memory, batch, p, phase)?;
        let x = add_norm(tape, x, ca.output, &self.norm2, p, phase)?;
        let ff = self.ff.forward(tape, x, p, phase)?;
        let output = add_norm(tape, x, ff, &self.norm3, p, phase)?;
        Ok(DecoderOutput { output, self_weights: sa.weights, cross_weights: ca.weights })
    }
}

impl Parameters for DecoderBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("self_attn", &self.self_attn, f);
        visit_child("cross_attn", &self.cross_attn, f);
        visit_child("ff", &self.ff, f);
        visit_child("norm1", &self.norm1, f);
        visit_child("norm2", &self.norm2, f);
        visit_child("norm3", &self.norm3, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("self_attn", &mut self.self_attn, f);
        visit_child_mut("cross_attn", &mut self.cross_attn, f);
        visit_child_mut("ff", &mut self.ff, f);
        visit_child_mut("norm1", &mut self.norm1, f);
        visit_child_mut("norm2", &mut self.norm2, f);
        visit_child_mut("norm3", &mut self.norm3, f);
    }
}
