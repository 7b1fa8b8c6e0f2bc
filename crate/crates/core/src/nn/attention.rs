use alloc::vec::Vec;

use super::{dropout, visit_child, visit_child_mut, Linear, Parameters, Phase};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product attention with input and output
/// projections (each with bias).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub d_model: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Attention output plus the softmax weights, one `[Lq×Lk]` node per
/// (sequence, head) in sequence-major order.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, num_heads: usize, rng: &mut Rng) -> Result<Self> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(param_err!("d_model {} is not divisible by {} heads", d_model, num_heads));
        }
        Ok(MultiHeadAttention {
            num_heads,
            d_model,
            q: Linear::new("attn.q", d_model, d_model, rng)?,
            k: Linear::new("attn.k", d_model, d_model, rng)?,
            v: Linear::new("attn.v", d_model, d_model, rng)?,
            o: Linear::new("attn.o", d_model, d_model, rng)?,
        })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Single sequence: `query: [Lq×d]`, `key`/`value: [Lk×d]`.
    pub fn forward(&self, tape: &mut Tape, query: Var, key: Var, value: Var) -> Result<Var> {
        Ok(self.forward_batched(tape, query, key, value, 1, 0.0, &mut Phase::Eval)?.output)
    }

    /// `batch` independent sequences stacked row-wise: `query` is
    /// `[batch·Lq×d]`, `key`/`value` are `[batch·Lk×d]`. `attn_dropout`
    /// is applied to the attention weights while training.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_batched(
        &self,
        tape: &mut Tape,
        query: Var,
        key: Var,
        value: Var,
        batch: usize,
        attn_dropout: f64,
        phase: &mut Phase<'_>,
    ) -> Result<AttentionOutput> {
        let d = self.d_model;
        let rows = |tape: &Tape, v: Var| match tape.shape(v) {
            [r, c] if *c == d && batch > 0 && r % batch == 0 => Ok(r / batch),
            s => Err(dim_err!("attention input {:?} is not [{}·L×{}]", s, batch, d)),
        };
        let lq = rows(tape, query)?;
        let lk = rows(tape, key)?;
        if rows(tape, value)? != lk {
            return Err(dim_err!(
                "attention key {:?} and value {:?} lengths differ",
                tape.shape(key),
                tape.shape(value)
            ));
        }
        let q = self.q.forward(tape, query)?;
        let k = self.k.forward(tape, key)?;
        let v = self.v.forward(tape, value)?;
        let dh = self.d_head();
        let scale = 1.0 / libm::sqrt(dh as f64);

        let mut weights = Vec::with_capacity(batch * self.num_heads);
        let mut sequences = Vec::with_capacity(batch);
        for b in 0..batch {
            let (qb, kb, vb) = if batch == 1 {
                (q, k, v)
            } else {
                (tape.narrow(q, 0, b * lq, lq)?, tape.narrow(k, 0, b * lk, lk)?, tape.narrow(v, 0, b * lk, lk)?)
            };
            let mut heads = Vec::with_capacity(self.num_heads);
            for h in 0..self.num_heads {
                let (qh, kh, vh) = if self.num_heads == 1 {
                    (qb, kb, vb)
                } else {
                    (tape.narrow(qb, 1, h * dh, dh)?, tape.narrow(kb, 1, h * dh, dh)?, tape.narrow(vb, 1, h * dh, dh)?)
                };
                let scores = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let w = tape.softmax(scores, 1)?;
                weights.push(w);
                let w = dropout(tape, w, attn_dropout, phase)?;
                heads.push(tape.matmul(w, vh)?);
            }
            sequences.push(if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? });
        }
        let joined = if sequences.len() == 1 { sequences[0] } else { tape.concat(&sequences, 0)? };
        let output = self.o.forward(tape, joined)?;
        Ok(AttentionOutput { output, weights })
    }
}

impl Parameters for MultiHeadAttention {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("q", &self.q, f);
        visit_child("k", &self.k, f);
        visit_child("v", &self.v, f);
        visit_child("o", &self.o, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("q", &mut self.q, f);
        visit_child_mut("k", &mut self.k, f);
        visit_child_mut("v", &mut self.v, f);
        visit_child_mut("o", &mut self.o, f);
    }
}
