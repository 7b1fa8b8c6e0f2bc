//! Parameterised layers built on the autodiff tape.
//!
//! Every layer owns its parameter [`Tensor`]s and exposes them through
//! [`Parameters`], which enumerates `(name, tensor)` pairs in a fixed order.
//! A training step binds all parameters to a fresh tape, runs the forward
//! pass, back-propagates, and collects gradients back into the tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::Tape;
use crate::error::{param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

mod attention;
mod layers;
mod positional;
mod transformer;

pub use attention::{AttentionOutput, MultiHeadAttention};
pub use layers::{Conv2dLayer, LayerNorm, Linear, LAYER_NORM_EPS};
pub use positional::PositionalEncoding;
pub use transformer::{DecoderBlock, DecoderOutput, EncoderBlock, TransformerBlockConfig};

/// Ordered enumeration of named parameter tensors.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// Visits `child`'s parameters with names prefixed by `prefix.`.
pub(crate) fn visit_child(prefix: &str, child: &dyn Parameters, f: &mut dyn FnMut(&str, &Tensor)) {
    child.visit(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}

pub(crate) fn visit_child_mut(prefix: &str, child: &mut dyn Parameters, f: &mut dyn FnMut(&str, &mut Tensor)) {
    child.visit_mut(&mut |name, t| f(&format!("{prefix}.{name}"), t));
}

/// Binds every parameter of `model` to `tape` as a differentiable leaf.
pub fn bind_parameters(model: &mut dyn Parameters, tape: &mut Tape) {
    model.visit_mut(&mut |_, t| {
        t.requires_grad = true;
        tape.bind(t);
    });
}

/// Adds the tape's leaf gradients into each parameter's `grad`.
pub fn collect_grads(model: &mut dyn Parameters, tape: &Tape) {
    model.visit_mut(&mut |_, t| t.accumulate_grad(tape));
}

pub fn zero_grads(model: &mut dyn Parameters) {
    model.visit_mut(&mut |_, t| t.zero_grad());
}

/// Total number of scalar parameters.
pub fn parameter_count(model: &dyn Parameters) -> usize {
    let mut n = 0;
    model.visit(&mut |_, t| n += t.numel());
    n
}

/// `(name, shape)` for every parameter in enumeration order.
pub fn parameter_layout(model: &dyn Parameters) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    model.visit(&mut |name, t| out.push((String::from(name), t.shape().to_vec())));
    out
}

/// Whether a forward pass is training (dropout active, drawing from the
/// given generator) or evaluating.
pub enum Phase<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Phase<'_> {
    pub fn rng(&mut self) -> Option<&mut Rng> {
        match self {
            Phase::Train(rng) => Some(&mut **rng),
            Phase::Eval => None,
        }
    }
}

/// Xavier-uniform weights: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    if fan_in + fan_out == 0 {
        return Err(param_err!("xavier init needs a positive fan"));
    }
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Applies dropout with probability `p` when training; identity otherwise.
pub fn dropout(tape: &mut Tape, x: crate::Var, p: f64, phase: &mut Phase<'_>) -> Result<crate::Var> {
    tape.dropout(x, p, phase.rng())
}
