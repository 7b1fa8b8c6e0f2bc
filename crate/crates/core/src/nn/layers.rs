use alloc::string::String;
use alloc::vec;

use super::{xavier_uniform, Parameters};
use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Fully connected layer `y = x·Wᵀ + b` with `W: [out×in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Linear {
            name: name.into(),
            weight: xavier_uniform(rng, &[outputs, inputs], inputs, outputs)?,
            bias: Tensor::zeros(&[outputs])?,
        })
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([o, _], [b]) if o == b => Ok(Linear { name: name.into(), weight, bias }),
            (w, b) => Err(dim_err!("linear layer `{}`: weight {:?} and bias {:?} disagree", name, w, b)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x: [batch×in]` to `[batch×out]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let ok = matches!(tape.shape(x), [_, d] if *d == self.inputs());
        if !ok {
            return Err(dim_err!(
                "linear layer `{}` expects [batch×{}], got {:?}",
                self.name,
                self.inputs(),
                tape.shape(x)
            ));
        }
        let w = tape.var_of(&self.weight)?;
        let b = tape.var_of(&self.bias)?;
        let y = tape.matmul_nt(x, w)?;
        tape.add_bias(y, b)
    }
}

impl Parameters for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Square-kernel convolution with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: usize,
}

impl Conv2dLayer {
    pub fn new(c_in: usize, c_out: usize, k: usize, padding: usize, rng: &mut Rng) -> Result<Self> {
        let receptive = k * k;
        Ok(Conv2dLayer {
            kernel: xavier_uniform(rng, &[c_out, c_in, k, k], c_in * receptive, c_out * receptive)?,
            bias: Tensor::zeros(&[c_out])?,
            padding,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = tape.var_of(&self.kernel)?;
        let b = tape.var_of(&self.bias)?;
        tape.conv2d(x, k, b, self.padding, 1)
    }
}

impl Parameters for Conv2dLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("kernel", &self.kernel);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("kernel", &mut self.kernel);
        f("bias", &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: Tensor::new(&[d], vec![1.0; d])?,
            beta: Tensor::zeros(&[d])?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.var_of(&self.gamma)?;
        let b = tape.var_of(&self.beta)?;
        tape.layer_norm(x, g, b, self.eps)
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}
