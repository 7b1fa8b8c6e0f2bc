use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal position table:
/// `table[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `table[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub max_len: usize,
    pub d_model: usize,
    pub table: Tensor,
}

impl PositionalEncoding {
    pub fn new(max_len: usize, d_model: usize) -> Result<Self> {
        let table = Tensor::from_fn(&[max_len, d_model], |at| {
            let (pos, j) = (at / d_model, at % d_model);
            let pair = (j - j % 2) as f64;
            let angle = pos as f64 / libm::pow(10_000.0, pair / d_model as f64);
            if j % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            }
        })?;
        Ok(PositionalEncoding { max_len, d_model, table })
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.table.data()[pos * self.d_model..(pos + 1) * self.d_model]
    }

    /// Adds positions `0..L` to each of `batch` stacked sequences in
    /// `x: [batch·L×d]`.
    pub fn add(&self, tape: &mut Tape, x: Var, batch: usize) -> Result<Var> {
        let (rows, d) = match tape.shape(x) {
            [r, d] => (*r, *d),
            s => return Err(dim_err!("positional encoding expects a matrix, got {:?}", s)),
        };
        if d != self.d_model || batch == 0 || rows % batch != 0 {
            return Err(dim_err!(
                "positional encoding for d_model {} cannot apply to {:?} with batch {}",
                self.d_model,
                tape.shape(x),
                batch
            ));
        }
        let len = rows / batch;
        if len > self.max_len {
            return Err(Error::Capacity { len, max_len: self.max_len });
        }
        let slice = &self.table.data()[..len * d];
        let addend: alloc::vec::Vec<f64> = (0..batch).flat_map(|_| slice.iter().copied()).collect();
        tape.add_const(x, &addend)
    }
}
