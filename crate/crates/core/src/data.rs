//! Flow frame datasets: the synthetic vortex-street generator, train-range
//! normalisation, `(prev, curr) -> next` pairing, and batching.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{dim_err, param_err, Error, Result};
use crate::models::FrameGeometry;
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Period, in frames, of the synthetic flow.
pub const SYNTHETIC_PERIOD: usize = 24;

/// Fraction of frames in the leading training block.
pub const TRAIN_FRACTION_NUM: usize = 4;
pub const TRAIN_FRACTION_DEN: usize = 5;

/// Affine map from an original value range onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
}

impl Normalization {
    pub fn apply(&self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.lo + (v + 1.0) * (self.hi - self.lo) / 2.0
    }
}

/// Ordered equal-sized frames plus the sequential train/test split point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    frames: Vec<Tensor>,
    geometry: FrameGeometry,
    normalization: Option<Normalization>,
    split_index: usize,
}

/// Index of the first test frame for `n` frames: `floor(0.8·n)`.
pub fn split_index_for(n_frames: usize) -> usize {
    n_frames * TRAIN_FRACTION_NUM / TRAIN_FRACTION_DEN
}

impl FrameDataset {
    /// Builds a raw (unnormalised) dataset from row-major frame buffers.
    pub fn new(geometry: FrameGeometry, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.len() < 3 {
            return Err(param_err!("a dataset needs at least 3 frames, got {}", frames.len()));
        }
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, data)| {
                if data.len() != geometry.flat_len() {
                    return Err(dim_err!(
                        "frame {} has {} values, geometry {}×{} needs {}",
                        i,
                        data.len(),
                        geometry.height,
                        geometry.width,
                        geometry.flat_len()
                    ));
                }
                Tensor::new(&[geometry.height, geometry.width], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let split_index = split_index_for(frames.len());
        Ok(FrameDataset { frames, geometry, normalization: None, split_index })
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// Original range mapped onto `[-1, 1]`, if normalised.
    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn norm_lo(&self) -> Option<f64> {
        self.normalization.map(|n| n.lo)
    }

    pub fn norm_hi(&self) -> Option<f64> {
        self.normalization.map(|n| n.hi)
    }

    /// Maps a normalised value back to original units.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.normalization.map_or(v, |n| n.invert(v))
    }

    /// Minimum and maximum over every frame.
    pub fn value_range(&self) -> (f64, f64) {
        range_of(self.frames.iter())
    }
}

fn range_of<'a>(frames: impl Iterator<Item = &'a Tensor>) -> (f64, f64) {
    frames
        .flat_map(|f| f.data().iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// The analytic traveling-wave vortex-street proxy at pixel `(y, x)` of
/// frame `t`. Time enters only through `t mod 24`, so the sequence is
/// exactly periodic.
pub fn synthetic_value(geometry: FrameGeometry, y: usize, x: usize, t: usize) -> f64 {
    let (h, w) = (geometry.height as f64, geometry.width as f64);
    let (y, x) = (y as f64, x as f64);
    let t = (t % SYNTHETIC_PERIOD) as f64;
    let envelope = {
        let z = (y - h / 2.0) / (0.35 * h);
        libm::exp(-z * z)
    };
    let primary = libm::sin(2.0 * PI * (3.0 * x / w - t / 24.0)) * libm::cos(2.0 * PI * 2.0 * y / h) * envelope;
    let secondary = 0.3 * libm::sin(2.0 * PI * (5.0 * x / w - t / 12.0)) * libm::sin(2.0 * PI * 3.0 * y / h);
    primary + secondary
}

/// Deterministic synthetic dataset without noise; `seed` only matters for
/// [`generate_synthetic_noisy`].
pub fn generate_synthetic(geometry: FrameGeometry, n_frames: usize, seed: u64) -> Result<FrameDataset> {
    generate_synthetic_noisy(geometry, n_frames, seed, 0.0)
}

/// Synthetic dataset with additive `U(-amplitude, amplitude)` noise drawn
/// from the seed's `noise` stream.
pub fn generate_synthetic_noisy(geometry: FrameGeometry, n_frames: usize, seed: u64, amplitude: f64) -> Result<FrameDataset> {
    if n_frames < 3 {
        return Err(param_err!("synthetic generation needs at least 3 frames, got {}", n_frames));
    }
    if !(amplitude >= 0.0) {
        return Err(param_err!("noise amplitude must be non-negative, got {}", amplitude));
    }
    let mut rng = (amplitude > 0.0).then(|| stream(seed, "noise"));
    let frames = (0..n_frames)
        .map(|t| {
            let mut frame = Vec::with_capacity(geometry.flat_len());
            for y in 0..geometry.height {
                for x in 0..geometry.width {
                    let mut v = synthetic_value(geometry, y, x, t);
                    if let Some(rng) = rng.as_mut() {
                        v += rng.random_range(-amplitude..=amplitude);
                    }
                    frame.push(v);
                }
            }
            frame
        })
        .collect();
    FrameDataset::new(geometry, frames)
}

/// Affinely maps the training block's `[min, max]` onto `[-1, 1]` and
/// applies the same map to every frame. Test frames may land slightly
/// outside `[-1, 1]` when their range exceeds the training range.
pub fn normalize(ds: &FrameDataset) -> Result<FrameDataset> {
    let (lo, hi) = range_of(ds.frames[..ds.split_index].iter());
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    let map = Normalization { lo, hi };
    let frames = ds
        .frames
        .iter()
        .map(|f| Tensor::from_fn(f.shape(), |i| map.apply(f.data()[i])))
        .collect::<Result<Vec<_>>>()?;
    let normalization = match ds.normalization {
        Some(prev) => Normalization { lo: prev.invert(lo), hi: prev.invert(hi) },
        None => map,
    };
    Ok(FrameDataset { frames, geometry: ds.geometry, normalization: Some(normalization), split_index: ds.split_index })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// Consecutive frames `t-1`, `t`, `t+1`.
#[derive(Debug, Clone, Copy)]
pub struct SamplePair<'a> {
    pub t: usize,
    pub prev: &'a Tensor,
    pub curr: &'a Tensor,
    pub target: &'a Tensor,
}

/// Time indices `t` of the pairs in `split`. Training pairs keep their
/// target inside the training block; test pairs start after the split so
/// their previous frame is already a test frame.
pub fn pair_indices(n_frames: usize, split_index: usize, split: Split) -> core::ops::RangeInclusive<usize> {
    let (first, last) = match split {
        Split::Train => (1, split_index.saturating_sub(2)),
        Split::Test => (split_index + 1, n_frames.saturating_sub(2)),
    };
    if last < first {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    first..=last
}

/// Ordered sample pairs of one split (possibly empty).
pub fn make_pairs(ds: &FrameDataset, split: Split) -> Vec<SamplePair<'_>> {
    pair_indices(ds.len(), ds.split_index, split)
        .map(|t| SamplePair { t, prev: &ds.frames[t - 1], curr: &ds.frames[t], target: &ds.frames[t + 1] })
        .collect()
}

/// Iterator over batches of at most `batch_size` items; the last partial
/// batch is kept.
pub struct Batches<'p, T> {
    items: &'p [T],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'p, T> Iterator for Batches<'p, T> {
    type Item = Vec<&'p T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].iter().map(|&i| &self.items[i]).collect();
        self.cursor = end;
        Some(batch)
    }
}

/// Partitions `items` into batches, optionally after a seeded shuffle.
pub fn batch_iter<'p, T>(items: &'p [T], batch_size: usize, shuffle: Option<&mut Rng>) -> Result<Batches<'p, T>> {
    if batch_size == 0 {
        return Err(param_err!("batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    Ok(Batches { items, order, batch_size, cursor: 0 })
}

/// Stacked `[batch×H×W]` tensors for one batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub prev: Tensor,
    pub curr: Tensor,
    pub target: Tensor,
    pub times: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SamplePair<'_>], geometry: FrameGeometry) -> Result<Self> {
        if pairs.is_empty() {
            return Err(param_err!("cannot build an empty batch"));
        }
        let shape = [pairs.len(), geometry.height, geometry.width];
        let stack = |pick: for<'s, 'a> fn(&'s SamplePair<'a>) -> &'a Tensor| {
            let data = pairs.iter().flat_map(|p| pick(p).data().iter().copied()).collect();
            Tensor::new(&shape, data)
        };
        Ok(Batch {
            prev: stack(|p| p.prev)?,
            curr: stack(|p| p.curr)?,
            target: stack(|p| p.target)?,
            times: pairs.iter().map(|p| p.t).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}
