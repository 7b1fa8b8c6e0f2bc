//! Training protocol (Adam on the MSE objective) and test evaluation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::data::{batch_iter, make_pairs, Batch, FrameDataset, Split};
use crate::error::{contract_err, dim_err, param_err, Result};
use crate::metrics::{psnr_from_mse, ssim_frames, DATA_RANGE};
use crate::models::{FlowModel, FrameGeometry, ModelConfig, ModelKind};
use crate::nn::{bind_parameters, collect_grads, zero_grads, Parameters, Phase};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Adam optimiser with bias-corrected moments, kept per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: BTreeMap::new() }
    }

    /// First and second moment buffers of parameter `name`.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every parameter of `model` from its `grad`.
    pub fn step(&mut self, model: &mut dyn Parameters) -> Result<()> {
        let mut missing = None;
        model.visit(&mut |name, p| {
            let ok = p.grad.as_ref().is_some_and(|g| g.len() == p.numel());
            if !ok && missing.is_none() {
                missing = Some(String::from(name));
            }
        });
        if let Some(name) = missing {
            return Err(contract_err!("parameter `{}` has no gradient", name));
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let moments = &mut self.moments;
        model.visit_mut(&mut |name, p| {
            let n = p.numel();
            let (m, v) = moments.entry(String::from(name)).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = p.grad.take().expect("checked above");
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
            p.grad = Some(grad);
        });
        Ok(())
    }
}

/// One logged point: training step or test evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub model: ModelKind,
    pub mse: f64,
    /// dB; `+∞` when the prediction is exact.
    pub psnr: f64,
    pub ssim: f64,
}

/// Receiver for per-step metrics.
pub trait MetricsSink {
    fn record(&mut self, record: MetricsRecord);
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: MetricsRecord) {
        self.push(record);
    }
}

/// Discards every record.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: MetricsRecord) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub dropout_p: f64,
    pub shuffle: bool,
    pub geometry: FrameGeometry,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 12,
            epochs: 20,
            lr: 0.001,
            seed: 7,
            dropout_p: 0.1,
            shuffle: true,
            geometry: FrameGeometry::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.lr > 0.0) {
            return Err(param_err!(
                "batch size, epochs and learning rate must be positive (got {}, {}, {})",
                self.batch_size,
                self.epochs,
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(param_err!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    /// Standard architecture of `kind` at this geometry and dropout.
    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        ModelConfig::standard(kind, self.geometry).with_dropout(self.dropout_p)
    }

    /// Freshly initialised model of `kind`, drawn from the seed's
    /// per-model `init` stream.
    pub fn init_model(&self, kind: ModelKind) -> Result<FlowModel> {
        FlowModel::new(self.model_config(kind), &mut init_stream(self.seed, kind))
    }

    /// `epochs · ceil(train_pairs / batch_size)`.
    pub fn total_steps(&self, train_pairs: usize) -> usize {
        self.epochs * train_pairs.div_ceil(self.batch_size)
    }
}

pub fn init_stream(seed: u64, kind: ModelKind) -> Rng {
    stream(seed, &alloc::format!("init/{}", kind.name()))
}

/// Owns a model and its optimiser state; applies one Adam step per batch.
pub struct Trainer {
    pub model: FlowModel,
    pub adam: AdamState,
    dropout_rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: FlowModel, lr: f64, seed: u64) -> Self {
        Trainer { model, adam: AdamState::new(lr), dropout_rng: stream(seed, "dropout"), step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Forward, MSE, backward, Adam update, gradient reset. Metrics are
    /// computed on this batch's (training-mode) prediction.
    pub fn step(&mut self, batch: &Batch) -> Result<MetricsRecord> {
        let mut tape = Tape::new();
        bind_parameters(&mut self.model, &mut tape);
        let prev = tape.leaf(&batch.prev);
        let curr = tape.leaf(&batch.curr);
        let target = tape.leaf(&batch.target);
        let pred = self.model.forward(&mut tape, prev, curr, &mut Phase::Train(&mut self.dropout_rng))?;
        let loss = tape.mse_loss(pred, target)?;
        tape.backward(loss)?;
        collect_grads(&mut self.model, &tape);
        self.adam.step(&mut self.model)?;
        zero_grads(&mut self.model);
        self.step += 1;

        let mse = tape.scalar(loss);
        let prediction = tape.to_tensor(pred);
        Ok(MetricsRecord {
            step: self.step,
            model: self.model.kind(),
            mse,
            psnr: psnr_from_mse(mse, DATA_RANGE)?,
            ssim: ssim_frames(&prediction, &batch.target, DATA_RANGE)?,
        })
    }
}

/// Per-epoch mean training loss and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub epoch_mean_loss: Vec<f64>,
}

fn check_geometry(model: &FlowModel, ds: &FrameDataset, cfg: &TrainConfig) -> Result<()> {
    if model.geometry() != ds.geometry() || cfg.geometry != ds.geometry() {
        let (m, d, c) = (model.geometry(), ds.geometry(), cfg.geometry);
        return Err(dim_err!(
            "geometry mismatch: model {}×{}, dataset {}×{}, config {}×{}",
            m.height,
            m.width,
            d.height,
            d.width,
            c.height,
            c.width
        ));
    }
    Ok(())
}

/// Trains on the training split for `cfg.epochs`, emitting one record per
/// step. Shuffling and dropout draw from the seed's `shuffle` and `dropout`
/// streams, so runs are reproducible.
pub fn train(model: FlowModel, ds: &FrameDataset, cfg: &TrainConfig, sink: &mut dyn MetricsSink) -> Result<(FlowModel, TrainSummary)> {
    cfg.validate()?;
    check_geometry(&model, ds, cfg)?;
    let pairs = make_pairs(ds, Split::Train);
    if pairs.is_empty() {
        return Err(param_err!("training split of {} frames yields no pairs", ds.split_index()));
    }
    let mut trainer = Trainer::new(model, cfg.lr, cfg.seed);
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = batch_iter(&pairs, cfg.batch_size, cfg.shuffle.then_some(&mut shuffle_rng))?;
        let (mut total, mut count) = (0.0, 0);
        for group in order {
            let batch = Batch::from_pairs(&group, ds.geometry())?;
            let record = trainer.step(&batch)?;
            if !record.mse.is_finite() {
                return Err(contract_err!("non-finite loss at step {}", record.step));
            }
            total += record.mse;
            count += 1;
            sink.record(record);
        }
        epoch_mean_loss.push(total / count as f64);
    }
    let steps = trainer.steps_taken();
    Ok((trainer.model, TrainSummary { steps, epoch_mean_loss }))
}

/// Evaluation over every pair of `split`: MSE pooled over all elements,
/// PSNR from the pooled MSE, SSIM averaged per frame. Independent of
/// `batch_size`.
pub fn evaluate(model: &mut FlowModel, ds: &FrameDataset, split: Split, batch_size: usize) -> Result<MetricsRecord> {
    if model.geometry() != ds.geometry() {
        return Err(dim_err!("model and dataset geometries differ"));
    }
    let pairs = make_pairs(ds, split);
    if pairs.is_empty() {
        return Err(param_err!("{:?} split is empty", split));
    }
    let (mut sse, mut elements, mut ssim_sum) = (0.0, 0usize, 0.0);
    for group in batch_iter(&pairs, batch_size, None)? {
        let batch = Batch::from_pairs(&group, ds.geometry())?;
        let pred = model.predict(&batch.prev, &batch.curr)?;
        sse += pred.data().iter().zip(batch.target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        elements += pred.numel();
        ssim_sum += ssim_frames(&pred, &batch.target, DATA_RANGE)? * batch.len() as f64;
    }
    let mse = sse / elements as f64;
    Ok(MetricsRecord {
        step: 0,
        model: model.kind(),
        mse,
        psnr: psnr_from_mse(mse, DATA_RANGE)?,
        ssim: ssim_sum / pairs.len() as f64,
    })
}

/// Predictions for every pair of `split`, in order, as `[H×W]` frames.
pub fn predict_split(model: &mut FlowModel, ds: &FrameDataset, split: Split) -> Result<Vec<(usize, Tensor)>> {
    let g = ds.geometry();
    let mut out = Vec::new();
    for pair in make_pairs(ds, split) {
        let prev = pair.prev.clone().reshape(&[1, g.height, g.width])?;
        let curr = pair.curr.clone().reshape(&[1, g.height, g.width])?;
        let pred = model.predict(&prev, &curr)?.reshape(&[g.height, g.width])?;
        out.push((pair.t, pred));
    }
    Ok(out)
}
