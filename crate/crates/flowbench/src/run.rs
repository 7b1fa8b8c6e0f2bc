//! Training one or several models over a shared dataset.

use std::thread;

use flowbench_core::data::{FrameDataset, Split};
use flowbench_core::models::{FlowModel, ModelKind};
use flowbench_core::train::{evaluate, train, MetricsRecord, TrainConfig, TrainSummary};

use crate::error::Result;

/// Environment variable capping the number of concurrent training threads.
pub const THREADS_ENV: &str = "FLOWBENCH_THREADS";

pub struct ModelRun {
    pub model: FlowModel,
    pub records: Vec<MetricsRecord>,
    pub summary: TrainSummary,
    pub test: MetricsRecord,
}

/// Worker cap from `FLOWBENCH_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .or_else(|| thread::available_parallelism().ok().map(usize::from))
        .unwrap_or(1)
        .max(1)
}

/// Initialises, trains and tests one model.
pub fn run_model(kind: ModelKind, ds: &FrameDataset, cfg: &TrainConfig) -> Result<ModelRun> {
    let mut records = Vec::new();
    let (mut model, summary) = train(cfg.init_model(kind)?, ds, cfg, &mut records)?;
    let test = evaluate(&mut model, ds, Split::Test, cfg.batch_size)?;
    Ok(ModelRun { model, records, summary, test })
}

/// Runs every model in `kinds`, at most `threads` at a time. Each model
/// only reads the shared dataset, so results do not depend on scheduling.
pub fn run_models(kinds: &[ModelKind], ds: &FrameDataset, cfg: &TrainConfig, threads: usize) -> Result<Vec<ModelRun>> {
    let mut out = Vec::with_capacity(kinds.len());
    for group in kinds.chunks(threads.max(1)) {
        let results: Vec<Result<ModelRun>> = if group.len() == 1 {
            vec![run_model(group[0], ds, cfg)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = group.iter().map(|&k| s.spawn(move || run_model(k, ds, cfg))).collect();
                handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
            })
        };
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}
