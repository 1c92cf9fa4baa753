//! Desk-scale experiments on the synthetic tasks: train a TinyNet model
//! from scratch and report held-out accuracy.

use stzoo_core::sampling::Strategy;
use stzoo_core::schedule::{EvalProtocol, TrainProtocol};
use stzoo_core::{assemble, ArchSpec, Init};

use crate::datapipe::{self, PreprocessSpec, Protocol, Task};
use crate::engine::{self, EvalOptions, TrainOptions, TrainReport};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub task: Task,
    pub frames: usize,
    pub size: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub protocol: TrainProtocol,
    pub seed: u64,
    pub verbose: bool,
}

impl DeskConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            frames: 8,
            size: 32,
            train_pairs: 48,
            test_pairs: 32,
            // smaller batches than the preset: twice the SGD steps per epoch, which
            // TAM needs to break its identity initialisation within 30 epochs
            protocol: TrainProtocol { batch_size: 8, clip_grad_norm: Some(20.0), ..TrainProtocol::desk() },
            seed: 0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskResult {
    pub train: TrainReport,
    pub test_top1: f64,
}

/// Trains `spec` (frames and classes are taken from `cfg`) on a fresh
/// synthetic split and evaluates it clip-level on held-out twin pairs.
pub fn run(spec: ArchSpec, cfg: &DeskConfig) -> Result<DeskResult> {
    let spec = ArchSpec { frames: cfg.frames, num_classes: 2, ..spec };
    let train_set = datapipe::make_synthetic(cfg.task, 2 * cfg.train_pairs, cfg.frames, cfg.size, cfg.seed)?;
    let test_set = datapipe::make_synthetic(cfg.task, 2 * cfg.test_pairs, cfg.frames, cfg.size, cfg.seed ^ 0x5eed_7e57)?;
    let mut model = assemble(&spec, Init::Scratch { seed: cfg.seed })?;
    let preprocess = PreprocessSpec::new(Protocol::MiniEval).scaled(cfg.size);
    let opts = TrainOptions {
        protocol: cfg.protocol.clone(),
        strategy: Strategy::Uniform,
        stride: 1,
        preprocess,
        seed: cfg.seed,
        out: None,
        verbose: cfg.verbose,
    };
    let train = engine::train(&mut model, &train_set, &opts)?;
    let eval = engine::evaluate(
        &model,
        &test_set,
        &EvalOptions { strategy: Strategy::Uniform, stride: 1, protocol: EvalProtocol::clip(), preprocess, dataset: format!("{:?}", cfg.task) },
    )?;
    Ok(DeskResult { train, test_top1: eval.record.top1 })
}
