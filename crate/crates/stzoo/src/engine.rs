//! Training and evaluation loops.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stzoo_core::analysis::RunRecord;
use stzoo_core::graph::WeightMap;
use stzoo_core::kernels;
use stzoo_core::optim::Sgd;
use stzoo_core::sampling::{self, Mode, SamplerConfig, Strategy};
use stzoo_core::schedule::{self, EvalProtocol, Level, TrainProtocol};
use stzoo_core::{flops, AssembledModel, Error as CoreError, VideoTensor};

use crate::checkpoint::Checkpoint;
use crate::datapipe::{self, PreprocessSpec, VideoSource};
use crate::error::{io_err, Result, StzooError};

/// Independent random stream for `(seed, purpose, a, b)`, so results do not
/// depend on the order videos are visited in.
pub fn stream_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream((a << 32) ^ b);
    rng
}

const SHUFFLE: u64 = 1;
const CLIP: u64 = 2;
const DROPOUT: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub protocol: TrainProtocol,
    pub strategy: Strategy,
    pub stride: usize,
    pub preprocess: PreprocessSpec,
    pub seed: u64,
    /// Where `metrics.csv`, `best.ckpt` and `final.ckpt` go.
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochRow>,
    pub best_epoch: usize,
}

/// Whether `label` is among the `k` largest scores (ties go to the lower
/// index).
pub fn in_top_k(scores: &[f64], label: usize, k: usize) -> bool {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.iter().take(k).any(|&i| i == label)
}

fn clip_tensor(model: &AssembledModel<f32>, t: &VideoTensor<f32>) -> VideoTensor<f32> {
    t.to_layout(model.input_layout())
}

/// Trains `model` in place with SGD, one clip per video per epoch.
pub fn train(model: &mut AssembledModel<f32>, data: &dyn VideoSource, opts: &TrainOptions) -> Result<TrainReport> {
    let p = &opts.protocol;
    p.validate()?;
    if data.is_empty() {
        return Err(StzooError::EmptyDataset);
    }
    let sampler = SamplerConfig::new(opts.strategy, model.arch.frames, Mode::Train).with_stride(opts.stride);
    sampler.validate()?;
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
    }
    let n = data.len();
    let batches = n.div_ceil(p.batch_size);
    let mut sgd = Sgd::new(p.momentum, p.weight_decay);
    let mut log = Vec::with_capacity(p.epochs);
    let mut best: Option<(f64, usize)> = None;
    for epoch in 0..p.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(opts.seed, SHUFFLE, epoch as u64, 0));
        let (mut loss_sum, mut hit1, mut hit5) = (0.0f64, 0usize, 0usize);
        let mut lr = p.lr_at_epoch(epoch as f64);
        for (b, chunk) in order.chunks(p.batch_size).enumerate() {
            let mut grads = model.params.zero_grads();
            for &v in chunk {
                let label = data.label(v);
                let mut rng = stream_rng(opts.seed, CLIP, epoch as u64, v as u64);
                let plan = sampling::sample(&sampler, data.num_frames(v), &mut rng)?;
                let frames = datapipe::load_clip(data, v, &plan)?;
                let clip = datapipe::preprocess(&frames[0], &opts.preprocess, &mut rng)?.swap_remove(0);
                let clip = clip_tensor(model, &clip);
                let mut drop_rng = stream_rng(opts.seed, DROPOUT, epoch as u64, v as u64);
                let (logits, tape) = model.forward_train_dropout(&clip, p.dropout, &mut drop_rng)?;
                if label >= model.arch.num_classes {
                    return Err(CoreError::Invalid(format!("label {label} out of range for {} classes", model.arch.num_classes)).into());
                }
                let (loss, dlogits) = kernels::softmax_cross_entropy(&logits, label);
                let loss = loss as f64;
                if !loss.is_finite() {
                    return Err(StzooError::Diverged { epoch, loss });
                }
                model.backward(tape, &dlogits, &mut grads)?;
                loss_sum += loss;
                let scores: Vec<f64> = logits.iter().map(|&z| z as f64).collect();
                hit1 += in_top_k(&scores, label, 1) as usize;
                hit5 += in_top_k(&scores, label, 5) as usize;
            }
            grads.scale(1.0 / chunk.len() as f32);
            if let Some(max) = p.clip_grad_norm {
                grads.clip_norm(max);
            }
            lr = p.lr_at_epoch(epoch as f64 + b as f64 / batches as f64);
            sgd.step(&mut model.params, &grads, lr);
        }
        let row = EpochRow {
            epoch,
            lr,
            loss: loss_sum / n as f64,
            top1: 100.0 * hit1 as f64 / n as f64,
            top5: 100.0 * hit5 as f64 / n as f64,
        };
        if opts.verbose {
            eprintln!("epoch {:>3}  lr {:.5}  loss {:.4}  top1 {:.1}  top5 {:.1}", row.epoch, row.lr, row.loss, row.top1, row.top5);
        }
        log.push(row);
        if best.is_none_or(|(t, _)| row.top1 > t) {
            best = Some((row.top1, epoch));
            if let Some(out) = &opts.out {
                Checkpoint::of(model).save(&out.join("best.ckpt"))?;
            }
        }
    }
    if let Some(out) = &opts.out {
        Checkpoint::of(model).save(&out.join("final.ckpt"))?;
        write_metrics(&out.join("metrics.csv"), &log)?;
    }
    Ok(TrainReport { log, best_epoch: best.map_or(0, |b| b.1) })
}

pub fn write_metrics(path: &Path, log: &[EpochRow]) -> Result<()> {
    let err = |source| StzooError::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in log {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub frames: usize,
    pub initial: WeightMap<f32>,
    pub final_weights: WeightMap<f32>,
    pub report: TrainReport,
}

/// Trains on each frame count of `chain` in turn; every stage starts from
/// the weights the previous one ended with. Stage outputs go to
/// `<out>/stage_<frames>/`.
pub fn train_progressive(
    mut model: AssembledModel<f32>,
    chain: &[usize],
    data: &dyn VideoSource,
    opts: &TrainOptions,
) -> Result<(AssembledModel<f32>, Vec<Stage>)> {
    let first = *chain.first().ok_or_else(|| CoreError::BrokenChain("empty chain".into()))?;
    if chain.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::BrokenChain(format!("chain {chain:?} is not increasing")).into());
    }
    if first != model.arch.frames {
        return Err(CoreError::BrokenChain(format!("chain starts at {first} frames but the model takes {}", model.arch.frames)).into());
    }
    let mut stages = Vec::with_capacity(chain.len());
    for (i, &k) in chain.iter().enumerate() {
        if i > 0 {
            model = model.retarget_frames(k)?;
        }
        let initial = model.params.to_weight_map();
        let mut stage_opts = opts.clone();
        stage_opts.out = opts.out.as_ref().map(|o| o.join(format!("stage_{k}")));
        let report = train(&mut model, data, &stage_opts)?;
        stages.push(Stage { frames: k, initial, final_weights: model.params.to_weight_map(), report });
    }
    Ok((model, stages))
}

/// Resumes a chain from the checkpoint of stage `chain[i-1]` under `out`.
pub fn resume_stage(out: &Path, chain: &[usize], i: usize) -> Result<AssembledModel<f32>> {
    if i == 0 || i >= chain.len() {
        return Err(CoreError::BrokenChain(format!("stage {i} has no predecessor in {chain:?}")).into());
    }
    let prev = out.join(format!("stage_{}", chain[i - 1])).join("final.ckpt");
    if !prev.exists() {
        return Err(CoreError::BrokenChain(format!("missing prior checkpoint {}", prev.display())).into());
    }
    let model = Checkpoint::load(&prev)?.into_model(None, false, &[])?;
    Ok(model.retarget_frames(chain[i])?)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub strategy: Strategy,
    pub stride: usize,
    pub protocol: EvalProtocol,
    pub preprocess: PreprocessSpec,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub record: RunRecord,
    /// Averaged class probabilities per video.
    pub probabilities: Vec<Vec<f64>>,
    pub predictions_per_video: usize,
}

/// Softmax of one clip's logits, in double precision.
pub fn probabilities(logits: &[f32]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    kernels::softmax(&z)
}

pub fn evaluate(model: &AssembledModel<f32>, data: &dyn VideoSource, opts: &EvalOptions) -> Result<Evaluation> {
    let proto = opts.protocol;
    proto.validate()?;
    if data.is_empty() {
        return Err(StzooError::EmptyDataset);
    }
    if !opts.preprocess.is_eval() {
        return Err(StzooError::Invalid(format!("{:?} is not an evaluation protocol", opts.preprocess.protocol)));
    }
    let crops = match proto.level {
        Level::Clip if proto.crops != 1 || proto.clips != 1 => {
            return Err(StzooError::Invalid("clip-level evaluation uses one clip and one crop".into()))
        }
        _ => proto.crops,
    };
    if opts.preprocess.crops != crops {
        return Err(StzooError::Invalid(format!(
            "{:?} produces {} crops but the protocol asks for {crops}",
            opts.preprocess.protocol, opts.preprocess.crops
        )));
    }
    let mode = match proto.level {
        Level::Clip => Mode::EvalClip,
        Level::Video => Mode::EvalVideo,
    };
    let sampler = SamplerConfig::new(opts.strategy, model.arch.frames, mode).with_stride(opts.stride).with_clips(proto.clips);
    let mut probs = Vec::with_capacity(data.len());
    let (mut hit1, mut hit5) = (0usize, 0usize);
    let mut counted = 0;
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    for v in 0..data.len() {
        let plan = sampling::sample(&sampler, data.num_frames(v), &mut no_rng)?;
        let clips = datapipe::load_clip(data, v, &plan)?;
        let mut preds = Vec::with_capacity(proto.predictions_per_video());
        for frames in &clips {
            for crop in datapipe::preprocess(frames, &opts.preprocess, &mut no_rng)? {
                preds.push(probabilities(&model.forward(&clip_tensor(model, &crop))?));
            }
        }
        if preds.len() != proto.predictions_per_video() {
            return Err(StzooError::Invalid(format!("{} predictions for a {}-prediction protocol", preds.len(), proto.predictions_per_video())));
        }
        counted = preds.len();
        let p = schedule::average_probabilities(&preds);
        let label = data.label(v);
        hit1 += in_top_k(&p, label, 1) as usize;
        hit5 += in_top_k(&p, label, 5) as usize;
        probs.push(p);
    }
    let n = data.len() as f64;
    let record = RunRecord {
        family: model.arch.family,
        backbone: model.arch.backbone,
        frames: model.arch.frames,
        temporal_pool: model.arch.temporal_pool,
        dataset: opts.dataset.clone(),
        sampling: opts.strategy,
        level: proto.level,
        clips: proto.clips,
        crops: proto.crops,
        top1: 100.0 * hit1 as f64 / n,
        top5: 100.0 * hit5 as f64 / n,
        flops: flops::count_flops(model, [opts.preprocess.crop; 2])?,
        params: flops::count_params(model),
    };
    Ok(Evaluation { record, probabilities: probs, predictions_per_video: counted })
}
