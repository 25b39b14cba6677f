//! Adam, the step learning-rate schedule, seeded patch batching and the
//! training loop with epoch checkpoints.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err};
use crate::image::{Image, LightField};
use crate::lightfield::{crop_lf, patch_positions, stack_channels, upsample2x, upsample_lf2x};
use crate::model::weights::{Header, WeightFile, OPTIM_PREFIX};
use crate::model::{DeOccNet, NamedTensor};
use crate::nn::{Mode, Tape, Tensor};
use crate::rng::{derived_rng, domain};
use crate::{Error, Result, Scalar};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("Adam betas must lie in [0, 1)"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(invalid!("Adam lr must be non-negative and eps positive"));
        }
        Ok(())
    }
}

/// Adam state: one first and second moment buffer per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        })
    }

    /// One update with learning rate `lr`. Non-finite gradients abort the step
    /// before any state changes.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "Adam tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(shape_err!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let g = gi.to_f64();
                let m_new = beta1 * mi.to_f64() + (1.0 - beta1) * g;
                let v_new = beta2 * vi.to_f64() + (1.0 - beta2) * g * g;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let update = lr * (m_new / c1) / (libm::sqrt(v_new / c2) + eps);
                *pi = T::from_f64(pi.to_f64() - update);
            }
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch: usize,
    pub stride: usize,
    /// Also train on the 2x bilinear upsampling of every patch.
    pub upsample_aug: bool,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate from epoch `epochs / 2` on.
    pub lr_decayed: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            patch: 64,
            stride: 32,
            upsample_aug: false,
            epochs: 20,
            lr: 1e-3,
            lr_decayed: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: batch 8, 224 patches with stride 112, 200 epochs, upsampling on.
    pub fn full() -> Self {
        Self {
            batch_size: 8,
            patch: 224,
            stride: 112,
            upsample_aug: true,
            epochs: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(16) {
            return Err(invalid!(
                "patch {} must be a positive multiple of 16",
                self.patch
            ));
        }
        if self.stride == 0 {
            return Err(invalid!("stride must be at least 1"));
        }
        self.adam.validate()
    }
}

/// Learning rate for `epoch`: `cfg.lr` before `cfg.epochs / 2`, `cfg.lr_decayed` after.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.epochs / 2 {
        cfg.lr
    } else {
        cfg.lr_decayed
    }
}

/// An occluded light field and its clean center view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub lf: LightField,
    pub gt: Image,
}

/// Location of one training patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRef {
    pub sample: usize,
    pub top: usize,
    pub left: usize,
    pub upsampled: bool,
}

impl PatchRef {
    /// Side length of the materialized patch.
    pub fn size(&self, patch: usize) -> usize {
        if self.upsampled {
            2 * patch
        } else {
            patch
        }
    }
}

/// One batch: `[n, rows*cols*3, p, p]` inputs and `[n, 3, p, p]` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub patches: Vec<PatchRef>,
}

fn check_dataset(data: &[Sample], cfg: &TrainConfig) -> Result<()> {
    let first = data.first().ok_or_else(|| invalid!("dataset is empty"))?;
    for (i, s) in data.iter().enumerate() {
        if s.lf.channels() != 3 || s.gt.channels() != 3 {
            return Err(invalid!("sample {i} is not RGB"));
        }
        if (s.lf.rows(), s.lf.cols()) != (first.lf.rows(), first.lf.cols()) {
            return Err(invalid!("sample {i} has a different angular grid"));
        }
        if (s.gt.height(), s.gt.width()) != (s.lf.height(), s.lf.width()) {
            return Err(shape_err!(
                "sample {i} groundtruth does not match its views"
            ));
        }
        if s.lf.height() < cfg.patch || s.lf.width() < cfg.patch {
            return Err(invalid!(
                "sample {i} ({}x{}) is smaller than the {} patch",
                s.lf.height(),
                s.lf.width(),
                cfg.patch
            ));
        }
    }
    Ok(())
}

/// Batch layout of `epoch`: patches shuffled by a seed derived from
/// `(seed, epoch)`, then grouped by size in shuffled order. Leftover partial
/// batches come last.
pub fn plan_epoch(
    data: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<PatchRef>>> {
    cfg.validate()?;
    check_dataset(data, cfg)?;
    let mut refs = Vec::new();
    for (i, s) in data.iter().enumerate() {
        for (top, left) in patch_positions(s.lf.height(), s.lf.width(), cfg.patch, cfg.stride) {
            refs.push(PatchRef {
                sample: i,
                top,
                left,
                upsampled: false,
            });
            if cfg.upsample_aug {
                refs.push(PatchRef {
                    sample: i,
                    top,
                    left,
                    upsampled: true,
                });
            }
        }
    }
    refs.shuffle(&mut derived_rng(seed, domain::EPOCH, epoch as u64));
    let mut batches = Vec::new();
    let mut pending: [Vec<PatchRef>; 2] = [Vec::new(), Vec::new()];
    for r in refs {
        let bucket = &mut pending[r.upsampled as usize];
        bucket.push(r);
        if bucket.len() == cfg.batch_size {
            batches.push(core::mem::take(bucket));
        }
    }
    batches.extend(pending.into_iter().filter(|b| !b.is_empty()));
    Ok(batches)
}

/// Crops (and optionally upsamples) one patch: stacked views plus aligned groundtruth.
pub fn materialize_patch(
    data: &[Sample],
    r: &PatchRef,
    patch: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let s = data
        .get(r.sample)
        .ok_or_else(|| invalid!("patch refers to missing sample {}", r.sample))?;
    let mut lf = crop_lf(&s.lf, r.top, r.left, patch, patch)?;
    let mut gt = s.gt.crop(r.top, r.left, patch, patch)?;
    if r.upsampled {
        lf = upsample_lf2x(&lf)?;
        gt = upsample2x(&gt)?;
    }
    let (h, w, c) = gt.dims();
    Ok((
        stack_channels(&lf),
        Tensor::from_vec([c, h, w].to_vec(), gt.into_data())?,
    ))
}

pub fn materialize(data: &[Sample], refs: &[PatchRef], patch: usize) -> Result<Batch> {
    let mut inputs = Vec::with_capacity(refs.len());
    let mut targets = Vec::with_capacity(refs.len());
    for r in refs {
        let (x, y) = materialize_patch(data, r, patch)?;
        inputs.push(x);
        targets.push(y);
    }
    Ok(Batch {
        input: Tensor::stack(&inputs.iter().collect::<Vec<_>>())?,
        target: Tensor::stack(&targets.iter().collect::<Vec<_>>())?,
        patches: refs.to_vec(),
    })
}

/// Batches of `epoch` in seed-determined order, materialized lazily.
pub fn make_batches<'a>(
    data: &'a [Sample],
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let plan = plan_epoch(data, cfg, seed, epoch)?;
    let patch = cfg.patch;
    Ok(plan
        .into_iter()
        .map(move |refs| materialize(data, &refs, patch)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-step losses plus the reason for an early stop, if any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
    pub aborted: Option<String>,
}

/// Aggregate view of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub smoothing_window: usize,
    pub smoothed_initial_loss: Option<f64>,
    pub smoothed_final_loss: Option<f64>,
    pub aborted: Option<String>,
}

impl TrainingLog {
    fn mean(records: &[StepRecord]) -> Option<f64> {
        (!records.is_empty())
            .then(|| records.iter().map(|r| r.loss).sum::<f64>() / records.len() as f64)
    }

    /// Mean loss of the first `k` steps.
    pub fn head_mean(&self, k: usize) -> Option<f64> {
        Self::mean(&self.records[..k.min(self.records.len())])
    }

    /// Mean loss of the last `k` steps.
    pub fn tail_mean(&self, k: usize) -> Option<f64> {
        Self::mean(&self.records[self.records.len().saturating_sub(k)..])
    }

    pub fn summary(&self, window: usize) -> TrainingSummary {
        TrainingSummary {
            steps: self.records.last().map_or(0, |r| r.step + 1),
            initial_loss: self.records.first().map(|r| r.loss),
            final_loss: self.records.last().map(|r| r.loss),
            smoothing_window: window,
            smoothed_initial_loss: self.head_mean(window),
            smoothed_final_loss: self.tail_mean(window),
            aborted: self.aborted.clone(),
        }
    }

    /// `step,epoch,lr,loss` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.lr, r.loss));
        }
        out
    }
}

/// Resumable optimizer position: the next epoch to run and the steps taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: Adam<f32>,
    pub epoch: usize,
    pub step: u64,
}

impl TrainState {
    pub fn fresh(net: &DeOccNet<f32>, cfg: &TrainConfig) -> Result<Self> {
        let params: Vec<Tensor<f32>> = net.params().iter().map(|p| p.value.clone()).collect();
        Ok(Self {
            adam: Adam::new(
                AdamConfig {
                    lr: cfg.lr,
                    ..cfg.adam
                },
                &params,
            )?,
            epoch: 0,
            step: 0,
        })
    }
}

/// Result of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub state: TrainState,
}

/// What the checkpoint callback is told.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    EpochDone,
    /// `max_steps` was reached mid-epoch.
    StepLimit,
}

/// One optimizer step on `batch`; returns the loss. On failure the network
/// (parameters and batch-norm statistics) is left as it was.
pub fn train_step(
    net: &mut DeOccNet<f32>,
    adam: &mut Adam<f32>,
    batch: &Batch,
    lr: f64,
) -> Result<f64> {
    let stats_before = net.running_stats().to_vec();
    let result = (|| {
        let mut tape = Tape::new();
        let x = tape.constant(batch.input.clone());
        let f = net.forward(&mut tape, x, Mode::Train)?;
        let target = tape.constant(batch.target.clone());
        let loss_var = tape.mse_loss(f.output, target)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss ({loss})")));
        }
        let mut grads = tape.backward(loss_var)?;
        let g: Vec<Tensor<f32>> = f
            .params
            .iter()
            .zip(net.params())
            .map(|(&v, p)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect();
        let mut params: Vec<Tensor<f32>> = net.params().iter().map(|p| p.value.clone()).collect();
        adam.step(&mut params, &g, lr)?;
        net.set_params(params)?;
        Ok(loss)
    })();
    if result.is_err() {
        net.running_stats_mut().clone_from_slice(&stats_before);
    }
    result
}

/// Trains `net` on `data`, resuming from `state` if given.
///
/// `on_checkpoint` runs after every completed epoch (and when `max_steps`
/// stops a run mid-epoch). A non-finite loss or gradient stops training with
/// the network at its last good state; the reason is recorded in the log.
pub fn train(
    net: &mut DeOccNet<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    state: Option<TrainState>,
    mut on_checkpoint: impl FnMut(&DeOccNet<f32>, &TrainState, &TrainingLog, Progress) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(data, cfg)?;
    let [rows, cols] = net.config().angular;
    if (data[0].lf.rows(), data[0].lf.cols()) != (rows, cols) {
        return Err(invalid!(
            "network expects {rows}x{cols} views, dataset has {}x{}",
            data[0].lf.rows(),
            data[0].lf.cols()
        ));
    }
    let m = net.config().spatial_multiple();
    if !cfg.patch.is_multiple_of(m) {
        return Err(invalid!("patch {} must be a multiple of {m}", cfg.patch));
    }
    let mut state = match state {
        Some(s) => s,
        None => TrainState::fresh(net, cfg)?,
    };
    let mut log = TrainingLog::default();
    let limit = cfg.max_steps.unwrap_or(u64::MAX);
    // every epoch plans the same number of batches
    let per_epoch = plan_epoch(data, cfg, cfg.seed, 0)?.len() as u64;
    while state.epoch < cfg.epochs && state.step < limit {
        let lr = lr_at(state.epoch, cfg);
        let done = state.step.saturating_sub(state.epoch as u64 * per_epoch);
        for batch in make_batches(data, cfg, cfg.seed, state.epoch)?.skip(done as usize) {
            if state.step >= limit {
                break;
            }
            let batch = batch?;
            match train_step(net, &mut state.adam, &batch, lr) {
                Ok(loss) => log.records.push(StepRecord {
                    step: state.step,
                    epoch: state.epoch,
                    lr,
                    loss,
                }),
                Err(Error::NonFinite(what)) => {
                    log.aborted = Some(format!("non-finite value at step {}: {what}", state.step));
                    return Ok(TrainOutcome { log, state });
                }
                Err(e) => return Err(e),
            }
            state.step += 1;
        }
        if state.step < (state.epoch as u64 + 1) * per_epoch {
            on_checkpoint(net, &state, &log, Progress::StepLimit)?;
            break;
        }
        state.epoch += 1;
        on_checkpoint(net, &state, &log, Progress::EpochDone)?;
    }
    Ok(TrainOutcome { log, state })
}

/// Checkpoint metadata stored in the weights header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub adam_t: u64,
    pub adam: AdamConfig,
    pub train: TrainConfig,
}

const M_PREFIX: &str = "m/";
const V_PREFIX: &str = "v/";

/// Weights plus optimizer state in one file.
pub fn checkpoint_file(net: &DeOccNet<f32>, state: &TrainState, cfg: &TrainConfig) -> WeightFile {
    let mut file = net.to_weight_file();
    let meta = CheckpointMeta {
        epoch: state.epoch,
        step: state.step,
        adam_t: state.adam.t,
        adam: state.adam.config,
        train: cfg.clone(),
    };
    file.header = Header {
        config: net.config().clone(),
        checkpoint: Some(serde_json::to_value(meta).expect("checkpoint meta serializes")),
    };
    for (prefix, bufs) in [(M_PREFIX, &state.adam.m), (V_PREFIX, &state.adam.v)] {
        for (p, b) in net.params().iter().zip(bufs.iter()) {
            file.tensors.push(NamedTensor {
                name: format!("{OPTIM_PREFIX}{prefix}{}", p.name),
                value: b.clone(),
            });
        }
    }
    file
}

/// Restores network, optimizer state and training config from a checkpoint.
pub fn restore_checkpoint(file: &WeightFile) -> Result<(DeOccNet<f32>, TrainState, TrainConfig)> {
    let net = DeOccNet::<f32>::from_weight_file(file)?;
    let meta: CheckpointMeta = file
        .header
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Format("weights file carries no optimizer state".into()))
        .and_then(|v| {
            serde_json::from_value(v)
                .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))
        })?;
    let find = |prefix: &str, p: &NamedTensor<f32>| -> Result<Tensor<f32>> {
        let name = format!("{OPTIM_PREFIX}{prefix}{}", p.name);
        let t = file
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.value.shape() != p.value.shape() {
            return Err(Error::Format(format!("tensor {name} has the wrong shape")));
        }
        Ok(t.value.clone())
    };
    let m = net
        .params()
        .iter()
        .map(|p| find(M_PREFIX, p))
        .collect::<Result<Vec<_>>>()?;
    let v = net
        .params()
        .iter()
        .map(|p| find(V_PREFIX, p))
        .collect::<Result<Vec<_>>>()?;
    let state = TrainState {
        adam: Adam {
            config: meta.adam,
            m,
            v,
            t: meta.adam_t,
        },
        epoch: meta.epoch,
        step: meta.step,
    };
    Ok((net, state, meta.train))
}
