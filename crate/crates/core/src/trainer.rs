//! Mini-batch SGD with momentum and weight decay.

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::error::{FanError, Result};
use crate::evaluator::{evaluate, FrameMode};
use crate::fanhead::{backward_with_logits, predict, FanGradients, FanParams, Mode};
use crate::numkernel::Matrix;
use crate::sampler::{sample_training, stream};
use crate::scalar::Scalar;

/// Stream tags under the run seed.
pub(crate) const STREAM_INIT: u64 = 0x1417;
pub(crate) const STREAM_SHUFFLE: u64 = 0x5afe;
pub(crate) const STREAM_FRAMES: u64 = 0xf4a3;

/// Piecewise-constant learning rate: `(first epoch, lr)` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    steps: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        match steps.first() {
            None => return Err(FanError::Config("learning-rate schedule is empty".into())),
            Some(&(start, _)) if start != 0 => {
                return Err(FanError::Config(
                    "learning-rate schedule must start at epoch 0".into(),
                ))
            }
            _ => {}
        }
        if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(FanError::Config(
                "schedule epochs must be strictly increasing".into(),
            ));
        }
        if steps.iter().any(|&(_, lr)| !(lr.is_finite() && lr >= 0.0)) {
            return Err(FanError::Config(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(vec![(0, lr)])
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }
}

/// Learning rate of the latest step whose start epoch is `<= epoch`.
pub fn lr_at(schedule: &Schedule, epoch: usize) -> f64 {
    schedule
        .steps
        .iter()
        .take_while(|&&(start, _)| start <= epoch)
        .last()
        .map(|&(_, lr)| lr)
        .expect("schedule starts at epoch 0")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameSampling {
    /// One random frame from each of `K` segments.
    Segments(usize),
    /// Every frame of the video.
    AllFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub sampling: FrameSampling,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub total_epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    /// When false, `q0` and `q1` are frozen and only the classifier learns.
    pub train_attention: bool,
    /// Threads for per-instance gradients; results are reduced in
    /// instance order regardless of this value.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    CkPlus,
    Afew,
    SynthDefault,
}

impl std::str::FromStr for Preset {
    type Err = FanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ck+" | "ckplus" => Ok(Preset::CkPlus),
            "afew" => Ok(Preset::Afew),
            "synth-default" => Ok(Preset::SynthDefault),
            other => Err(FanError::Config(format!(
                "unknown preset {other:?} (expected ck+, afew or synth-default)"
            ))),
        }
    }
}

impl TrainConfig {
    fn base(schedule: Vec<(usize, f64)>, total_epochs: usize) -> Self {
        Self {
            batch_size: 48,
            sampling: FrameSampling::Segments(3),
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::new(schedule).expect("preset schedule is valid"),
            total_epochs,
            seed: 0,
            mode: Mode::Full,
            train_attention: true,
            workers: 1,
        }
    }

    /// lr 0.1, 0.02 from epoch 30, stop after 60 epochs.
    pub fn ck_plus() -> Self {
        Self::base(vec![(0, 0.1), (30, 0.02)], 60)
    }

    /// lr 4e-6, 8e-7 from epoch 60, 1.6e-7 from epoch 120, stop after 180.
    pub fn afew() -> Self {
        Self::base(vec![(0, 4e-6), (60, 8e-7), (120, 1.6e-7)], 180)
    }

    /// Synthetic planted-peak task: lr 0.03, 0.006 from epoch 20, 30 epochs.
    pub fn synth_default() -> Self {
        Self {
            seed: 7,
            ..Self::base(vec![(0, 0.03), (20, 0.006)], 30)
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::CkPlus => Self::ck_plus(),
            Preset::Afew => Self::afew(),
            Preset::SynthDefault => Self::synth_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FanError::Config("batch size must be positive".into()));
        }
        if self.sampling == FrameSampling::Segments(0) {
            return Err(FanError::Config(
                "frames per instance must be positive".into(),
            ));
        }
        for (what, v) in [
            ("momentum", self.momentum),
            ("weight decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FanError::Config(format!(
                    "{what} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub velocity: FanGradients<T>,
}

impl<T: Scalar> OptState<T> {
    pub fn new(params: &FanParams<T>) -> Self {
        Self {
            velocity: FanGradients::zeros_like(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `g = grad + wd·param` (no decay when `decay` is false),
/// `v = momentum·v + g`, `param = param - lr·v`.
/// Returns the new parameter and velocity values without committing them.
pub fn momentum_update<T: Scalar>(
    param: &[T],
    grad: &[T],
    velocity: &[T],
    hyper: SgdHyper,
    decay: bool,
) -> (Vec<T>, Vec<T>) {
    let lr = T::lit(hyper.lr);
    let mu = T::lit(hyper.momentum);
    let wd = if decay {
        T::lit(hyper.weight_decay)
    } else {
        T::zero()
    };
    let mut new_param = Vec::with_capacity(param.len());
    let mut new_vel = Vec::with_capacity(param.len());
    for ((&p, &g), &v) in param.iter().zip(grad).zip(velocity) {
        let g = g + wd * p;
        let v = mu * v + g;
        new_vel.push(v);
        new_param.push(p - lr * v);
    }
    (new_param, new_vel)
}

fn all_finite<T: Scalar>(bufs: &[&[T]]) -> bool {
    bufs.iter().all(|b| b.iter().all(|x| x.is_finite()))
}

/// One SGD step on every parameter. The classifier bias is not decayed.
/// On a non-finite result nothing is modified.
pub fn sgd_step<T: Scalar>(
    params: &mut FanParams<T>,
    grads: &FanGradients<T>,
    state: &mut OptState<T>,
    hyper: SgdHyper,
) -> Result<()> {
    sgd_step_masked(params, grads, state, hyper, true)
}

fn sgd_step_masked<T: Scalar>(
    params: &mut FanParams<T>,
    grads: &FanGradients<T>,
    state: &mut OptState<T>,
    hyper: SgdHyper,
    update_attention: bool,
) -> Result<()> {
    let vel = &state.velocity;
    let (q0, v_q0) = if update_attention {
        momentum_update(&params.q0, &grads.q0, &vel.q0, hyper, true)
    } else {
        (params.q0.to_vec(), vel.q0.clone())
    };
    let (q1, v_q1) = if update_attention {
        momentum_update(&params.q1, &grads.q1, &vel.q1, hyper, true)
    } else {
        (params.q1.to_vec(), vel.q1.clone())
    };
    let (w, v_w) = momentum_update(
        params.class_w.as_slice(),
        &grads.class_w,
        &vel.class_w,
        hyper,
        true,
    );
    let (b, v_b) = momentum_update(&params.class_b, &grads.class_b, &vel.class_b, hyper, false);
    if !all_finite(&[&q0, &q1, &w, &b, &v_q0, &v_q1, &v_w, &v_b]) {
        return Err(FanError::Numeric(
            "SGD update produced a non-finite value".into(),
        ));
    }
    params.q0.as_mut_slice().copy_from_slice(&q0);
    params.q1.as_mut_slice().copy_from_slice(&q1);
    params.class_w.as_mut_slice().copy_from_slice(&w);
    params.class_b.as_mut_slice().copy_from_slice(&b);
    state.velocity = FanGradients {
        q0: v_q0,
        q1: v_q1,
        class_w: v_w,
        class_b: v_b,
    };
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub steps: usize,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        let val = self
            .val_accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        format!(
            "epoch {} lr {:e} loss {:.6} train_acc {:.4} val_acc {} steps {}",
            self.epoch, self.lr, self.mean_loss, self.train_accuracy, val, self.steps
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_log(&self) -> String {
        self.epochs.iter().map(|e| e.log_line() + "\n").collect()
    }
}

/// Frames of one instance for one training visit.
pub(crate) fn training_frames<'a, T: Scalar>(
    features: &'a Matrix<T>,
    sampling: FrameSampling,
    seed: u64,
    epoch: usize,
    instance: usize,
) -> Result<Cow<'a, Matrix<T>>> {
    match sampling {
        FrameSampling::AllFrames => Ok(Cow::Borrowed(features)),
        FrameSampling::Segments(k) => {
            let mut rng = stream(seed, &[STREAM_FRAMES, epoch as u64, instance as u64]);
            let picks = sample_training(features.rows(), k, &mut rng)?;
            Ok(Cow::Owned(features.select_rows(&picks)?))
        }
    }
}

pub(crate) fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| FanError::Config(format!("cannot start {workers} workers: {e}")))
}

/// Maps `f` over `items`, on the pool if there is one, preserving order.
pub(crate) fn ordered_map<I, O, F>(pool: Option<&rayon::ThreadPool>, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    match pool {
        Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

fn check_compatible<T: Scalar>(
    dataset: &Dataset<T>,
    params: &FanParams<T>,
    indices: &[usize],
) -> Result<()> {
    if dataset.dim != params.dim() || dataset.classes() != params.classes() {
        return Err(FanError::Schema(format!(
            "parameters expect D={}, C={} but data has D={}, C={}",
            params.dim(),
            params.classes(),
            dataset.dim,
            dataset.classes()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(FanError::Index(format!("instance {i} out of range")));
    }
    Ok(())
}

/// Trains from a seeded initialization.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    train_indices: &[usize],
    config: &TrainConfig,
    validation: Option<&[usize]>,
) -> Result<(FanParams<T>, TrainHistory)> {
    let init = FanParams::init(
        dataset.dim,
        dataset.classes(),
        config.mode,
        &mut stream(config.seed, &[STREAM_INIT]),
    )?;
    train_from(dataset, train_indices, config, validation, init, |_| {})
}

/// Trains starting from `params`, calling `on_epoch` after each epoch.
pub fn train_from<T: Scalar>(
    dataset: &Dataset<T>,
    train_indices: &[usize],
    config: &TrainConfig,
    validation: Option<&[usize]>,
    mut params: FanParams<T>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(FanParams<T>, TrainHistory)> {
    config.validate()?;
    if train_indices.is_empty() {
        return Err(FanError::Config("no training instances".into()));
    }
    if params.mode != config.mode {
        return Err(FanError::Config(format!(
            "initial parameters are {} but the configuration asks for {}",
            params.mode, config.mode
        )));
    }
    check_compatible(dataset, &params, train_indices)?;
    if let Some(v) = validation {
        check_compatible(dataset, &params, v)?;
    }

    let pool = build_pool(config.workers)?;
    let mut state = OptState::new(&params);
    let mut history = TrainHistory::default();
    let mut order = train_indices.to_vec();

    for epoch in 0..config.total_epochs {
        let lr = lr_at(&config.schedule, epoch);
        let hyper = SgdHyper {
            lr,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        };
        order.copy_from_slice(train_indices);
        order.shuffle(&mut stream(config.seed, &[STREAM_SHUFFLE, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps = 0usize;
        for batch in order.chunks(config.batch_size) {
            let current = &params;
            let results = ordered_map(
                pool.as_ref(),
                batch,
                |&i| -> Result<(T, FanGradients<T>, bool)> {
                    let inst = &dataset.instances[i];
                    let frames =
                        training_frames(&inst.features, config.sampling, config.seed, epoch, i)?;
                    let (loss, grads, logits) = backward_with_logits(&frames, current, inst.label)?;
                    Ok((loss, grads, predict(&logits) == inst.label))
                },
            );
            let mut total = FanGradients::zeros_like(&params);
            for r in results {
                let (loss, grads, hit) = r?;
                loss_sum += loss.to_f64_lossy();
                correct += usize::from(hit);
                total.add_assign(&grads);
            }
            total.scale(T::one() / T::from_usize_lossy(batch.len()));
            sgd_step_masked(
                &mut params,
                &total,
                &mut state,
                hyper,
                config.train_attention,
            )?;
            steps += 1;
        }

        let val_accuracy = match validation {
            Some(v) => {
                Some(evaluate(&params, dataset, v, FrameMode::AllFrames, config.workers)?.accuracy)
            }
            None => None,
        };
        let stats = EpochStats {
            epoch,
            lr,
            mean_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_accuracy,
            steps,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok((params, history))
}
