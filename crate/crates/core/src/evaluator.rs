//! Accuracy reports, person-independent cross-validation, the per-frame
//! score-fusion baseline and attention-weight export.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, FoldPlan};
use crate::error::{FanError, Result};
use crate::fanhead::{forward, predict, FanParams};
use crate::numkernel::{softmax, softmax_cross_entropy, Matrix, Vector};
use crate::sampler::{derive_seed, sample_training, stream};
use crate::scalar::Scalar;
use crate::trainer::{
    build_pool, lr_at, momentum_update, ordered_map, train, SgdHyper, TrainConfig, STREAM_INIT,
    STREAM_SHUFFLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameMode {
    /// Every frame of every video.
    AllFrames,
    /// `k` segment-sampled frames per video, drawn from `seed`.
    SampledK { k: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes with no instances.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub count: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let count: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        Self {
            accuracy: if count == 0 {
                0.0
            } else {
                correct as f64 / count as f64
            },
            per_class_accuracy,
            confusion,
            count: count as usize,
        }
    }

    pub fn from_predictions(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (label, pred) in pairs {
            confusion[label][pred] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Instance-weighted pooling of several reports.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Option<Self> {
        let mut iter = reports.into_iter();
        let mut confusion = iter.next()?.confusion.clone();
        for r in iter {
            for (row, other) in confusion.iter_mut().zip(&r.confusion) {
                row.iter_mut().zip(other).for_each(|(a, b)| *a += b);
            }
        }
        Some(Self::from_confusion(confusion))
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len())
            .map(|c| self.confusion[c][c])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstancePrediction {
    pub video_id: String,
    pub label: usize,
    pub prediction: usize,
}

fn check_params<T: Scalar>(
    params: &FanParams<T>,
    dataset: &Dataset<T>,
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

/// Predictions for the given instances, in the given order.
pub fn predict_instances<T: Scalar>(
    params: &FanParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    mode: FrameMode,
    workers: usize,
) -> Result<Vec<InstancePrediction>> {
    check_params(params, dataset, indices)?;
    let pool = build_pool(workers)?;
    ordered_map(pool.as_ref(), indices, |&i| {
        let inst = &dataset.instances[i];
        let logits = match mode {
            FrameMode::AllFrames => forward(&inst.features, params)?.0,
            FrameMode::SampledK { k, seed } => {
                let picks = sample_training(inst.frame_count(), k, &mut stream(seed, &[i as u64]))?;
                forward(&inst.features.select_rows(&picks)?, params)?.0
            }
        };
        Ok(InstancePrediction {
            video_id: inst.video_id.clone(),
            label: inst.label,
            prediction: predict(&logits),
        })
    })
    .into_iter()
    .collect()
}

pub fn evaluate<T: Scalar>(
    params: &FanParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    mode: FrameMode,
    workers: usize,
) -> Result<EvalReport> {
    let preds = predict_instances(params, dataset, indices, mode, workers)?;
    Ok(EvalReport::from_predictions(
        dataset.classes(),
        preds.iter().map(|p| (p.label, p.prediction)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub train_count: usize,
    pub test_count: usize,
    /// No subject appears on both sides of the split.
    pub disjoint: bool,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Instance-weighted over all folds.
    pub pooled: EvalReport,
    pub fold_mean_accuracy: f64,
}

/// Trains on out-of-fold subjects and tests on each fold in turn. Fold
/// `f` trains with seed `derive_seed(config.seed, [f])`.
pub fn cross_validate<T: Scalar>(
    dataset: &Dataset<T>,
    config: &TrainConfig,
    plan: &FoldPlan,
) -> Result<CvReport> {
    let mut folds = Vec::with_capacity(plan.fold_count);
    for fold in 0..plan.fold_count {
        let (train_idx, test_idx) = plan.split(dataset, fold)?;
        if test_idx.is_empty() {
            return Err(FanError::Config(format!(
                "fold {fold} has no test instances"
            )));
        }
        if train_idx.is_empty() {
            return Err(FanError::Config(format!(
                "fold {fold} leaves no training instances"
            )));
        }
        let subjects = |idx: &[usize]| {
            let set: std::collections::BTreeSet<String> = idx
                .iter()
                .map(|&i| dataset.instances[i].subject_id.clone())
                .collect();
            set.into_iter().collect::<Vec<_>>()
        };
        let train_subjects = subjects(&train_idx);
        let test_subjects = subjects(&test_idx);
        let disjoint = test_subjects
            .iter()
            .all(|s| train_subjects.binary_search(s).is_err());
        if !disjoint {
            return Err(FanError::Config(format!(
                "fold {fold} shares subjects between train and test"
            )));
        }
        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, &[fold as u64]),
            ..config.clone()
        };
        let (params, _) = train(dataset, &train_idx, &fold_config, None)?;
        let report = evaluate(
            &params,
            dataset,
            &test_idx,
            FrameMode::AllFrames,
            config.workers,
        )?;
        folds.push(FoldResult {
            fold,
            train_count: train_idx.len(),
            test_count: test_idx.len(),
            train_subjects,
            test_subjects,
            disjoint,
            report,
        });
    }
    let pooled = EvalReport::pooled(folds.iter().map(|f| &f.report))
        .ok_or_else(|| FanError::Config("fold plan has no folds".into()))?;
    let fold_mean_accuracy =
        folds.iter().map(|f| f.report.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(CvReport {
        folds,
        pooled,
        fold_mean_accuracy,
    })
}

/// How per-frame scores are summed into a video score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fusion {
    Logits,
    Probabilities,
}

/// Affine per-frame classifier for the score-fusion baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier<T> {
    pub weights: Matrix<T>,
    pub bias: Vector<T>,
}

impl<T: Scalar> LinearClassifier<T> {
    pub fn frame_logits(&self, frame: &[T]) -> Result<Vec<T>> {
        let mut z = self.weights.matvec(frame)?;
        z.iter_mut()
            .zip(self.bias.iter())
            .for_each(|(z, &b)| *z = *z + b);
        Ok(z)
    }

    /// Sum of per-frame scores over every frame of the video.
    pub fn video_scores(&self, features: &Matrix<T>, fusion: Fusion) -> Result<Vec<T>> {
        let mut total = vec![T::zero(); self.bias.len()];
        for frame in features.row_iter() {
            let z = self.frame_logits(frame)?;
            let s = match fusion {
                Fusion::Logits => z,
                Fusion::Probabilities => softmax(&z),
            };
            total.iter_mut().zip(s).for_each(|(t, x)| *t = *t + x);
        }
        Ok(total)
    }
}

/// Trains a per-frame affine classifier on every frame of the training
/// videos (same optimizer settings, batches of frames), then classifies
/// each test video by summed frame scores.
pub fn score_fusion_baseline<T: Scalar>(
    dataset: &Dataset<T>,
    train_indices: &[usize],
    test_indices: &[usize],
    config: &TrainConfig,
    fusion: Fusion,
) -> Result<(LinearClassifier<T>, EvalReport)> {
    config.validate()?;
    if train_indices.is_empty() {
        return Err(FanError::Config("no training instances".into()));
    }
    if let Some(&i) = train_indices
        .iter()
        .chain(test_indices)
        .find(|&&i| i >= dataset.len())
    {
        return Err(FanError::Index(format!("instance {i} out of range")));
    }
    let (dim, classes) = (dataset.dim, dataset.classes());
    let mut init_rng = stream(config.seed, &[STREAM_INIT, 1]);
    let limit = (6.0 / (dim + classes) as f64).sqrt();
    let w: Vec<T> = (0..dim * classes)
        .map(|_| T::lit(rand::Rng::random_range(&mut init_rng, -limit..limit)))
        .collect();
    let mut model = LinearClassifier {
        weights: Matrix::new(classes, dim, w)?,
        bias: Vector::zeros(classes)?,
    };
    let mut vel_w = vec![T::zero(); dim * classes];
    let mut vel_b = vec![T::zero(); classes];

    let units: Vec<(usize, usize)> = train_indices
        .iter()
        .flat_map(|&v| (0..dataset.instances[v].frame_count()).map(move |f| (v, f)))
        .collect();
    let mut order = units.clone();
    for epoch in 0..config.total_epochs {
        let hyper = SgdHyper {
            lr: lr_at(&config.schedule, epoch),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        };
        order.copy_from_slice(&units);
        order.shuffle(&mut stream(config.seed, &[STREAM_SHUFFLE, 1, epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            let mut gw = vec![T::zero(); dim * classes];
            let mut gb = vec![T::zero(); classes];
            for &(v, f) in batch {
                let inst = &dataset.instances[v];
                let frame = inst.features.row(f);
                let (_, dz) = softmax_cross_entropy(&model.frame_logits(frame)?, inst.label)?;
                for (c, &d) in dz.iter().enumerate() {
                    gb[c] = gb[c] + d;
                    for (g, &x) in gw[c * dim..(c + 1) * dim].iter_mut().zip(frame) {
                        *g = *g + d * x;
                    }
                }
            }
            let scale = T::one() / T::from_usize_lossy(batch.len());
            gw.iter_mut()
                .chain(gb.iter_mut())
                .for_each(|g| *g = *g * scale);
            let (new_w, new_vw) =
                momentum_update(model.weights.as_slice(), &gw, &vel_w, hyper, true);
            let (new_b, new_vb) = momentum_update(&model.bias, &gb, &vel_b, hyper, false);
            if new_w.iter().chain(&new_b).any(|x| !x.is_finite()) {
                return Err(FanError::Numeric(
                    "baseline SGD update produced a non-finite value".into(),
                ));
            }
            model.weights.as_mut_slice().copy_from_slice(&new_w);
            model.bias.as_mut_slice().copy_from_slice(&new_b);
            vel_w = new_vw;
            vel_b = new_vb;
        }
    }

    let preds = test_indices
        .iter()
        .map(|&i| {
            let inst = &dataset.instances[i];
            Ok((
                inst.label,
                predict(&model.video_scores(&inst.features, fusion)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, EvalReport::from_predictions(classes, preds)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoAttention {
    pub video_id: String,
    pub label: usize,
    pub prediction: usize,
    pub frames: Vec<usize>,
    pub alpha: Vec<f64>,
    pub final_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionExport {
    pub videos: Vec<VideoAttention>,
}

/// Attention weights of every frame of the given videos.
pub fn attention_export<T: Scalar>(
    params: &FanParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
) -> Result<AttentionExport> {
    check_params(params, dataset, indices)?;
    let videos = indices
        .iter()
        .map(|&i| {
            let inst = &dataset.instances[i];
            let (logits, trace) = forward(&inst.features, params)?;
            Ok(VideoAttention {
                video_id: inst.video_id.clone(),
                label: inst.label,
                prediction: predict(&logits),
                frames: (0..inst.frame_count()).collect(),
                alpha: trace.alpha.iter().map(|x| x.to_f64_lossy()).collect(),
                final_weights: trace
                    .final_weights
                    .iter()
                    .map(|x| x.to_f64_lossy())
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AttentionExport { videos })
}

/// Writes one CSV row per frame
/// (`video_id,frame_index,alpha,final_weight,label,prediction`)
/// and the whole export as JSON.
pub fn export_attention<T: Scalar>(
    params: &FanParams<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<AttentionExport> {
    let export = attention_export(params, dataset, indices)?;
    let io = |e: csv::Error| FanError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(csv_path).map_err(io)?;
    w.write_record([
        "video_id",
        "frame_index",
        "alpha",
        "final_weight",
        "label",
        "prediction",
    ])
    .map_err(io)?;
    for v in &export.videos {
        for ((f, a), fw) in v.frames.iter().zip(&v.alpha).zip(&v.final_weights) {
            w.write_record([
                v.video_id.clone(),
                f.to_string(),
                a.to_string(),
                fw.to_string(),
                v.label.to_string(),
                v.prediction.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&export)
        .map_err(|e| FanError::Io(std::io::Error::other(e)))?;
    std::fs::write(json_path, json + "\n")?;
    Ok(export)
}
