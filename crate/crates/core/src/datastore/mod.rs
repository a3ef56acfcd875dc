//! Video feature datasets: in-memory types, the FANF file format, CSV
//! import, person-independent folds and the synthetic planted-peak task.

mod csv_import;
mod folds;
mod format;
mod synth;

pub use csv_import::import_csv;
pub use folds::{build_folds, build_folds_from_subjects, canonical_subject_key, FoldPlan};
pub use format::{
    decode_feature_bytes, encode_feature_bytes, load_feature_file, write_feature_file, FANF_MAGIC,
    FANF_VERSION,
};
pub use synth::{synth_generate, synth_generate_with_truth, SynthConfig, SynthTruth};

use std::collections::BTreeSet;

use crate::error::{FanError, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

/// One video: identity, subject, label and its `n × D` frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInstance<T> {
    pub video_id: String,
    pub subject_id: String,
    pub label: usize,
    pub features: Matrix<T>,
}

impl<T: Scalar> VideoInstance<T> {
    pub fn frame_count(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub instances: Vec<VideoInstance<T>>,
    pub dim: usize,
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        instances: Vec<VideoInstance<T>>,
        dim: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            instances,
            dim,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FanError::Schema(
                "feature dimension must be positive".into(),
            ));
        }
        if self.class_names.is_empty() {
            return Err(FanError::Schema("at least one class is required".into()));
        }
        for inst in &self.instances {
            if inst.features.cols() != self.dim {
                return Err(FanError::Schema(format!(
                    "video {:?} has feature dimension {}, dataset has {}",
                    inst.video_id,
                    inst.features.cols(),
                    self.dim
                )));
            }
            if inst.label >= self.classes() {
                return Err(FanError::Schema(format!(
                    "video {:?} has label {} but only {} classes",
                    inst.video_id,
                    inst.label,
                    self.classes()
                )));
            }
            if inst.features.check_finite().is_err() {
                return Err(FanError::Data(format!(
                    "video {:?} has a non-finite feature",
                    inst.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Distinct subject ids.
    pub fn subjects(&self) -> BTreeSet<&str> {
        self.instances
            .iter()
            .map(|i| i.subject_id.as_str())
            .collect()
    }

    /// Convert feature precision.
    pub fn cast<U: Scalar>(&self) -> Result<Dataset<U>> {
        let instances = self
            .instances
            .iter()
            .map(|inst| {
                let data = inst
                    .features
                    .as_slice()
                    .iter()
                    .map(|&x| U::lit(x.to_f64_lossy()))
                    .collect();
                Ok(VideoInstance {
                    video_id: inst.video_id.clone(),
                    subject_id: inst.subject_id.clone(),
                    label: inst.label,
                    features: Matrix::new(inst.features.rows(), inst.features.cols(), data)?,
                })
            })
            .collect::<Result<_>>()?;
        Dataset::new(instances, self.dim, self.class_names.clone())
    }
}
