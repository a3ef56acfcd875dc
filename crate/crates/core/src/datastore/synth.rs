//! Synthetic planted-peak videos.
//!
//! Every frame is isotropic Gaussian noise whose expected squared norm is
//! `noise²` (per-coordinate standard deviation `noise / sqrt(D)`). The peak
//! frames of a video additionally carry `signal · u_label`, where the class
//! directions `u_c` are orthonormal. Only peak frames are informative, so a
//! pooling rule that finds them beats one that averages them away.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FanError, Result};
use crate::numkernel::Matrix;
use crate::sampler::stream;
use crate::scalar::Scalar;

use super::{Dataset, VideoInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub videos_per_class: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    pub classes: usize,
    pub peaks_per_video: usize,
    pub signal: f64,
    pub noise: f64,
    /// Videos are dealt round-robin over this many subjects.
    pub subjects: usize,
    /// Place peaks at the end of each video instead of uniformly.
    pub terminal_peaks: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos_per_class: 200,
            frames_min: 8,
            frames_max: 16,
            dim: 16,
            classes: 4,
            peaks_per_video: 1,
            signal: 3.0,
            noise: 1.0,
            subjects: 20,
            terminal_peaks: false,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("videos per class", self.videos_per_class),
            ("minimum frames", self.frames_min),
            ("feature dimension", self.dim),
            ("class count", self.classes),
            ("peaks per video", self.peaks_per_video),
            ("subject count", self.subjects),
        ];
        for (what, v) in positive {
            if v == 0 {
                return Err(FanError::Config(format!("{what} must be positive")));
            }
        }
        if self.frames_max < self.frames_min {
            return Err(FanError::Config(
                "maximum frames below minimum frames".into(),
            ));
        }
        if self.peaks_per_video > self.frames_min {
            return Err(FanError::Config(format!(
                "{} peaks do not fit in videos of {} frames",
                self.peaks_per_video, self.frames_min
            )));
        }
        if self.classes > self.dim {
            return Err(FanError::Config(format!(
                "{} orthogonal class directions need D >= C, got D={}",
                self.classes, self.dim
            )));
        }
        for (what, v) in [("signal", self.signal), ("noise", self.noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FanError::Config(format!(
                    "{what} magnitude must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Generator-side facts that the dataset itself does not record.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Orthonormal class directions, one row per class.
    pub directions: Vec<Vec<f64>>,
    /// Sorted peak frame indices per video, in dataset order.
    pub peak_frames: Vec<Vec<usize>>,
}

fn orthonormal_directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A near-degenerate draw is simply redrawn.
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn synth_generate<T: Scalar>(config: &SynthConfig) -> Result<Dataset<T>> {
    synth_generate_with_truth(config).map(|(ds, _)| ds)
}

pub fn synth_generate_with_truth<T: Scalar>(
    config: &SynthConfig,
) -> Result<(Dataset<T>, SynthTruth)> {
    config.validate()?;
    let directions =
        orthonormal_directions(config.classes, config.dim, &mut stream(config.seed, &[0]));
    let sigma = config.noise / (config.dim as f64).sqrt();
    let total = config.videos_per_class * config.classes;
    let id_width = total.saturating_sub(1).to_string().len().max(4);
    let subject_width = config.subjects.to_string().len().max(3);

    let mut instances = Vec::with_capacity(total);
    let mut peak_frames = Vec::with_capacity(total);
    for (class, direction) in directions.iter().enumerate() {
        for v in 0..config.videos_per_class {
            let index = class * config.videos_per_class + v;
            let mut rng = stream(config.seed, &[1, index as u64]);
            let n = rng.random_range(config.frames_min..=config.frames_max);
            let mut peaks: Vec<usize> = if config.terminal_peaks {
                (n - config.peaks_per_video..n).collect()
            } else {
                sample(&mut rng, n, config.peaks_per_video).into_vec()
            };
            peaks.sort_unstable();
            let mut data = Vec::with_capacity(n * config.dim);
            for frame in 0..n {
                let is_peak = peaks.binary_search(&frame).is_ok();
                for &u in direction {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut x = sigma * z;
                    if is_peak {
                        x += config.signal * u;
                    }
                    data.push(T::lit(x));
                }
            }
            instances.push(VideoInstance {
                video_id: format!("v{index:0id_width$}"),
                subject_id: format!("S{:0subject_width$}", index % config.subjects + 1),
                label: class,
                features: Matrix::new(n, config.dim, data)?,
            });
            peak_frames.push(peaks);
        }
    }
    let class_names = (0..config.classes).map(|c| format!("class{c}")).collect();
    let dataset = Dataset::new(instances, config.dim, class_names)?;
    Ok((
        dataset,
        SynthTruth {
            directions,
            peak_frames,
        },
    ))
}
