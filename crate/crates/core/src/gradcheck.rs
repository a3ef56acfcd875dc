//! Analytic-versus-finite-difference gradient suite over random heads.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fanhead::{backward, instance_loss, FanParams, Mode};
use crate::numkernel::{finite_diff_gradient, relative_error, Matrix};
use crate::sampler::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub configs: usize,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub frames: Vec<usize>,
    pub classes: Vec<usize>,
    pub eps: f64,
    pub tolerance: f64,
    /// Perturbs one analytic gradient entry per case (negative control).
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            configs: 24,
            seed: 1,
            dims: vec![4, 8, 16],
            frames: (1..=6).collect(),
            classes: vec![3, 7],
            eps: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub index: usize,
    pub dim: usize,
    pub frames: usize,
    pub classes: usize,
    pub mode: Mode,
    pub max_rel_error: f64,
    /// Parameters whose relative error exceeds the tolerance.
    pub offending: Vec<String>,
    pub worst: String,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

/// Human-readable name of flat parameter `j` (see [`FanParams::to_flat`]).
pub fn coordinate_name(dim: usize, classes: usize, mode: Mode, j: usize) -> String {
    let rep = mode.rep_dim(dim);
    if j < dim {
        format!("q0[{j}]")
    } else if j < 3 * dim {
        format!("q1[{}]", j - dim)
    } else if j < 3 * dim + classes * rep {
        let k = j - 3 * dim;
        format!("class_w[{},{}]", k / rep, k % rep)
    } else {
        format!("class_b[{}]", j - 3 * dim - classes * rep)
    }
}

/// A random problem: features in `[-1, 1)`, Glorot weights, small random bias.
pub fn random_problem(
    seed: u64,
    index: usize,
    dim: usize,
    frames: usize,
    classes: usize,
    mode: Mode,
) -> Result<(Matrix<f64>, FanParams<f64>, usize)> {
    let mut rng = stream(seed, &[0x96ad, index as u64]);
    let mut params = FanParams::init(dim, classes, mode, &mut rng)?;
    for b in params.class_b.as_mut_slice() {
        *b = rng.random_range(-0.5..0.5);
    }
    let data = (0..frames * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let features = Matrix::new(frames, dim, data)?;
    let label = rng.random_range(0..classes);
    Ok((features, params, label))
}

pub fn check_case(
    config: &GradCheckConfig,
    index: usize,
    dim: usize,
    frames: usize,
    classes: usize,
    mode: Mode,
) -> Result<GradCheckCase> {
    let (features, params, label) = random_problem(config.seed, index, dim, frames, classes, mode)?;
    let (_, grads) = backward(&features, &params, label)?;
    let mut analytic = grads.to_flat();
    if config.corrupt {
        let j = index % analytic.len();
        analytic[j] += 1e-2 + analytic[j].abs() * 0.1;
    }
    let loss = |flat: &[f64]| -> f64 {
        FanParams::from_flat(dim, classes, mode, flat)
            .and_then(|p| instance_loss(&features, &p, label))
            .unwrap_or(f64::NAN)
    };
    let numeric = finite_diff_gradient(loss, &params.to_flat(), config.eps)?;
    let mut max_rel_error = 0.0f64;
    let mut worst = 0;
    let mut offending = Vec::new();
    for (j, (&a, &b)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, b);
        if e > max_rel_error {
            max_rel_error = e;
            worst = j;
        }
        if e.is_nan() || e >= config.tolerance {
            offending.push(coordinate_name(dim, classes, mode, j));
        }
    }
    Ok(GradCheckCase {
        index,
        dim,
        frames,
        classes,
        mode,
        max_rel_error,
        offending,
        worst: coordinate_name(dim, classes, mode, worst),
    })
}

/// Runs `config.configs` cases. Shapes cycle through the configured lists
/// and modes alternate, so any 12 consecutive default cases cover every
/// D, C and mode.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<Vec<GradCheckCase>> {
    (0..config.configs)
        .map(|k| {
            let dim = config.dims[k % config.dims.len()];
            let classes = config.classes[(k / config.dims.len()) % config.classes.len()];
            let frames = config.frames[(k * 7 + 3) % config.frames.len()];
            let mode = if k % 2 == 0 {
                Mode::Full
            } else {
                Mode::SelfOnly
            };
            check_case(config, k, dim, frames, classes, mode)
        })
        .collect()
}
