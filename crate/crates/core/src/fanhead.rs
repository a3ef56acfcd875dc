//! The frame attention aggregation head.
//!
//! Given per-frame features `f_1..f_n` (rows of an `n × D` matrix):
//!
//! ```text
//! alpha_i = sigmoid(f_i · q0)                          self-attention
//! anchor  = sum alpha_i f_i / sum alpha_i               global anchor
//! beta_i  = sigmoid([f_i : anchor] · q1)                relation-attention
//! f_v     = sum alpha_i beta_i [f_i : anchor] / sum alpha_i beta_i
//! logits  = W f_v + b
//! ```
//!
//! In [`Mode::SelfOnly`] the relation branch is dropped and the classifier
//! reads the anchor directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FanError, Result};
use crate::numkernel::{dot_unchecked, sigmoid, softmax_cross_entropy, Matrix, Vector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Self-attention followed by relation-attention.
    Full,
    /// Self-attention only; the classifier reads the global anchor.
    SelfOnly,
}

impl Mode {
    /// Width of the video representation fed to the classifier.
    pub fn rep_dim(self, dim: usize) -> usize {
        match self {
            Mode::Full => 2 * dim,
            Mode::SelfOnly => dim,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Mode::Full => 0,
            Mode::SelfOnly => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Mode::Full),
            1 => Some(Mode::SelfOnly),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::SelfOnly => "self-only",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = FanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "self-only" | "self_only" | "selfonly" => Ok(Mode::SelfOnly),
            other => Err(FanError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Trainable parameters of the head.
///
/// `q1` is always present with length `2D`; it is unused (and receives
/// zero gradient) in [`Mode::SelfOnly`].
#[derive(Debug, Clone, PartialEq)]
pub struct FanParams<T> {
    pub q0: Vector<T>,
    pub q1: Vector<T>,
    /// `C × rep_dim` classifier weights.
    pub class_w: Matrix<T>,
    pub class_b: Vector<T>,
    pub mode: Mode,
}

impl<T: Scalar> FanParams<T> {
    pub fn new(
        q0: Vector<T>,
        q1: Vector<T>,
        class_w: Matrix<T>,
        class_b: Vector<T>,
        mode: Mode,
    ) -> Result<Self> {
        let dim = q0.len();
        if q1.len() != 2 * dim {
            return Err(FanError::Dimension(format!(
                "q1 has length {}, expected {}",
                q1.len(),
                2 * dim
            )));
        }
        if class_w.cols() != mode.rep_dim(dim) {
            return Err(FanError::Dimension(format!(
                "classifier has {} inputs, expected {} for {mode} mode",
                class_w.cols(),
                mode.rep_dim(dim)
            )));
        }
        if class_w.rows() != class_b.len() {
            return Err(FanError::Dimension(format!(
                "classifier has {} rows but {} biases",
                class_w.rows(),
                class_b.len()
            )));
        }
        Ok(Self {
            q0,
            q1,
            class_w,
            class_b,
            mode,
        })
    }

    pub fn zeros(dim: usize, classes: usize, mode: Mode) -> Result<Self> {
        Self::new(
            Vector::zeros(dim)?,
            Vector::zeros(2 * dim)?,
            Matrix::zeros(classes, mode.rep_dim(dim))?,
            Vector::zeros(classes)?,
            mode,
        )
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` for every weight, zero bias.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        classes: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Self> {
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<T> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n)
                .map(|_| T::lit(rng.random_range(-limit..limit)))
                .collect()
        };
        let rep = mode.rep_dim(dim);
        let q0 = uniform(dim, dim, 1);
        let q1 = uniform(2 * dim, 2 * dim, 1);
        let w = uniform(classes * rep, rep, classes);
        Self::new(
            Vector::new(q0)?,
            Vector::new(q1)?,
            Matrix::new(classes, rep, w)?,
            Vector::zeros(classes)?,
            mode,
        )
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn classes(&self) -> usize {
        self.class_b.len()
    }

    pub fn rep_dim(&self) -> usize {
        self.mode.rep_dim(self.dim())
    }

    /// Total scalar count in canonical order.
    pub fn len(&self) -> usize {
        Self::flat_len(self.dim(), self.classes(), self.mode)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat_len(dim: usize, classes: usize, mode: Mode) -> usize {
        3 * dim + classes * mode.rep_dim(dim) + classes
    }

    /// Flattened parameters: `q0`, `q1`, `class_w` row-major, `class_b`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.q0);
        out.extend_from_slice(&self.q1);
        out.extend_from_slice(self.class_w.as_slice());
        out.extend_from_slice(&self.class_b);
        out
    }

    pub fn from_flat(dim: usize, classes: usize, mode: Mode, flat: &[T]) -> Result<Self> {
        let expected = Self::flat_len(dim, classes, mode);
        if flat.len() != expected {
            return Err(FanError::Dimension(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let rep = mode.rep_dim(dim);
        let (q0, rest) = flat.split_at(dim);
        let (q1, rest) = rest.split_at(2 * dim);
        let (w, b) = rest.split_at(classes * rep);
        Self::new(
            Vector::new(q0.to_vec())?,
            Vector::new(q1.to_vec())?,
            Matrix::new(classes, rep, w.to_vec())?,
            Vector::new(b.to_vec())?,
            mode,
        )
    }

    pub fn check_finite(&self) -> Result<()> {
        self.q0.check_finite()?;
        self.q1.check_finite()?;
        self.class_w.check_finite()?;
        self.class_b.check_finite()
    }
}

/// Per-frame weights and intermediate vectors of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionTrace<T> {
    pub alpha: Vec<T>,
    /// All ones in [`Mode::SelfOnly`].
    pub beta: Vec<T>,
    /// Normalized `alpha_i * beta_i` (normalized `alpha_i` in self-only mode).
    pub final_weights: Vec<T>,
    pub anchor: Vec<T>,
    /// Video representation: `2D` wide in full mode, `D` in self-only mode.
    pub aggregate: Vec<T>,
}

/// Loss gradient for every parameter, shaped like [`FanParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FanGradients<T> {
    pub q0: Vec<T>,
    pub q1: Vec<T>,
    pub class_w: Vec<T>,
    pub class_b: Vec<T>,
}

impl<T: Scalar> FanGradients<T> {
    pub fn zeros_like(params: &FanParams<T>) -> Self {
        Self {
            q0: vec![T::zero(); params.dim()],
            q1: vec![T::zero(); 2 * params.dim()],
            class_w: vec![T::zero(); params.class_w.as_slice().len()],
            class_b: vec![T::zero(); params.classes()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        let pairs = [
            (&mut self.q0, &other.q0),
            (&mut self.q1, &other.q1),
            (&mut self.class_w, &other.class_w),
            (&mut self.class_b, &other.class_b),
        ];
        for (dst, src) in pairs {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for buf in [
            &mut self.q0,
            &mut self.q1,
            &mut self.class_w,
            &mut self.class_b,
        ] {
            buf.iter_mut().for_each(|g| *g = *g * factor);
        }
    }

    /// Same ordering as [`FanParams::to_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.q0);
        out.extend_from_slice(&self.q1);
        out.extend_from_slice(&self.class_w);
        out.extend_from_slice(&self.class_b);
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.to_flat().iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(FanError::Numeric("non-finite gradient".into()))
        }
    }
}

fn check_dim<T: Scalar>(features: &Matrix<T>, expected: usize, what: &str) -> Result<()> {
    if features.cols() != expected {
        return Err(FanError::Dimension(format!(
            "features have {} columns but {what} expects {expected}",
            features.cols()
        )));
    }
    Ok(())
}

fn check_len<T>(v: &[T], expected: usize, what: &str) -> Result<()> {
    if v.len() != expected {
        return Err(FanError::Dimension(format!(
            "{what} has length {}, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}

/// Weighted average of the rows of `features`.
fn weighted_mean<T: Scalar>(features: &Matrix<T>, weights: &[T], what: &str) -> Result<Vec<T>> {
    check_len(weights, features.rows(), what)?;
    if let Some(i) = weights.iter().position(|&w| w.is_nan() || w <= T::zero()) {
        return Err(FanError::Domain(format!(
            "{what}: weight {i} is not positive"
        )));
    }
    let total = weights.iter().copied().fold(T::zero(), |a, b| a + b);
    let mut out = vec![T::zero(); features.cols()];
    for (row, &w) in features.row_iter().zip(weights) {
        let lambda = w / total;
        for (o, &x) in out.iter_mut().zip(row) {
            *o = *o + lambda * x;
        }
    }
    if !total.is_finite() || out.iter().any(|x| !x.is_finite()) {
        return Err(FanError::Numeric(format!(
            "{what}: non-finite weighted mean"
        )));
    }
    Ok(out)
}

pub fn self_attention<T: Scalar>(features: &Matrix<T>, q0: &[T]) -> Result<Vec<T>> {
    check_dim(features, q0.len(), "q0")?;
    Ok(features
        .row_iter()
        .map(|f| sigmoid(dot_unchecked(f, q0)))
        .collect())
}

pub fn global_anchor<T: Scalar>(features: &Matrix<T>, alpha: &[T]) -> Result<Vec<T>> {
    weighted_mean(features, alpha, "global anchor")
}

pub fn relation_attention<T: Scalar>(
    features: &Matrix<T>,
    anchor: &[T],
    q1: &[T],
) -> Result<Vec<T>> {
    let dim = features.cols();
    check_len(anchor, dim, "anchor")?;
    check_len(q1, 2 * dim, "q1")?;
    let (q1_frame, q1_anchor) = q1.split_at(dim);
    let anchor_term = dot_unchecked(anchor, q1_anchor);
    Ok(features
        .row_iter()
        .map(|f| sigmoid(dot_unchecked(f, q1_frame) + anchor_term))
        .collect())
}

/// Weighted average of `[f_i : anchor]` with weights `alpha_i * beta_i`.
/// The anchor half of the result is the anchor itself.
pub fn aggregate<T: Scalar>(
    features: &Matrix<T>,
    anchor: &[T],
    alpha: &[T],
    beta: &[T],
) -> Result<Vec<T>> {
    check_len(anchor, features.cols(), "anchor")?;
    check_len(alpha, features.rows(), "alpha")?;
    check_len(beta, features.rows(), "beta")?;
    let combined: Vec<T> = alpha.iter().zip(beta).map(|(&a, &b)| a * b).collect();
    let mut out = weighted_mean(features, &combined, "aggregate")?;
    out.extend_from_slice(anchor);
    Ok(out)
}

pub fn aggregate_self_only<T: Scalar>(features: &Matrix<T>, alpha: &[T]) -> Result<Vec<T>> {
    global_anchor(features, alpha)
}

fn normalized<T: Scalar>(weights: &[T]) -> Vec<T> {
    let total = weights.iter().copied().fold(T::zero(), |a, b| a + b);
    weights.iter().map(|&w| w / total).collect()
}

pub fn forward<T: Scalar>(
    features: &Matrix<T>,
    params: &FanParams<T>,
) -> Result<(Vec<T>, AttentionTrace<T>)> {
    check_dim(features, params.dim(), "the parameters")?;
    let alpha = self_attention(features, &params.q0)?;
    let anchor = global_anchor(features, &alpha)?;
    let (beta, final_weights, aggregate) = match params.mode {
        Mode::Full => {
            let beta = relation_attention(features, &anchor, &params.q1)?;
            let agg = aggregate(features, &anchor, &alpha, &beta)?;
            let combined: Vec<T> = alpha.iter().zip(&beta).map(|(&a, &b)| a * b).collect();
            (beta, normalized(&combined), agg)
        }
        Mode::SelfOnly => (
            vec![T::one(); alpha.len()],
            normalized(&alpha),
            anchor.clone(),
        ),
    };
    let mut logits = params.class_w.matvec(&aggregate)?;
    for (z, &b) in logits.iter_mut().zip(params.class_b.iter()) {
        *z = *z + b;
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(FanError::Numeric("non-finite logits".into()));
    }
    Ok((
        logits,
        AttentionTrace {
            alpha,
            beta,
            final_weights,
            anchor,
            aggregate,
        },
    ))
}

/// Cross-entropy loss of one instance.
pub fn instance_loss<T: Scalar>(
    features: &Matrix<T>,
    params: &FanParams<T>,
    label: usize,
) -> Result<T> {
    let (logits, _) = forward(features, params)?;
    softmax_cross_entropy(&logits, label).map(|(loss, _)| loss)
}

/// Loss and exact gradients of one instance.
pub fn backward<T: Scalar>(
    features: &Matrix<T>,
    params: &FanParams<T>,
    label: usize,
) -> Result<(T, FanGradients<T>)> {
    backward_with_logits(features, params, label).map(|(loss, grads, _)| (loss, grads))
}

/// As [`backward`], also returning the forward logits.
pub fn backward_with_logits<T: Scalar>(
    features: &Matrix<T>,
    params: &FanParams<T>,
    label: usize,
) -> Result<(T, FanGradients<T>, Vec<T>)> {
    let (logits, trace) = forward(features, params)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, label)?;
    let dim = params.dim();
    let rep = params.rep_dim();
    let mut grads = FanGradients::zeros_like(params);

    // Classifier: dW = dz ⊗ f_v, db = dz, d f_v = Wᵀ dz.
    let mut d_rep = vec![T::zero(); rep];
    for (c, &dz) in d_logits.iter().enumerate() {
        let w_row = params.class_w.row(c);
        let gw_row = &mut grads.class_w[c * rep..(c + 1) * rep];
        for j in 0..rep {
            gw_row[j] = dz * trace.aggregate[j];
            d_rep[j] = d_rep[j] + w_row[j] * dz;
        }
        grads.class_b[c] = dz;
    }

    let alpha = &trace.alpha;
    let anchor = &trace.anchor;
    let n = features.rows();
    let alpha_total = alpha.iter().copied().fold(T::zero(), |a, b| a + b);
    let mut d_alpha = vec![T::zero(); n];

    let d_anchor: Vec<T> = match params.mode {
        Mode::SelfOnly => d_rep,
        Mode::Full => {
            let beta = &trace.beta;
            let (d_pooled, d_anchor_direct) = d_rep.split_at(dim);
            let pooled = &trace.aggregate[..dim];
            let combined_total = alpha
                .iter()
                .zip(beta)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            // Pooled half: d/dw_i of sum w_i f_i / sum w_i is (f_i - pooled) / sum w.
            let d_pooled_dot_pooled = dot_unchecked(d_pooled, pooled);
            let mut d_logit_beta_total = T::zero();
            let q1_anchor = &params.q1[dim..];
            let (g_q1_frame, g_q1_anchor) = grads.q1.split_at_mut(dim);
            for (i, f) in features.row_iter().enumerate() {
                let d_w = (dot_unchecked(d_pooled, f) - d_pooled_dot_pooled) / combined_total;
                d_alpha[i] = d_w * beta[i];
                let d_beta = d_w * alpha[i];
                let d_logit = d_beta * beta[i] * (T::one() - beta[i]);
                for (g, &x) in g_q1_frame.iter_mut().zip(f) {
                    *g = *g + d_logit * x;
                }
                d_logit_beta_total = d_logit_beta_total + d_logit;
            }
            for (g, &a) in g_q1_anchor.iter_mut().zip(anchor) {
                *g = d_logit_beta_total * a;
            }
            d_anchor_direct
                .iter()
                .zip(q1_anchor)
                .map(|(&d, &q)| d + d_logit_beta_total * q)
                .collect()
        }
    };

    // Anchor: d/d alpha_i of sum alpha_i f_i / sum alpha_i is (f_i - anchor) / sum alpha.
    let d_anchor_dot_anchor = dot_unchecked(&d_anchor, anchor);
    for (i, f) in features.row_iter().enumerate() {
        let d_a = d_alpha[i] + (dot_unchecked(&d_anchor, f) - d_anchor_dot_anchor) / alpha_total;
        let d_logit = d_a * alpha[i] * (T::one() - alpha[i]);
        for (g, &x) in grads.q0.iter_mut().zip(f) {
            *g = *g + d_logit * x;
        }
    }

    grads.check_finite()?;
    Ok((loss, grads, logits))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}
