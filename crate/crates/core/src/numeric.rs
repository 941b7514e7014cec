//! Deterministic numeric primitives shared by the losses and the classifier.
//!
//! Everything is `f64`. Vectors and matrices are `ndarray` arrays; the
//! per-vector layer functions here are the reference forms, and the batched
//! variants are what the model uses on minibatches.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec1 = Array1<f64>;
pub type Mat2 = Array2<f64>;

/// Floor applied to `1 - p` before taking its logarithm.
pub const DEFAULT_LOG_EPS: f64 = 1e-7;

/// A probability vector over `N >= 2` ranked classes.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDistribution {
    probs: Vec<f64>,
}

impl OrdinalDistribution {
    /// Wraps an explicit probability vector, checking that it is a distribution.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(format!(
                "distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite values")))
    }
}

/// Numerically stable `ln Σ exp(z_i)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln()
}

/// Writes `exp(z_i - max z)` into `out` and returns their sum.
pub(crate) fn shifted_exp(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    sum
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<OrdinalDistribution> {
    if logits.len() < 2 {
        return Err(Error::invalid(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    check_finite(logits, "logits")?;
    let mut probs = vec![0.0; logits.len()];
    let sum = shifted_exp(logits, &mut probs);
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(OrdinalDistribution { probs })
}

/// `ln(max(1 - p, eps))`.
pub fn clamped_log1m(p: f64, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps {eps} outside (0, 1)")));
    }
    Ok((1.0 - p).max(eps).ln())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gradients of an affine map with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Vec1,
    pub dw: Mat2,
    pub db: Vec1,
}

fn check_affine_shapes(x_len: usize, w: &ArrayView2<f64>, b_len: usize) -> Result<()> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("weight matrix has a zero dimension"));
    }
    if cols != x_len || rows != b_len {
        return Err(Error::invalid(format!(
            "affine shape mismatch: W is {rows}x{cols}, x has {x_len}, b has {b_len}"
        )));
    }
    Ok(())
}

/// `W x + b`.
pub fn affine(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Vec1> {
    check_affine_shapes(x.len(), &w, b.len())?;
    Ok(w.dot(&x) + b)
}

pub fn affine_backward(
    dout: ArrayView1<f64>,
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
) -> Result<AffineGrads> {
    check_affine_shapes(x.len(), &w, dout.len())?;
    let dx = w.t().dot(&dout);
    let dw = outer(dout, x);
    Ok(AffineGrads {
        dx,
        dw,
        db: dout.to_owned(),
    })
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Mat2 {
    let col = a.insert_axis(Axis(1));
    let row = b.insert_axis(Axis(0));
    col.dot(&row)
}

pub fn relu(x: ArrayView1<f64>) -> Result<Vec1> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("relu input contains non-finite values"));
    }
    Ok(x.mapv(|v| v.max(0.0)))
}

/// Passes `dout` through where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(dout: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<Vec1> {
    if dout.len() != x.len() {
        return Err(Error::invalid(format!(
            "relu backward shape mismatch: {} vs {}",
            dout.len(),
            x.len()
        )));
    }
    Ok(ndarray::Zip::from(&dout)
        .and(&x)
        .map_collect(|&d, &v| if v > 0.0 { d } else { 0.0 }))
}

/// Row-wise `X Wᵀ + b` for a batch `X` of shape `(batch, in)`.
pub fn affine_batch(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Mat2> {
    check_affine_shapes(x.ncols(), &w, b.len())?;
    Ok(x.dot(&w.t()) + b)
}

/// Batched affine backward; returns `(dx, dw, db)` summed over the batch.
pub fn affine_batch_backward(
    dout: ArrayView2<f64>,
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
) -> Result<(Mat2, Mat2, Vec1)> {
    check_affine_shapes(x.ncols(), &w, dout.ncols())?;
    if dout.nrows() != x.nrows() {
        return Err(Error::invalid("batch size mismatch in affine backward"));
    }
    let dx = dout.dot(&w);
    let dw = dout.t().dot(&x);
    let db = dout.sum_axis(Axis(0));
    Ok((dx, dw, db))
}

/// Seeded random stream backed by ChaCha8, which produces the same values on
/// every platform for a given seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for parallel work (seed XOR index).
    pub fn split(&self, index: u64) -> Rng {
        Rng::new(self.seed ^ index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Draws an index with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        // Rounding can leave u marginally above the last bucket.
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Mixes several identifiers into one seed (splitmix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
