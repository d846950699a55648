//! Minimal CNN building blocks: parameters, layers with explicit
//! forward/backward passes, inverted dropout, Adam, and the softmax
//! cross-entropy loss. Everything is f32 and deterministic for a fixed
//! seed; matrix products go through ndarray's single-threaded gemm.

mod conv;
mod linear;
mod pool;

pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::MaxPool2d;

use ndarray::{Array2, ArrayD};
use rand::Rng;

use crate::error::{Error, Result};

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    m: ArrayD<f32>,
    v: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Self { value, grad: zeros.clone(), m: zeros.clone(), v: zeros }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Adam with bias correction; published default moments.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Self { lr, config, t: 0 }
    }

    /// One update over all parameters; call after gradients are filled.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let b1 = self.config.beta1 as f32;
        let b2 = self.config.beta2 as f32;
        let eps = self.config.epsilon as f32;
        let bc1 = 1.0 - (self.config.beta1).powi(self.t as i32);
        let bc2 = 1.0 - (self.config.beta2).powi(self.t as i32);
        let alpha = (self.lr * bc2.sqrt() / bc1) as f32;
        for p in params {
            let g = &p.grad;
            ndarray::Zip::from(&mut p.m).and(g).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
            ndarray::Zip::from(&mut p.v).and(g).for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            ndarray::Zip::from(&mut p.value)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| *w -= alpha * m / (v.sqrt() + eps));
        }
    }
}

/// ReLU forward; returns the activation mask for the backward pass.
pub fn relu_inplace(x: &mut ArrayD<f32>) -> ArrayD<f32> {
    let mut mask = ArrayD::zeros(x.raw_dim());
    ndarray::Zip::from(x).and(&mut mask).for_each(|v, m| {
        if *v > 0.0 {
            *m = 1.0;
        } else {
            *v = 0.0;
        }
    });
    mask
}

/// Inverted dropout: scales kept units by 1/(1-p) at train time so the
/// eval-mode forward needs no rescaling.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<ArrayD<f32>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    pub fn forward<R: Rng>(&mut self, x: &mut ArrayD<f32>, train: bool, rng: &mut R) {
        if !train || self.p == 0.0 {
            self.mask = None;
            return;
        }
        let keep = 1.0 - self.p;
        let scale = (1.0 / keep) as f32;
        let mut mask = ArrayD::zeros(x.raw_dim());
        for m in mask.iter_mut() {
            if rng.gen_bool(keep) {
                *m = scale;
            }
        }
        *x *= &mask;
        self.mask = Some(mask);
    }

    pub fn backward(&self, dout: &mut ArrayD<f32>) {
        if let Some(mask) = &self.mask {
            *dout *= mask;
        }
    }
}

/// Mean softmax cross-entropy over the batch from raw logits.
/// Returns the scalar loss and d(loss)/d(logits).
pub fn softmax_cross_entropy(
    logits: &Array2<f32>,
    labels: &[usize],
) -> Result<(f64, Array2<f32>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} logit rows vs {} labels",
            labels.len()
        )));
    }
    let mut dlogits = Array2::<f32>::zeros((n, k));
    let mut loss = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::DimensionMismatch(format!("label {label} out of {k} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for &v in row.iter() {
            sum += ((v - max) as f64).exp();
        }
        let log_sum = sum.ln() + max as f64;
        loss += log_sum - logits[[i, label]] as f64;
        for j in 0..k {
            let p = ((logits[[i, j]] as f64 - log_sum).exp()) as f32;
            dlogits[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    Ok((loss / n as f64, dlogits))
}

/// Row-wise softmax of raw logits.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
