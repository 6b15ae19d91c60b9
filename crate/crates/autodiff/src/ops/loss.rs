//! Per-pixel softmax cross-entropy.

use crate::error::{shape_err, Error, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Integer class per pixel, shape `[N, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n * h * w != data.len() || data.is_empty() {
            return shape_err(format!("label map {n}x{h}x{w} with {} values", data.len()));
        }
        Ok(Self { n, h, w, data })
    }
}

/// Channel-wise softmax of `[N,C,H,W]` logits, max-subtracted.
pub fn softmax_channels<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = logits.dims4()?;
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let at = |k: usize| base + k * plane + p;
            let m = (0..c).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..c {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..c {
                out[at(k)] = out[at(k)] / z;
            }
        }
    }
    Tensor::new(logits.shape(), out)
}

struct SoftmaxCeRule {
    labels: Vec<u8>,
}

impl<T: Real> Backward<T> for SoftmaxCeRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = ctx.inputs[0].dims4().expect("4-d");
        let plane = h * w;
        let mut probs = softmax_channels(ctx.inputs[0]).expect("4-d").into_data();
        let scale = ctx.grad.data()[0] / T::from_f64((n * plane) as f64);
        for s in 0..n {
            for p in 0..plane {
                let label = self.labels[s * plane + p] as usize;
                probs[(s * c + label) * plane + p] -= T::one();
            }
        }
        probs.iter_mut().for_each(|v| *v *= scale);
        vec![Some(Tensor::new(ctx.inputs[0].shape(), probs).expect("logit shape"))]
    }
}

impl<T: Real> Graph<T> {
    /// Mean over all `N·H·W` pixels of `−log softmax(logits)[label]`.
    pub fn softmax_ce(&mut self, logits: Var, labels: &LabelMap) -> Result<Var> {
        self.check(logits)?;
        let (n, c, h, w) = self.value(logits).dims4()?;
        if (labels.n, labels.h, labels.w) != (n, h, w) {
            return shape_err(format!(
                "labels {}x{}x{} do not match logits {n}x{h}x{w}",
                labels.n, labels.h, labels.w
            ));
        }
        if let Some(bad) = labels.data.iter().find(|&&l| l as usize >= c) {
            return Err(Error::Invalid(format!("label {bad} out of range for {c} classes")));
        }
        let plane = h * w;
        let x = self.value(logits).data();
        let mut total = 0.0f64;
        for s in 0..n {
            for p in 0..plane {
                let at = |k: usize| (s * c + k) * plane + p;
                let m = (0..c).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
                let z: T = (0..c).map(|k| (x[at(k)] - m).exp()).sum();
                let label = labels.data[s * plane + p] as usize;
                total += (m + z.ln() - x[at(label)]).as_f64();
            }
        }
        let loss = T::from_f64(total / (n * plane) as f64);
        let rule = SoftmaxCeRule {
            labels: labels.data.clone(),
        };
        self.record("softmax_ce", &[logits], Tensor::scalar(loss), rule)
    }
}
