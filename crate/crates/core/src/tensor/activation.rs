use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes `upstream` where `input > 0`; the derivative at 0 is taken as 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::shape(input.shape(), upstream.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let logp = log_softmax(logits.data())?;
    let mut p: Vec<f32> = logp.iter().map(|&l| l.exp() as f32).collect();
    // exp of f64 log-probabilities rounds each term; renormalise in f64.
    let total: f64 = p.iter().map(|&v| v as f64).sum();
    p.iter_mut().for_each(|v| *v = (*v as f64 / total) as f32);
    Tensor::new(vec![p.len()], p)
}

/// `s_i − log Σ_j e^{s_j}` computed in f64 after subtracting the max.
pub fn log_softmax(logits: &[f32]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidSpec("softmax over zero classes".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = logits.iter().map(|&s| (s as f64 - max).exp()).sum::<f64>().ln() + max;
    Ok(logits.iter().map(|&s| s as f64 - lse).collect())
}
