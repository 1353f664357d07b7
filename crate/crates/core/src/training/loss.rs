use crate::error::{Error, Result};
use crate::tensor::{log_softmax, Tensor};

/// Logits `[N, C]` with one integer target per row.
#[derive(Clone, Debug)]
pub struct CrossEntropyBatch {
    logits: Tensor,
    targets: Vec<usize>,
}

impl CrossEntropyBatch {
    pub fn new(logits: Tensor, targets: Vec<usize>) -> Result<Self> {
        let &[n, c] = logits.shape() else {
            return Err(Error::shape("[N, C]", logits.shape()));
        };
        if targets.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: targets.len(),
            });
        }
        if let Some(&label) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        Ok(CrossEntropyBatch { logits, targets })
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }

    fn rows(&self) -> impl Iterator<Item = (&[f32], usize)> {
        self.logits
            .data()
            .chunks_exact(self.classes())
            .zip(self.targets.iter().copied())
    }
}

/// Mean over the batch of `−log softmax(s)_p`, evaluated via log-sum-exp.
pub fn cross_entropy_loss(batch: &CrossEntropyBatch) -> Result<f64> {
    let mut total = 0.0;
    for (row, target) in batch.rows() {
        total -= log_softmax(row)?[target];
    }
    Ok(total / batch.targets.len() as f64)
}

/// ∂loss/∂logits: `softmax(s) − onehot(p)` per row, divided by `N`.
pub fn cross_entropy_gradient(batch: &CrossEntropyBatch) -> Result<Tensor> {
    let n = batch.targets.len() as f64;
    let mut out = Vec::with_capacity(batch.logits.len());
    for (row, target) in batch.rows() {
        let logp = log_softmax(row)?;
        out.extend(logp.iter().enumerate().map(|(i, lp)| {
            let onehot = if i == target { 1.0 } else { 0.0 };
            ((lp.exp() - onehot) / n) as f32
        }));
    }
    Tensor::new(batch.logits.shape().to_vec(), out)
}
