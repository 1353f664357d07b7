use super::gemm::{sgemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer, `out = xᵀ·W + b` with `W: [F_in, F_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[_, f_out] = weights.shape() else {
            return Err(Error::shape("[F_in, F_out]", weights.shape()));
        };
        if bias.shape() != [f_out] {
            return Err(Error::shape([f_out], bias.shape()));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        self.bias.data_mut()
    }

    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (self.weights.data_mut(), self.bias.data_mut())
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let (f_in, f_out) = (layer.in_features(), layer.out_features());
    if input.len() != f_in || input.shape().len() != 1 {
        return Err(Error::shape([f_in], input.shape()));
    }
    let mut out = layer.bias.data().to_vec();
    sgemm(
        1,
        f_in,
        f_out,
        input.data(),
        Layout::row_major(f_in),
        layer.weights.data(),
        Layout::row_major(f_out),
        1.0,
        &mut out,
    );
    Tensor::new(vec![f_out], out)
}

pub fn dense_backward(input: &Tensor, layer: &DenseLayer, upstream: &Tensor) -> Result<DenseGrads> {
    let (f_in, f_out) = (layer.in_features(), layer.out_features());
    if input.len() != f_in || input.shape().len() != 1 {
        return Err(Error::shape([f_in], input.shape()));
    }
    if upstream.shape() != [f_out] {
        return Err(Error::shape([f_out], upstream.shape()));
    }
    let x = input.data();
    let up = upstream.data();

    // Outer product x ⊗ upstream.
    let mut grad_w = vec![0.0f32; f_in * f_out];
    for (row, &xi) in grad_w.chunks_exact_mut(f_out).zip(x) {
        if xi != 0.0 {
            row.iter_mut().zip(up).for_each(|(g, u)| *g = xi * u);
        }
    }

    let mut grad_x = vec![0.0f32; f_in];
    sgemm(
        1,
        f_out,
        f_in,
        up,
        Layout::row_major(f_out),
        layer.weights.data(),
        Layout::transposed(f_out),
        0.0,
        &mut grad_x,
    );

    Ok(DenseGrads {
        input: Tensor::new(vec![f_in], grad_x)?,
        weights: Tensor::new(vec![f_in, f_out], grad_w)?,
        bias: upstream.clone(),
    })
}
