//! Dense f32 tensors and the layer kernels the network is built from.
//!
//! Images are stored HWC, batches NHWC. Every kernel here is a pure function:
//! backward passes take the forward inputs again rather than relying on
//! hidden caches.

mod activation;
mod gemm;
mod conv;
mod dense;
mod pool;

pub use activation::{log_softmax, relu, relu_backward, softmax};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dLayer, ConvGrads, Padding};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use pool::{maxpool2d_backward, maxpool2d_forward, ArgmaxMap, MaxPoolSpec};

use crate::error::{Error, Result};

/// Row-major n-dimensional array of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                left: expected,
                right: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// # Panics
    /// When `shape` is not 1–4 positive dimensions.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "tensor must hold at least one element");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Dimensions of a rank-3 HWC tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape("[H, W, C]", &self.shape)),
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(Error::InvalidSpec(format!(
            "tensor shape must have 1-4 positive dimensions, got {shape:?}"
        )));
    }
    Ok(())
}

/// Row-major linearization into a rank-1 tensor.
pub fn flatten(input: &Tensor) -> Tensor {
    Tensor {
        shape: vec![input.len()],
        data: input.data.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn flatten_row_major() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = flatten(&t);
        assert_eq!(f.shape(), &[4]);
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0]);

        let v = Tensor::from_vec(vec![5.0, 6.0]);
        assert_eq!(flatten(&v), v);
    }

    #[test]
    fn flatten_table_shape() {
        let t = Tensor::zeros(&[6, 6, 128]);
        assert_eq!(flatten(&t).len(), 4608);
    }

    #[test]
    fn flatten_reshape_round_trip() {
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin()).collect();
        let t = Tensor::new(vec![2, 3, 4], data).unwrap();
        let back = flatten(&t).reshape(vec![2, 3, 4]).unwrap();
        assert_eq!(back, t);
        assert!(back
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
