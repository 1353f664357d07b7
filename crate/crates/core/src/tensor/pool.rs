use super::Tensor;
use crate::error::{Error, Result};

/// Max pooling with valid padding: `out = floor((in - window) / stride) + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPoolSpec {
    pub fn square(size: usize) -> Self {
        MaxPoolSpec {
            window: (size, size),
            stride: (size, size),
        }
    }

    pub fn output_shape(&self, h: usize, w: usize, c: usize) -> Result<[usize; 3]> {
        let (wh, ww) = self.window;
        let (sh, sw) = self.stride;
        if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidSpec("pool window and stride must be positive".into()));
        }
        if wh > h || ww > w {
            return Err(Error::InvalidSpec(format!(
                "pool window {wh}x{ww} exceeds input {h}x{w}"
            )));
        }
        Ok([(h - wh) / sh + 1, (w - ww) / sw + 1, c])
    }
}

/// Flat input index of the winning element for every pooled output cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    indices: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

pub fn maxpool2d_forward(input: &Tensor, spec: &MaxPoolSpec) -> Result<(Tensor, ArgmaxMap)> {
    let (h, w, c) = input.hwc()?;
    let [oh, ow, _] = spec.output_shape(h, w, c)?;
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut indices = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                // Row-major scan; strict `>` keeps the first maximum.
                for dy in 0..spec.window.0 {
                    for dx in 0..spec.window.1 {
                        let iy = oy * spec.stride.0 + dy;
                        let ix = ox * spec.stride.1 + dx;
                        let idx = (iy * w + ix) * c + ch;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    let shape = vec![oh, ow, c];
    Ok((
        Tensor::new(shape.clone(), out)?,
        ArgmaxMap {
            input_shape: input.shape().to_vec(),
            output_shape: shape,
            indices,
        },
    ))
}

pub fn maxpool2d_backward(argmax: &ArgmaxMap, upstream: &Tensor) -> Result<Tensor> {
    if upstream.shape() != argmax.output_shape.as_slice() {
        return Err(Error::shape(&argmax.output_shape, upstream.shape()));
    }
    let mut grad = Tensor::zeros(&argmax.input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in argmax.indices.iter().zip(upstream.data()) {
        g[idx] += u;
    }
    Ok(grad)
}
