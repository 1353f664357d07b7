use super::gemm::{sgemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `out = ceil(in / stride)`; odd padding puts the
    /// extra row/column at the bottom/right.
    Same,
    Valid,
}

/// 2-D convolution (cross-correlation, no kernel flip) over HWC images.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    kernel: Tensor,
    bias: Tensor,
    stride: (usize, usize),
    padding: Padding,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv2dLayer {
    /// `kernel` is `[K_h, K_w, C_in, C_out]`, `bias` is `[C_out]`.
    pub fn new(kernel: Tensor, bias: Tensor, stride: (usize, usize), padding: Padding) -> Result<Self> {
        let &[_, _, _, c_out] = kernel.shape() else {
            return Err(Error::shape("[K, K, C_in, C_out]", kernel.shape()));
        };
        if bias.shape() != [c_out] {
            return Err(Error::shape([c_out], bias.shape()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidSpec("stride must be positive".into()));
        }
        Ok(Conv2dLayer {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn kernel_mut(&mut self) -> &mut [f32] {
        self.kernel.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        self.bias.data_mut()
    }

    /// Kernel and bias buffers, mutably.
    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (self.kernel.data_mut(), self.bias.data_mut())
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Output `[H, W, C_out]` for an input of spatial size `h × w`.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        let g = Geometry::new(h, w, self)?;
        Ok([g.out_h, g.out_w, self.out_channels()])
    }
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    c_in: usize,
    k_h: usize,
    k_w: usize,
    s_h: usize,
    s_w: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn axis(input: usize, window: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    let (out, pad_total) = match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = (out - 1) * stride + window;
            (out, needed.saturating_sub(input))
        }
        Padding::Valid => {
            if window > input {
                return Err(Error::InvalidSpec(format!(
                    "window {window} exceeds input extent {input}"
                )));
            }
            ((input - window) / stride + 1, 0)
        }
    };
    Ok((out, pad_total / 2))
}

impl Geometry {
    fn new(in_h: usize, in_w: usize, layer: &Conv2dLayer) -> Result<Self> {
        let ks = layer.kernel.shape();
        let (k_h, k_w, c_in) = (ks[0], ks[1], ks[2]);
        let (s_h, s_w) = layer.stride;
        let (out_h, pad_top) = axis(in_h, k_h, s_h, layer.padding)?;
        let (out_w, pad_left) = axis(in_w, k_w, s_w, layer.padding)?;
        Ok(Geometry {
            in_h,
            in_w,
            c_in,
            k_h,
            k_w,
            s_h,
            s_w,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.c_in
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source row/column for output `o` and kernel tap `d`, if inside the image.
    fn source(o: usize, d: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + d).checked_sub(pad).filter(|&i| i < extent)
    }

    fn im2col(&self, input: &[f32]) -> Vec<f32> {
        let c = self.c_in;
        let mut cols = vec![0.0f32; self.positions() * self.patch_len()];
        for (p, row) in cols.chunks_exact_mut(self.patch_len()).enumerate() {
            let (oy, ox) = (p / self.out_w, p % self.out_w);
            for dy in 0..self.k_h {
                let Some(iy) = Self::source(oy, dy, self.s_h, self.pad_top, self.in_h) else {
                    continue;
                };
                for dx in 0..self.k_w {
                    let Some(ix) = Self::source(ox, dx, self.s_w, self.pad_left, self.in_w) else {
                        continue;
                    };
                    let src = (iy * self.in_w + ix) * c;
                    let dst = (dy * self.k_w + dx) * c;
                    row[dst..dst + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let c = self.c_in;
        let mut out = vec![0.0f32; self.in_h * self.in_w * c];
        for (p, row) in cols.chunks_exact(self.patch_len()).enumerate() {
            let (oy, ox) = (p / self.out_w, p % self.out_w);
            for dy in 0..self.k_h {
                let Some(iy) = Self::source(oy, dy, self.s_h, self.pad_top, self.in_h) else {
                    continue;
                };
                for dx in 0..self.k_w {
                    let Some(ix) = Self::source(ox, dx, self.s_w, self.pad_left, self.in_w) else {
                        continue;
                    };
                    let dst = (iy * self.in_w + ix) * c;
                    let src = (dy * self.k_w + dx) * c;
                    out[dst..dst + c]
                        .iter_mut()
                        .zip(&row[src..src + c])
                        .for_each(|(o, g)| *o += g);
                }
            }
        }
        out
    }
}

fn checked_geometry(input: &Tensor, layer: &Conv2dLayer) -> Result<Geometry> {
    let (h, w, c) = input.hwc()?;
    if c != layer.in_channels() {
        return Err(Error::shape(
            format!("{} input channels", layer.in_channels()),
            format!("{c} channels"),
        ));
    }
    Geometry::new(h, w, layer)
}

pub fn conv2d_forward(input: &Tensor, layer: &Conv2dLayer) -> Result<Tensor> {
    let g = checked_geometry(input, layer)?;
    let c_out = layer.out_channels();
    let cols = g.im2col(input.data());
    let mut out: Vec<f32> = layer
        .bias
        .data()
        .iter()
        .copied()
        .cycle()
        .take(g.positions() * c_out)
        .collect();
    sgemm(
        g.positions(),
        g.patch_len(),
        c_out,
        &cols,
        Layout::row_major(g.patch_len()),
        layer.kernel.data(),
        Layout::row_major(c_out),
        1.0,
        &mut out,
    );
    Tensor::new(vec![g.out_h, g.out_w, c_out], out)
}

pub fn conv2d_backward(input: &Tensor, layer: &Conv2dLayer, upstream: &Tensor) -> Result<ConvGrads> {
    let g = checked_geometry(input, layer)?;
    let c_out = layer.out_channels();
    if upstream.shape() != [g.out_h, g.out_w, c_out] {
        return Err(Error::shape([g.out_h, g.out_w, c_out], upstream.shape()));
    }
    let up = upstream.data();

    let mut grad_bias = vec![0.0f32; c_out];
    for row in up.chunks_exact(c_out) {
        grad_bias.iter_mut().zip(row).for_each(|(b, u)| *b += u);
    }

    let cols = g.im2col(input.data());
    let mut grad_kernel = vec![0.0f32; g.patch_len() * c_out];
    sgemm(
        g.patch_len(),
        g.positions(),
        c_out,
        &cols,
        Layout::transposed(g.patch_len()),
        up,
        Layout::row_major(c_out),
        0.0,
        &mut grad_kernel,
    );

    let mut grad_cols = vec![0.0f32; g.positions() * g.patch_len()];
    sgemm(
        g.positions(),
        c_out,
        g.patch_len(),
        up,
        Layout::row_major(c_out),
        layer.kernel.data(),
        Layout::transposed(c_out),
        0.0,
        &mut grad_cols,
    );
    let grad_input = g.col2im(&grad_cols);

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        kernel: Tensor::new(layer.kernel.shape().to_vec(), grad_kernel)?,
        bias: Tensor::new(vec![c_out], grad_bias)?,
    })
}
