use crate::error::{Error, Result};

/// Shape of the network. The default mirrors the published 4-layer model:
/// 100×100×4 input, 5×5 "same" convolutions with 16/32/64/128 filters, each
/// followed by ReLU and 2×2 max pooling, then dense 1024 → 256 → classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cnn4Config {
    pub input_shape: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub dense_sizes: Vec<usize>,
    pub num_classes: usize,
}

impl Default for Cnn4Config {
    fn default() -> Self {
        Cnn4Config {
            input_shape: [100, 100, 4],
            conv_channels: vec![16, 32, 64, 128],
            kernel: 5,
            dense_sizes: vec![1024, 256],
            num_classes: 120,
        }
    }
}

impl Cnn4Config {
    pub fn with_classes(num_classes: usize) -> Self {
        Cnn4Config {
            num_classes,
            ..Default::default()
        }
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_shape[0] = height;
        self.input_shape[1] = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_shape;
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must be non-empty and positive".into()));
        }
        if self.dense_sizes.contains(&0) {
            return Err(Error::Config("dense sizes must be positive".into()));
        }
        if self.kernel == 0 || c == 0 {
            return Err(Error::Config("kernel and input channels must be positive".into()));
        }
        // Every pooling stage halves the map; it must not collapse to zero.
        let min = 1usize << self.conv_channels.len();
        if h < min || w < min {
            return Err(Error::Config(format!(
                "input {h}x{w} is too small for {} pooling stages (need at least {min})",
                self.conv_channels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}
