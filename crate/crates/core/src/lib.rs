//! Deep-feature random forests.
//!
//! A small convolutional network is trained on 4-channel (H, S, V, gray)
//! images; activations from several of its layers are flattened into one
//! feature vector per image, and a bagged forest of CART trees is fitted on
//! those vectors. The crate also carries the preprocessing, dataset handling
//! and evaluation needed to compare the forest against the network's own
//! softmax head.

pub mod cnn4;
pub(crate) mod codec;
pub mod datasetio;
pub mod error;
pub mod evaluate;
pub mod forest;
pub mod imaging;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod test_util;

pub use codec::write_atomic;
pub use cnn4::{Cnn4Config, Cnn4Model, FeatureMatrix, TapLayout};
pub use error::{Error, Result};
pub use forest::{RandomForestModel, RfConfig};
pub use tensor::Tensor;
