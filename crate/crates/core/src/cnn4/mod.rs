//! The 4-block convolutional network, its named activation taps, deep-feature
//! extraction and the `GRNM` model file.

mod config;
mod features;
mod io;
mod model;

pub use config::Cnn4Config;
pub use features::{extract_deep_features, DeepFeatureVector, FeatureMatrix, TapLayout, FEATURE_FORMAT_VERSION};
pub use io::{load_model, model_bytes, save_model, MODEL_FORMAT_VERSION};
pub use model::{Cnn4Model, ForwardTrace, Gradients, LayerShape, ParameterCounts, TapActivations};
