//! `GRNM` model container.
//!
//! ```text
//! "GRNM" | u32 version
//! u32 H | u32 W | u32 C | u32 kernel
//! u32 n_conv | n_conv × u32 channels
//! u32 n_dense | n_dense × u32 size | u32 num_classes
//! per conv layer:  u32 len, f32[len] kernel | u32 len, f32[len] bias
//! per dense layer: u32 len, f32[len] weights | u32 len, f32[len] bias   (head last)
//! u32 crc32 of all preceding bytes
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::{Cnn4Config, Cnn4Model};
use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dLayer, DenseLayer, Padding, Tensor};

const MAGIC: &[u8; 4] = b"GRNM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn model_bytes(model: &Cnn4Model) -> Vec<u8> {
    let cfg = model.config();
    let mut w = Writer::with_header(MAGIC, MODEL_FORMAT_VERSION);
    for v in cfg.input_shape {
        w.len_u32(v);
    }
    w.len_u32(cfg.kernel);
    w.len_u32(cfg.conv_channels.len());
    cfg.conv_channels.iter().for_each(|&c| w.len_u32(c));
    w.len_u32(cfg.dense_sizes.len());
    cfg.dense_sizes.iter().for_each(|&d| w.len_u32(d));
    w.len_u32(cfg.num_classes);
    for p in model.parameters() {
        w.f32s(p.data());
    }
    w.finish_checksummed()
}

pub fn save_model(model: &Cnn4Model, path: &Path) -> Result<()> {
    write_atomic(path, &model_bytes(model))
}

pub fn load_model(path: &Path) -> Result<Cnn4Model> {
    decode(&fs::read(path)?)
}

fn read_tensor(r: &mut Reader<'_>, shape: Vec<usize>) -> Result<Tensor> {
    let data = r.f32s()?;
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::Malformed(format!(
            "parameter array of {} values where shape {shape:?} needs {expected}",
            data.len()
        )));
    }
    Tensor::new(shape, data)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Cnn4Model> {
    let mut r = Reader::open_checksummed(bytes, MAGIC, MODEL_FORMAT_VERSION)?;
    let input_shape = [r.usize()?, r.usize()?, r.usize()?];
    let kernel = r.usize()?;
    let n_conv = r.usize()?;
    let conv_channels = (0..n_conv).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_dense = r.usize()?;
    let dense_sizes = (0..n_dense).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let num_classes = r.usize()?;
    let config = Cnn4Config {
        input_shape,
        conv_channels,
        kernel,
        dense_sizes,
        num_classes,
    };
    config.validate().map_err(|e| Error::Malformed(format!("stored config: {e}")))?;

    // Shapes follow from the config exactly as `Cnn4Model::build` derives them.
    let template = Cnn4Model::build(config.clone(), 0)?;
    let mut convs = Vec::with_capacity(n_conv);
    for c in template.convs() {
        let k = read_tensor(&mut r, c.kernel().shape().to_vec())?;
        let b = read_tensor(&mut r, c.bias().shape().to_vec())?;
        convs.push(Conv2dLayer::new(k, b, (1, 1), Padding::Same)?);
    }
    let mut dense = Vec::with_capacity(n_dense + 1);
    for d in template.dense_layers() {
        let wt = read_tensor(&mut r, d.weights().shape().to_vec())?;
        let b = read_tensor(&mut r, d.bias().shape().to_vec())?;
        dense.push(DenseLayer::new(wt, b)?);
    }
    r.expect_end()?;
    let head = dense.pop().expect("head layer");
    Ok(Cnn4Model::from_parts(config, convs, dense, head))
}
