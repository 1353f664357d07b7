//! Deep-feature vectors and the `GRFX` matrix file.
//!
//! ```text
//! "GRFX" | u32 version | u64 rows | u64 cols
//! u32 n_taps | n_taps × (u32 name_len, utf-8 name, u64 offset, u64 len)
//! rows × cols f32, row-major
//! ```
//! Little-endian throughout; no trailer.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::Cnn4Model;
use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GRFX";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

/// Where one tap's flattened activation sits inside a feature vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapLayout {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepFeatureVector {
    pub values: Vec<f32>,
    pub layout: Vec<TapLayout>,
}

/// One deep-feature vector per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    layout: Vec<TapLayout>,
    data: Vec<f32>,
}

fn layout_for<S: AsRef<str>>(model: &Cnn4Model, taps: &[S]) -> Result<Vec<TapLayout>> {
    let mut offset = 0;
    model
        .tap_shapes(taps)?
        .into_iter()
        .map(|(name, shape)| {
            let len = shape.iter().product();
            let slot = TapLayout { name, offset, len };
            offset += len;
            Ok(slot)
        })
        .collect()
}

impl Cnn4Model {
    /// Flattens each requested tap and concatenates them in registry order.
    pub fn deep_features<S: AsRef<str>>(&self, image: &Tensor, taps: &[S]) -> Result<DeepFeatureVector> {
        let layout = layout_for(self, taps)?;
        let (_, acts) = self.forward_with_taps(image, taps)?;
        let mut values = Vec::with_capacity(layout.iter().map(|l| l.len).sum());
        for (_, t) in &acts {
            values.extend_from_slice(t.data());
        }
        Ok(DeepFeatureVector { values, layout })
    }
}

/// Deep features for every image; row `i` belongs to `images[i]`.
pub fn extract_deep_features<S: AsRef<str> + Sync>(
    model: &Cnn4Model,
    images: &[Tensor],
    taps: &[S],
) -> Result<FeatureMatrix> {
    let layout = layout_for(model, taps)?;
    let cols = layout.iter().map(|l| l.len).sum();
    if let Some(first) = images.first() {
        if let Some(bad) = images.iter().find(|im| im.shape() != first.shape()) {
            return Err(Error::shape(first.shape(), bad.shape()));
        }
    }
    let rows: Vec<Vec<f32>> = images
        .par_iter()
        .map(|im| model.deep_features(im, taps).map(|v| v.values))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(rows.len() * cols);
    rows.iter().for_each(|r| data.extend_from_slice(r));
    FeatureMatrix::new(images.len(), cols, layout, data)
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, layout: Vec<TapLayout>, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: rows * cols,
                right: data.len(),
            });
        }
        let mut expect = 0;
        for slot in &layout {
            if slot.offset != expect {
                return Err(Error::Malformed(format!("tap `{}` is not contiguous", slot.name)));
            }
            expect += slot.len;
        }
        if !layout.is_empty() && expect != cols {
            return Err(Error::Malformed(format!("layout covers {expect} of {cols} columns")));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            layout,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> &[TapLayout] {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(MAGIC, FEATURE_FORMAT_VERSION);
        w.u64(self.rows as u64);
        w.u64(self.cols as u64);
        w.len_u32(self.layout.len());
        for slot in &self.layout {
            w.str(&slot.name);
            w.u64(slot.offset as u64);
            w.u64(slot.len as u64);
        }
        w.raw_f32s(&self.data);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, FEATURE_FORMAT_VERSION)?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = r.usize()?;
        let mut layout = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let name = r.str()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            layout.push(TapLayout { name, offset, len });
        }
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Malformed("matrix size overflows".into()))?;
        let data = r.raw_f32s(count)?;
        r.expect_end()?;
        FeatureMatrix::new(rows, cols, layout, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Plain CSV with a `tap[i]` header per column; meant for small matrices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = self
            .layout
            .iter()
            .flat_map(|s| (0..s.len).map(move |i| format!("{}[{i}]", s.name)))
            .collect();
        if !header.is_empty() {
            w.write_record(&header)?;
        }
        for i in 0..self.rows {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
