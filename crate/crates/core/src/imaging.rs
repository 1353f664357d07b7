//! Background removal, colour-space conversion, 4-channel stacking and
//! resizing of 8-bit RGB images.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default per-channel gap for [`flood_fill_background`].
pub const DEFAULT_FILL_THRESHOLD: u8 = 12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRgb8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec(format!("image size {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, pixels.len()));
        }
        Ok(ImageRgb8 { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        ImageRgb8 { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackgroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BackgroundMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(width * height, bits.len()));
        }
        Ok(BackgroundMask { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_background(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn within(a: [u8; 3], b: [u8; 3], threshold: u8) -> bool {
    a.iter().zip(&b).all(|(&p, &q)| p.abs_diff(q) <= threshold)
}

/// Breadth-first fill from the four corners over 4-connected neighbours. A
/// neighbour joins when every channel differs from the pixel it is reached
/// from by at most `threshold`.
pub fn flood_fill_background(image: &ImageRgb8, threshold: u8) -> BackgroundMask {
    let (w, h) = (image.width, image.height);
    let mut bits = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
        if !bits[y * w + x] {
            bits[y * w + x] = true;
            queue.push_back((x, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let here = image.get(x, y);
        let neighbours = [
            (x > 0).then(|| (x - 1, y)),
            (x + 1 < w).then(|| (x + 1, y)),
            (y > 0).then(|| (x, y - 1)),
            (y + 1 < h).then(|| (x, y + 1)),
        ];
        for (nx, ny) in neighbours.into_iter().flatten() {
            let i = ny * w + nx;
            if !bits[i] && within(here, image.get(nx, ny), threshold) {
                bits[i] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    BackgroundMask { width: w, height: h, bits }
}

/// Paints background pixels white.
pub fn apply_background(image: &ImageRgb8, mask: &BackgroundMask) -> Result<ImageRgb8> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::shape(
            (image.width, image.height),
            (mask.width, mask.height),
        ));
    }
    let mut out = image.clone();
    for (px, &bg) in out.pixels.chunks_exact_mut(3).zip(&mask.bits) {
        if bg {
            px.copy_from_slice(&[255, 255, 255]);
        }
    }
    Ok(out)
}

/// Hexcone HSV, each component in [0, 1]; hue is degrees / 360.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f32, f32, f32) {
    let (rf, gf, bf) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let chroma = max - min;
    let s = if max == 0.0 { 0.0 } else { chroma / max };
    let deg = if chroma == 0.0 {
        0.0
    } else if max == rf {
        60.0 * ((gf - bf) / chroma).rem_euclid(6.0)
    } else if max == gf {
        60.0 * ((bf - rf) / chroma + 2.0)
    } else {
        60.0 * ((rf - gf) / chroma + 4.0)
    };
    let h = (deg / 360.0).clamp(0.0, 1.0);
    (h as f32, s as f32, max as f32)
}

/// BT.601 luma scaled to [0, 1].
pub fn rgb_to_gray(r: u8, g: u8, b: u8) -> f32 {
    let y = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
    y.clamp(0.0, 1.0) as f32
}

/// `[H, W, 4]` tensor with channels (H, S, V, Gray).
pub fn make_4channel(image: &ImageRgb8) -> Tensor {
    let mut data = Vec::with_capacity(image.width * image.height * 4);
    for px in image.pixels.chunks_exact(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        data.extend_from_slice(&[h, s, v, rgb_to_gray(px[0], px[1], px[2])]);
    }
    Tensor::new(vec![image.height, image.width, 4], data).expect("shape matches pixel count")
}

/// Source coordinate for output index `i` when the corner pixel centres of
/// both grids coincide.
fn source_coord(i: usize, out: usize, inp: usize) -> f64 {
    if out == 1 {
        (inp as f64 - 1.0) / 2.0
    } else {
        i as f64 * (inp as f64 - 1.0) / (out as f64 - 1.0)
    }
}

/// Bilinear resize. Output corner pixels sample the input corner pixels
/// exactly, so equal sizes give an identical image.
pub fn resize_image(image: &ImageRgb8, width: usize, height: usize) -> Result<ImageRgb8> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSpec(format!("resize target {width}x{height}")));
    }
    if (width, height) == (image.width, image.height) {
        return Ok(image.clone());
    }
    let mut out = vec![0u8; width * height * 3];
    let xs: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| {
            let sx = source_coord(x, width, image.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            (x0, x1, sx - x0 as f64)
        })
        .collect();
    for y in 0..height {
        let sy = source_coord(y, height, image.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let fy = sy - y0 as f64;
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let (a, b, c, d) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y * width + x) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageRgb8::new(width, height, out)
}

/// Decodes any supported raster file to 8-bit RGB, discarding alpha.
pub fn load_image(path: &Path) -> Result<ImageRgb8> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageRgb8::new(w as usize, h as usize, rgb.into_raw()).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// PNG encoding of `image`, deterministic for identical pixels.
pub fn png_bytes(image: &ImageRgb8) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut buf,
        &image.pixels,
        image.width as u32,
        image.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(buf.into_inner())
}

/// Steps applied to every image before it reaches the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImagingConfig {
    /// Output `(height, width)`; `None` keeps the decoded size.
    pub size: Option<(usize, usize)>,
    /// Flood-fill threshold; `None` skips background removal.
    pub flood_fill: Option<u8>,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            size: Some((100, 100)),
            flood_fill: None,
        }
    }
}

/// Background removal (optional), resize (optional), then 4-channel stack.
pub fn preprocess(image: &ImageRgb8, config: &ImagingConfig) -> Result<Tensor> {
    let mut img = match config.flood_fill {
        Some(t) => apply_background(image, &flood_fill_background(image, t))?,
        None => image.clone(),
    };
    if let Some((h, w)) = config.size {
        img = resize_image(&img, w, h)?;
    }
    Ok(make_4channel(&img))
}
