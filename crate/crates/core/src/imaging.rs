//! RGB raster type, PNG/JPEG codecs and the three per-pixel editing functions
//! (brightness, saturation, contrast) driven by a parameter map.
//!
//! Channel values live in `[0, 1]` as `f32`; quantization to 8 bits only
//! happens in [`save_image`] / [`encode_png`].

use std::io::Cursor;
use std::ops::Range;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of editing functions (brightness, saturation, contrast).
pub const M: usize = 3;

/// Rec. 601 luma weights used by the saturation edit and the quality metrics.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[inline]
pub fn luma(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                what: "channel value",
                value: f64::from(*v),
                lower: 0.0,
                upper: 1.0,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    /// Builds an image from a closure over `(column, row)`; values are clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).map(|c| c.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<[f32; 3]> {
        self.data
    }

    /// Internal constructor for pixel buffers already known to be in range.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<[f32; 3]>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.data) {
            dst.0 = src.map(quantize);
        }
        out
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::EmptyImage { width: w, height: h });
        }
        let data = img
            .pixels()
            .map(|p| p.0.map(|v| f32::from(v) / 255.0))
            .collect();
        Ok(Self::from_parts(w, h, data))
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Per-pixel edit parameters `(brightness, saturation, contrast)`, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector(pub [f64; M]);

impl ParamVector {
    pub const ZERO: ParamVector = ParamVector([0.0; M]);

    pub fn new(values: [f64; M]) -> Result<Self> {
        for &v in &values {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    what: "edit parameter",
                    value: v,
                    lower: -1.0,
                    upper: 1.0,
                });
            }
        }
        Ok(Self(values))
    }

    pub fn clamped(values: [f64; M]) -> Self {
        Self(values.map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn brightness(&self) -> f64 {
        self.0[0]
    }

    pub fn saturation(&self) -> f64 {
        self.0[1]
    }

    pub fn contrast(&self) -> f64 {
        self.0[2]
    }
}

/// One [`ParamVector`]-like row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    rows: Vec<[f64; M]>,
}

impl ParamMap {
    pub fn new(rows: Vec<[f64; M]>) -> Result<Self> {
        if let Some(v) = rows.iter().flatten().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                what: "edit parameter",
                value: *v,
                lower: -1.0,
                upper: 1.0,
            });
        }
        Ok(Self { rows })
    }

    pub fn zeros(n_pixels: usize) -> Self {
        Self {
            rows: vec![[0.0; M]; n_pixels],
        }
    }

    /// Clamps every component into `[-1, 1]`.
    pub fn from_unclamped(mut rows: Vec<[f64; M]>) -> Self {
        for row in &mut rows {
            for v in row.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        Self { rows }
    }

    pub fn rows(&self) -> &[[f64; M]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, n: usize) -> ParamVector {
        ParamVector(self.rows[n])
    }
}

/// Broadcasts one parameter vector to every pixel (the global filter).
pub fn global_map(p: ParamVector, n_pixels: usize) -> ParamMap {
    ParamMap {
        rows: vec![p.0; n_pixels],
    }
}

/// Brightness (`c * 2^p1`), then luma-anchored saturation, then
/// midpoint-anchored contrast, then clamp. `p = 0` is an exact identity.
#[inline]
pub fn apply_edit(rgb: [f64; 3], p: &[f64; M]) -> [f64; 3] {
    let gain = p[0].exp2();
    let b = rgb.map(|c| c * gain);
    let y = luma(b);
    let s = b.map(|c| c + p[1] * (c - y));
    s.map(|c| (c + p[2] * (c - 0.5)).clamp(0.0, 1.0))
}

#[inline]
pub(crate) fn apply_edit_f32(rgb: [f32; 3], p: &[f64; M]) -> [f32; 3] {
    apply_edit(rgb.map(f64::from), p).map(|c| c as f32)
}

/// Applies `pmap` row `n` to pixel `n`.
pub fn apply_param_map(image: &Image, pmap: &ParamMap) -> Result<Image> {
    if pmap.len() != image.len() {
        return Err(Error::DimensionMismatch {
            expected: image.len(),
            actual: pmap.len(),
        });
    }
    let data = image
        .data
        .par_iter()
        .zip(pmap.rows.par_iter())
        .map(|(px, p)| apply_edit_f32(*px, p))
        .collect();
    Ok(Image::from_parts(image.width, image.height, data))
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let format = image::guess_format(bytes).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::EmptyImage {
            width: decoded.width() as usize,
            height: decoded.height() as usize,
        });
    }
    Image::from_rgb8(&decoded.to_rgb8())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image(&bytes)
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    image
        .to_rgb8()
        .write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(image)).map_err(|e| Error::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Output dimensions so that the longest edge is at most `max_edge`.
pub fn preview_dims(width: usize, height: usize, max_edge: usize) -> (usize, usize) {
    let max_edge = max_edge.max(1);
    let longest = width.max(height);
    if longest <= max_edge {
        return (width, height);
    }
    let scale = max_edge as f64 / longest as f64;
    let w = ((width as f64 * scale).round() as usize).clamp(1, max_edge);
    let h = ((height as f64 * scale).round() as usize).clamp(1, max_edge);
    (w, h)
}

/// Source index range covered by destination cell `i` when mapping `src` cells onto `dst`.
fn box_span(i: usize, src: usize, dst: usize) -> Range<usize> {
    let lo = i * src / dst;
    let hi = (((i + 1) * src).div_ceil(dst)).max(lo + 1).min(src);
    lo..hi
}

/// Box-filter downsample of an arbitrary per-pixel plane.
pub fn box_downsample<T, const C: usize>(
    values: &[[T; C]],
    width: usize,
    height: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<[T; C]>
where
    T: Copy + Into<f64> + FromF64 + Send + Sync,
{
    let spans_x: Vec<_> = (0..out_w).map(|i| box_span(i, width, out_w)).collect();
    (0..out_w * out_h)
        .into_par_iter()
        .map(|k| {
            let (ox, oy) = (k % out_w, k / out_w);
            let ry = box_span(oy, height, out_h);
            let rx = &spans_x[ox];
            let mut acc = [0.0f64; C];
            let mut count = 0usize;
            for y in ry {
                for v in &values[y * width + rx.start..y * width + rx.end] {
                    for (a, c) in acc.iter_mut().zip(v) {
                        *a += (*c).into();
                    }
                    count += 1;
                }
            }
            acc.map(|a| T::from_f64(a / count as f64))
        })
        .collect()
}

pub trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Box-filter downsample so the longest edge is at most `max_edge`; small
/// images are returned unchanged.
pub fn resize_for_preview(image: &Image, max_edge: usize) -> Image {
    let (w, h) = preview_dims(image.width, image.height, max_edge);
    if (w, h) == (image.width, image.height) {
        return image.clone();
    }
    let data = box_downsample(&image.data, image.width, image.height, w, h);
    Image::from_parts(w, h, data)
}
