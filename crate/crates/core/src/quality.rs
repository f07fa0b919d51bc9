//! Image quality measures: PSNR, SSIM and a no-reference exposure /
//! contrast / colorfulness score used as the automated oracle.

use crate::error::{Error, Result};
use crate::imaging::{luma, Image};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(p, q)| (0..3).map(move |k| (f64::from(p[k]) - f64::from(q[k])).powi(2)))
        .sum();
    let mse = sse / (3 * a.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn luma_plane(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|p| luma(p.map(f64::from))).collect()
}

/// Summed-area table with a zero border row/column.
fn integral(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, x: usize, y: usize, n: usize) -> f64 {
    let stride = w + 1;
    s[(y + n) * stride + x + n] - s[y * stride + x + n] - s[(y + n) * stride + x] + s[y * stride + x]
}

/// Mean SSIM of luma over all 8x8 windows (stride 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let ya = luma_plane(a);
    let yb = luma_plane(b);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();
    let (sa, sb) = (integral(&ya, w, h), integral(&yb, w, h));
    let (saa, sbb) = (integral(&sq(&ya), w, h), integral(&sq(&yb), w, h));
    let sab = integral(&prod, w, h);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let ma = window_sum(&sa, w, x, y, SSIM_WINDOW) / n;
            let mb = window_sum(&sb, w, x, y, SSIM_WINDOW) / n;
            let va = (window_sum(&saa, w, x, y, SSIM_WINDOW) / n - ma * ma).max(0.0);
            let vb = (window_sum(&sbb, w, x, y, SSIM_WINDOW) / n - mb * mb).max(0.0);
            let cov = window_sum(&sab, w, x, y, SSIM_WINDOW) / n - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// The three terms of [`nr_score`], each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrTerms {
    pub exposure: f64,
    pub contrast: f64,
    pub colorfulness: f64,
}

impl NrTerms {
    pub fn score(&self) -> f64 {
        0.4 * self.exposure + 0.3 * self.contrast + 0.3 * self.colorfulness
    }
}

pub fn nr_terms(image: &Image) -> NrTerms {
    let n = image.len() as f64;
    let ys = luma_plane(image);
    let mean = ys.iter().sum::<f64>() / n;
    let dev = ys.iter().map(|y| (y - 0.5).abs()).sum::<f64>() / n;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let spread = image
        .pixels()
        .iter()
        .map(|p| {
            let (hi, lo) = (p[0].max(p[1]).max(p[2]), p[0].min(p[1]).min(p[2]));
            f64::from(hi) - f64::from(lo)
        })
        .sum::<f64>()
        / n;
    NrTerms {
        exposure: (1.0 - dev / 0.5).clamp(0.0, 1.0),
        contrast: (std / 0.25).min(1.0),
        colorfulness: (spread / 0.3).min(1.0),
    }
}

/// `0.4 exposure + 0.3 contrast + 0.3 colorfulness`.
pub fn nr_score(image: &Image) -> f64 {
    nr_terms(image).score()
}
