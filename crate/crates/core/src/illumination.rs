//! Illumination map estimation (max-RGB initialization refined by edge-aware
//! weighted least squares), LIME-style brightening and a small bilateral
//! denoiser used after it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const DEFAULT_LAMBDA: f64 = 0.15;
pub const DEFAULT_EPS_A: f64 = 1e-3;
pub const DEFAULT_ITERS: usize = 50;
pub const DEFAULT_GAMMA: f64 = 0.8;
pub const EPS_T: f64 = 1e-3;
const DENOISE_SIGMA_RANGE: f64 = 0.1;

/// Per-pixel environment brightness estimate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap {
    width: usize,
    height: usize,
    t: Vec<f64>,
}

impl IlluminationMap {
    pub fn new(width: usize, height: usize, t: Vec<f64>) -> Result<Self> {
        if t.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: t.len(),
            });
        }
        if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                what: "illumination",
                value: *v,
                lower: 0.0,
                upper: 1.0,
            });
        }
        Ok(Self { width, height, t })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    /// Box-downsampled copy matching [`crate::imaging::resize_for_preview`].
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let planes: Vec<[f64; 1]> = self.t.iter().map(|&v| [v]).collect();
        let t = crate::imaging::box_downsample(&planes, self.width, self.height, width, height)
            .into_iter()
            .map(|[v]| v.clamp(0.0, 1.0))
            .collect();
        Self { width, height, t }
    }
}

/// `t_n = max(r_n, g_n, b_n)`.
pub fn initial_illumination(image: &Image) -> IlluminationMap {
    let t = image
        .pixels()
        .iter()
        .map(|p| f64::from(p[0].max(p[1]).max(p[2])))
        .collect();
    IlluminationMap {
        width: image.width(),
        height: image.height(),
        t,
    }
}

/// Gauss-Seidel relaxation of
/// `sum (t - t0)^2 + lambda * sum_adjacent a_nm (t_n - t_m)^2`
/// with `a_nm = 1 / (|t0_n - t0_m| + eps_a)`.
pub fn refine_illumination_with(
    t0: &IlluminationMap,
    image: &Image,
    lambda: f64,
    eps_a: f64,
    iters: usize,
) -> Result<IlluminationMap> {
    if (t0.width, t0.height) != (image.width(), image.height()) {
        return Err(Error::DimensionMismatch {
            expected: image.len(),
            actual: t0.t.len(),
        });
    }
    if lambda < 0.0 {
        return Err(Error::OutOfRange {
            what: "lambda",
            value: lambda,
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    if lambda == 0.0 || iters == 0 {
        return Ok(t0.clone());
    }
    let (w, h) = (t0.width, t0.height);
    let src = &t0.t;
    // Coupling to the right / lower neighbour, zero at the border.
    let right: Vec<f64> = (0..w * h)
        .map(|n| {
            if n % w + 1 < w {
                lambda / ((src[n] - src[n + 1]).abs() + eps_a)
            } else {
                0.0
            }
        })
        .collect();
    let down: Vec<f64> = (0..w * h)
        .map(|n| {
            if n + w < w * h {
                lambda / ((src[n] - src[n + w]).abs() + eps_a)
            } else {
                0.0
            }
        })
        .collect();

    let mut t = src.clone();
    for _ in 0..iters {
        for n in 0..w * h {
            let (x, y) = (n % w, n / w);
            let mut num = src[n];
            let mut den = 1.0;
            if x + 1 < w {
                num += right[n] * t[n + 1];
                den += right[n];
            }
            if x > 0 {
                num += right[n - 1] * t[n - 1];
                den += right[n - 1];
            }
            if y + 1 < h {
                num += down[n] * t[n + w];
                den += down[n];
            }
            if y > 0 {
                num += down[n - w] * t[n - w];
                den += down[n - w];
            }
            t[n] = num / den;
        }
    }
    for v in &mut t {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(IlluminationMap { width: w, height: h, t })
}

pub fn refine_illumination(
    t0: &IlluminationMap,
    image: &Image,
    lambda: f64,
    iters: usize,
) -> Result<IlluminationMap> {
    refine_illumination_with(t0, image, lambda, DEFAULT_EPS_A, iters)
}

/// Max-RGB initialization refined with the default smoothing settings.
pub fn estimate_illumination(image: &Image) -> IlluminationMap {
    let t0 = initial_illumination(image);
    refine_illumination(&t0, image, DEFAULT_LAMBDA, DEFAULT_ITERS)
        .expect("dimensions match by construction")
}

/// Divides every channel by `max(t^gamma, EPS_T)` with `t` the refined
/// illumination, then clamps.
pub fn lime_preprocess(image: &Image, gamma: f64) -> Image {
    let t = estimate_illumination(image);
    lime_with_map(image, &t, gamma)
}

pub fn lime_with_map(image: &Image, t: &IlluminationMap, gamma: f64) -> Image {
    let data = image
        .pixels()
        .par_iter()
        .zip(t.t.par_iter())
        .map(|(px, &tn)| {
            let denom = tn.powf(gamma).max(EPS_T);
            px.map(|c| (f64::from(c) / denom).clamp(0.0, 1.0) as f32)
        })
        .collect();
    Image::from_parts(image.width(), image.height(), data)
}

/// Bilateral smoothing with spatial radius `strength` (capped at 3); 0 is a no-op.
pub fn denoise(image: &Image, strength: u8) -> Image {
    let radius = usize::from(strength.min(3));
    if radius == 0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let px = image.pixels();
    let sigma_s = radius as f64;
    let inv_2ss = 1.0 / (2.0 * sigma_s * sigma_s);
    let inv_2rr = 1.0 / (2.0 * DENOISE_SIGMA_RANGE * DENOISE_SIGMA_RANGE);
    let data = (0..w * h)
        .into_par_iter()
        .map(|n| {
            let (x, y) = (n % w, n / w);
            let c = px[n].map(f64::from);
            let mut acc = [0.0f64; 3];
            let mut wsum = 0.0;
            for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    let q = px[yy * w + xx].map(f64::from);
                    let dx = xx as f64 - x as f64;
                    let dy = yy as f64 - y as f64;
                    let dr: f64 = (0..3).map(|k| (q[k] - c[k]).powi(2)).sum();
                    let wt = (-(dx * dx + dy * dy) * inv_2ss - dr * inv_2rr).exp();
                    for k in 0..3 {
                        acc[k] += wt * q[k];
                    }
                    wsum += wt;
                }
            }
            acc.map(|a| (a / wsum).clamp(0.0, 1.0) as f32)
        })
        .collect();
    Image::from_parts(w, h, data)
}
