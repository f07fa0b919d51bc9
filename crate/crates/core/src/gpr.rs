//! Pixel features, the exponential kernel and the GPR weight-map
//! factorization of the local filter.
//!
//! With key pixels `n_1..n_L`, Gram matrix `K` (kernel plus `r` on the
//! diagonal) and `k_n` the kernel vector between pixel `n` and the keys, the
//! predicted parameters are `p_n = (k_n^T K^-1 Q)^T`. Stacking
//! `k_n^T K^-1` over all pixels gives the `N x L` weight matrix `W`, so the
//! whole parameter map is `P = W Q = sum_l w_l p_{n_l}^T`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::illumination::IlluminationMap;
use crate::imaging::{Image, ParamMap, ParamVector, M};

pub type Feature = [f64; 3];

/// Kernel hyperparameters. `regularizer` is the `r` added to the Gram diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub length_scale: f64,
    pub regularizer: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.5,
            regularizer: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::Config(format!(
                "length_scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.regularizer >= 0.0 && self.regularizer.is_finite()) {
            return Err(Error::Config(format!(
                "regularizer must be non-negative, got {}",
                self.regularizer
            )));
        }
        Ok(())
    }
}

/// `exp(-||s o (a - b)|| / length_scale)`.
#[inline]
pub fn kernel(a: &Feature, b: &Feature, scales: &Feature, cfg: &KernelConfig) -> f64 {
    let d2: f64 = (0..3).map(|k| (scales[k] * (a[k] - b[k])).powi(2)).sum();
    (-d2.sqrt() / cfg.length_scale).exp()
}

/// Normalized `(x, y, t)` per pixel plus per-dimension scales.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatures {
    width: usize,
    height: usize,
    rows: Vec<Feature>,
    scales: Feature,
}

impl PixelFeatures {
    pub fn rows(&self) -> &[Feature] {
        &self.rows
    }

    pub fn row(&self, n: usize) -> &Feature {
        &self.rows[n]
    }

    pub fn scales(&self) -> &Feature {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Features from explicit rows, for tests and synthetic instances.
    pub fn from_rows(rows: Vec<Feature>, scales: Feature) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyImage { width: 0, height: 0 });
        }
        validate_scales(&scales)?;
        Ok(Self {
            width: rows.len(),
            height: 1,
            rows,
            scales,
        })
    }

    pub fn kernel_between(&self, a: usize, b: usize, cfg: &KernelConfig) -> f64 {
        kernel(&self.rows[a], &self.rows[b], &self.scales, cfg)
    }

    /// Scaled Euclidean distance, used by the farthest-point baseline.
    pub fn scaled_distance(&self, a: &Feature, b: &Feature) -> f64 {
        (0..3)
            .map(|k| (self.scales[k] * (a[k] - b[k])).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn validate_scales(scales: &Feature) -> Result<()> {
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || scales.iter().all(|s| *s == 0.0) {
        return Err(Error::Config(format!("invalid feature scales {scales:?}")));
    }
    Ok(())
}

/// `x = col / (width - 1)`, `y = row / (height - 1)` (0 along a degenerate
/// single-pixel edge), `t` from the illumination map.
pub fn pixel_features(image: &Image, t: &IlluminationMap, scales: Feature) -> Result<PixelFeatures> {
    if (t.width(), t.height()) != (image.width(), image.height()) {
        return Err(Error::DimensionMismatch {
            expected: image.len(),
            actual: t.values().len(),
        });
    }
    features_from_map(t, scales)
}

/// Same as [`pixel_features`] but from the illumination map alone.
pub fn features_from_map(t: &IlluminationMap, scales: Feature) -> Result<PixelFeatures> {
    validate_scales(&scales)?;
    let (w, h) = (t.width(), t.height());
    let norm = |v: usize, extent: usize| {
        if extent > 1 {
            v as f64 / (extent - 1) as f64
        } else {
            0.0
        }
    };
    let rows = t
        .values()
        .iter()
        .enumerate()
        .map(|(n, &tn)| [norm(n % w, w), norm(n / w, h), tn])
        .collect();
    Ok(PixelFeatures {
        width: w,
        height: h,
        rows,
        scales,
    })
}

/// Key pixel indices in selection order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPixels(Vec<usize>);

impl KeyPixels {
    pub fn new(indices: Vec<usize>, n_pixels: usize) -> Result<Self> {
        for (i, &n) in indices.iter().enumerate() {
            if n >= n_pixels {
                return Err(Error::IndexOutOfRange {
                    what: "pixel",
                    index: n,
                    len: n_pixels,
                });
            }
            if indices[..i].contains(&n) {
                return Err(Error::AlreadySelected(n));
            }
        }
        Ok(Self(indices))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, n: usize) -> bool {
        self.0.contains(&n)
    }

    pub(crate) fn push(&mut self, n: usize) {
        self.0.push(n);
    }
}

/// `K_ij = kappa(x_{n_i}, x_{n_j}) + r [i = j]`.
pub fn gram_matrix(features: &PixelFeatures, keys: &KeyPixels, cfg: &KernelConfig) -> DMatrix<f64> {
    let l = keys.len();
    DMatrix::from_fn(l, l, |i, j| {
        let k = features.kernel_between(keys.0[i], keys.0[j], cfg);
        if i == j {
            k + cfg.regularizer
        } else {
            k
        }
    })
}

/// Cholesky factor of a Gram matrix together with the key features it was
/// built from.
#[derive(Debug, Clone)]
pub struct GramFactor {
    key_features: Vec<Feature>,
    scales: Feature,
    cfg: KernelConfig,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl GramFactor {
    pub fn new(features: &PixelFeatures, keys: &KeyPixels, cfg: &KernelConfig) -> Result<Self> {
        let key_features = keys.0.iter().map(|&n| features.rows[n]).collect();
        Self::from_key_features(key_features, features.scales, cfg)
    }

    pub fn from_key_features(key_features: Vec<Feature>, scales: Feature, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        let l = key_features.len();
        if l == 0 {
            return Ok(Self {
                key_features,
                scales,
                cfg: *cfg,
                chol: None,
            });
        }
        let gram = DMatrix::from_fn(l, l, |i, j| {
            let k = kernel(&key_features[i], &key_features[j], &scales, cfg);
            if i == j {
                k + cfg.regularizer
            } else {
                k
            }
        });
        let chol = Cholesky::new(gram).ok_or(Error::SingularGram)?;
        let diag = chol.l_dirty().diagonal();
        let max = diag.max();
        if diag.iter().any(|d| *d <= max * 1e-7) {
            return Err(Error::SingularGram);
        }
        Ok(Self {
            key_features,
            scales,
            cfg: *cfg,
            chol: Some(chol),
        })
    }

    pub fn len(&self) -> usize {
        self.key_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_features.is_empty()
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    pub fn scales(&self) -> &Feature {
        &self.scales
    }

    pub fn key_features(&self) -> &[Feature] {
        &self.key_features
    }

    /// `k_x`: kernel between `x` and every key feature (no regularizer).
    pub fn kernel_vector(&self, x: &Feature) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.key_features.iter().map(|k| kernel(x, k, &self.scales, &self.cfg)),
        )
    }

    /// `K^-1 v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(v),
            None => DVector::zeros(0),
        }
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.solve(m),
            None => DMatrix::zeros(0, m.ncols()),
        }
    }

    pub fn kernel(&self, a: &Feature, b: &Feature) -> f64 {
        kernel(a, b, &self.scales, &self.cfg)
    }

    /// Posterior predictive variance `kappa(x,x) + r - k_x^T K^-1 k_x`.
    pub fn predictive_variance(&self, x: &Feature) -> f64 {
        let prior = self.kernel(x, x) + self.cfg.regularizer;
        if self.is_empty() {
            return prior;
        }
        let k = self.kernel_vector(x);
        (prior - k.dot(&self.solve(&k))).max(0.0)
    }
}

/// `N x L` matrix of GPR weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMaps {
    n: usize,
    l: usize,
    data: Vec<f64>,
}

impl WeightMaps {
    pub fn from_rows(n: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * l {
            return Err(Error::DimensionMismatch {
                expected: n * l,
                actual: data.len(),
            });
        }
        Ok(Self { n, l, data })
    }

    /// A single all-ones map: the global filter.
    pub fn global(n: usize) -> Self {
        Self {
            n,
            l: 1,
            data: vec![1.0; n],
        }
    }

    /// Rows `k_n^T K^-1` for every query feature.
    pub fn compute(factor: &GramFactor, query: &[Feature]) -> Self {
        let l = factor.len();
        let data: Vec<f64> = query
            .par_iter()
            .flat_map_iter(|x| {
                let k = factor.kernel_vector(x);
                factor.solve(&k).iter().copied().collect::<Vec<_>>()
            })
            .collect();
        Self {
            n: query.len(),
            l,
            data,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.n
    }

    pub fn n_keys(&self) -> usize {
        self.l
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.l..(n + 1) * self.l]
    }

    pub fn get(&self, n: usize, l: usize) -> f64 {
        self.data[n * self.l + l]
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        (0..self.n).map(|n| self.get(n, l)).collect()
    }

    /// Column `l` min-max normalized into a grayscale image.
    pub fn column_image(&self, l: usize, width: usize, height: usize) -> Result<Image> {
        if width * height != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: width * height,
            });
        }
        let col = self.column(l);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = col.iter().map(|v| [((v - lo) / span) as f32; 3]).collect();
        Image::new(width, height, data)
    }
}

/// `W` over all pixels of `features`.
pub fn weight_maps(features: &PixelFeatures, keys: &KeyPixels, cfg: &KernelConfig) -> Result<WeightMaps> {
    let factor = GramFactor::new(features, keys, cfg)?;
    Ok(WeightMaps::compute(&factor, &features.rows))
}

/// Key-pixel parameters `Q`, one row per key pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyParams(pub Vec<ParamVector>);

impl KeyParams {
    pub fn zeros(l: usize) -> Self {
        Self(vec![ParamVector::ZERO; l])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Direct evaluation `(k_x^T K^-1 Q)^T`, unclamped.
pub fn predict_param(
    x: &Feature,
    keys: &KeyPixels,
    q: &KeyParams,
    features: &PixelFeatures,
    cfg: &KernelConfig,
) -> Result<[f64; M]> {
    if q.len() != keys.len() {
        return Err(Error::DimensionMismatch {
            expected: keys.len(),
            actual: q.len(),
        });
    }
    let factor = GramFactor::new(features, keys, cfg)?;
    let qm = DMatrix::from_fn(q.len(), M, |i, j| q.0[i].0[j]);
    let alpha = factor.solve_matrix(&qm);
    let k = factor.kernel_vector(x);
    let p = alpha.transpose() * k;
    Ok([p[0], p[1], p[2]])
}

/// `W Q` without clamping.
pub fn assemble_unclamped(w: &WeightMaps, q: &KeyParams) -> Result<Vec<[f64; M]>> {
    if w.l != q.len() {
        return Err(Error::DimensionMismatch {
            expected: w.l,
            actual: q.len(),
        });
    }
    Ok(w
        .data
        .par_chunks(w.l.max(1))
        .map(|row| {
            let mut p = [0.0; M];
            for (wl, ql) in row.iter().zip(&q.0) {
                for k in 0..M {
                    p[k] += wl * ql.0[k];
                }
            }
            p
        })
        .collect())
}

/// `P = W Q`, clamped componentwise to `[-1, 1]`.
pub fn assemble_param_map(w: &WeightMaps, q: &KeyParams) -> Result<ParamMap> {
    Ok(ParamMap::from_unclamped(assemble_unclamped(w, q)?))
}
