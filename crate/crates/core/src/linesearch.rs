//! Per-key-pixel sequential line search.
//!
//! Each key pixel keeps a history of slider segments. After a choice the
//! chosen point is recorded as preferred over both ends of its segment, a
//! preferential Gaussian process is fitted to all comparisons (Laplace
//! approximation of a Bradley-Terry likelihood), and the next segment end is
//! the maximizer of expected improvement over the parameter box.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ParamVector, M};

/// Minimum L-infinity length of the first segment.
pub const MIN_INITIAL_SPAN: f64 = 0.1;
/// Minimum L-infinity distance of a fallback endpoint from the anchor.
pub const FALLBACK_SPAN: f64 = 0.5;

/// Hyperparameters of the preferential GP and of the acquisition search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlsConfig {
    pub length_scale: f64,
    pub signal_variance: f64,
    /// Temperature of the Bradley-Terry likelihood.
    pub comparison_scale: f64,
    pub starts: usize,
    pub iterations: usize,
    /// Extra losing points per segment, evenly spaced between its ends and
    /// skipped near the chosen position.
    pub interior_losers: usize,
    /// Noise, relative to the signal variance, of the visited points when
    /// computing the acquisition's predictive variance.
    pub visit_noise: f64,
}

impl Default for SlsConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.8,
            signal_variance: 0.5,
            comparison_scale: 0.05,
            starts: 64,
            iterations: 100,
            interior_losers: 3,
            visit_noise: 0.01,
        }
    }
}

/// `(1 - alpha) p + alpha p_bar`.
pub fn blend(p: &ParamVector, p_bar: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: alpha,
            lower: 0.0,
            upper: 1.0,
        });
    }
    Ok(blend_unchecked(p, p_bar, alpha))
}

#[inline]
pub(crate) fn blend_unchecked(p: &ParamVector, p_bar: &ParamVector, alpha: f64) -> ParamVector {
    let mut out = [0.0; M];
    for k in 0..M {
        out[k] = (1.0 - alpha) * p.0[k] + alpha * p_bar.0[k];
    }
    ParamVector(out)
}

fn linf(a: &ParamVector, b: &ParamVector) -> f64 {
    (0..M).map(|k| (a.0[k] - b.0[k]).abs()).fold(0.0, f64::max)
}

fn random_vector(rng: &mut ChaCha8Rng) -> ParamVector {
    let mut v = [0.0; M];
    for c in &mut v {
        *c = rng.gen_range(-1.0..=1.0);
    }
    ParamVector(v)
}

/// Two seeded uniform samples on the box at least `MIN_INITIAL_SPAN` apart.
pub fn init_endpoints(seed: u64) -> (ParamVector, ParamVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_vector(&mut rng);
    loop {
        let q = random_vector(&mut rng);
        if linf(&p, &q) >= MIN_INITIAL_SPAN {
            return (p, q);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub segment: usize,
    pub alpha: f64,
}

/// History `{p^1, p_bar^1, ..., p^s, p_bar^s, p^{s+1}[, p_bar^{s+1}]}` of one key pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchState {
    anchors: Vec<ParamVector>,
    endpoints: Vec<ParamVector>,
    observations: Vec<Observation>,
    rng_seed: u64,
}

impl LineSearchState {
    pub fn new(seed: u64) -> Self {
        let (p, q) = init_endpoints(seed);
        Self {
            anchors: vec![p],
            endpoints: vec![q],
            observations: Vec::new(),
            rng_seed: seed,
        }
    }

    pub fn anchors(&self) -> &[ParamVector] {
        &self.anchors
    }

    pub fn endpoints(&self) -> &[ParamVector] {
        &self.endpoints
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    /// Number of completed sliders.
    pub fn completed(&self) -> usize {
        self.observations.len()
    }

    /// Latest anchor (`p^{s+1}` after `s` choices).
    pub fn anchor(&self) -> &ParamVector {
        self.anchors.last().expect("history is never empty")
    }

    /// `(p^s, p_bar^s)` when a segment is waiting for a choice.
    pub fn open_segment(&self) -> Option<(ParamVector, ParamVector)> {
        (self.anchors.len() == self.endpoints.len()).then(|| (*self.anchor(), *self.endpoints.last().unwrap()))
    }

    /// Appends `p^{s+1} = blend(p^s, p_bar^s, alpha)`.
    pub fn record_choice(&mut self, alpha: f64) -> Result<()> {
        let (p, q) = self
            .open_segment()
            .ok_or_else(|| Error::State("no open segment to choose on".into()))?;
        let next = blend(&p, &q, alpha)?;
        self.observations.push(Observation {
            segment: self.endpoints.len() - 1,
            alpha,
        });
        self.anchors.push(next);
        Ok(())
    }

    /// Opens the next segment `(p^{s+1}, endpoint)`.
    pub fn push_endpoint(&mut self, endpoint: ParamVector) -> Result<()> {
        if self.open_segment().is_some() {
            return Err(Error::State("segment already open".into()));
        }
        if endpoint.0.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange {
                what: "endpoint",
                value: endpoint.0.iter().copied().fold(0.0, |a, b| if b.abs() > a { b.abs() } else { a }),
                lower: -1.0,
                upper: 1.0,
            });
        }
        self.endpoints.push(endpoint);
        Ok(())
    }

    /// `record_choice` followed by `next_endpoint`.
    pub fn advance(&mut self, alpha: f64, cfg: &SlsConfig) -> Result<()> {
        self.record_choice(alpha)?;
        let e = next_endpoint_with(self, cfg)?;
        self.push_endpoint(e)
    }
}

fn se_kernel(a: &[f64; M], b: &[f64; M], cfg: &SlsConfig) -> f64 {
    let d2: f64 = (0..M).map(|k| (a[k] - b[k]).powi(2)).sum();
    cfg.signal_variance * (-0.5 * d2 / (cfg.length_scale * cfg.length_scale)).exp()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Complementary error function, fractional error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Laplace-approximated preferential GP over the distinct history points.
struct PreferenceModel {
    points: Vec<[f64; M]>,
    /// `K^-1 f` at the MAP, equal to the likelihood gradient there.
    weights: DVector<f64>,
    /// `(K + noise I)^-1` over the visited points, for the predictive variance.
    var_reduction: DMatrix<f64>,
    best: f64,
    spread: f64,
    cfg: SlsConfig,
}

impl PreferenceModel {
    fn fit(state: &LineSearchState, cfg: &SlsConfig) -> Option<Self> {
        let mut points: Vec<[f64; M]> = Vec::new();
        let mut index_of = |p: &ParamVector| -> usize {
            if let Some(i) = points.iter().position(|q| linf(&ParamVector(*q), p) < 1e-12) {
                i
            } else {
                points.push(p.0);
                points.len() - 1
            }
        };
        let mut pairs = Vec::new();
        for (s, _) in state.observations.iter().enumerate() {
            let w = index_of(&state.anchors[s + 1]);
            let a = index_of(&state.anchors[s]);
            let b = index_of(&state.endpoints[s]);
            for l in [a, b] {
                if l != w {
                    pairs.push((w, l));
                }
            }
            let alpha = state.observations[s].alpha;
            let m = cfg.interior_losers;
            for i in 1..=m {
                let t = i as f64 / (m + 1) as f64;
                if (t - alpha).abs() < 0.5 / (m + 1) as f64 {
                    continue;
                }
                let p = blend_unchecked(&state.anchors[s], &state.endpoints[s], t);
                let l = index_of(&p);
                if l != w {
                    pairs.push((w, l));
                }
            }
        }
        if pairs.is_empty() {
            return None;
        }
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            se_kernel(&points[i], &points[j], cfg) + if i == j { 1e-8 } else { 0.0 }
        });
        let tau = cfg.comparison_scale;

        let grad_hess = |f: &DVector<f64>| {
            let mut g = DVector::zeros(n);
            let mut w = DMatrix::zeros(n, n);
            for &(a, b) in &pairs {
                let z = (f[a] - f[b]) / tau;
                let s = sigmoid(z);
                let d1 = (1.0 - s) / tau;
                let d2 = s * (1.0 - s) / (tau * tau);
                g[a] += d1;
                g[b] -= d1;
                w[(a, a)] += d2;
                w[(b, b)] += d2;
                w[(a, b)] -= d2;
                w[(b, a)] -= d2;
            }
            (g, w)
        };

        // Newton iterations f <- K (I + W K)^-1 (W f + grad).
        let mut f = DVector::zeros(n);
        let identity = DMatrix::<f64>::identity(n, n);
        for _ in 0..100 {
            let (g, w) = grad_hess(&f);
            let rhs = &w * &f + &g;
            let a = (&identity + &w * &k).lu().solve(&rhs)?;
            let next = &k * a;
            let delta = (&next - &f).amax();
            f = next;
            if delta < 1e-10 {
                break;
            }
        }
        let (g, _) = grad_hess(&f);
        // Laplace variances stop shrinking once a comparison saturates, which
        // lets the acquisition revisit rejected corners; treat visited points
        // as noisy observations instead.
        let var_reduction = (&k + &identity * (cfg.visit_noise * cfg.signal_variance)).try_inverse()?;
        let best = f.max();
        let spread = best - f.min();
        Some(Self {
            points,
            weights: g,
            var_reduction,
            best,
            spread,
            cfg: *cfg,
        })
    }

    fn predict(&self, x: &[f64; M]) -> (f64, f64) {
        let k = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| se_kernel(x, p, &self.cfg)));
        let mean = k.dot(&self.weights);
        let var = self.cfg.signal_variance - k.dot(&(&self.var_reduction * &k));
        (mean, var.max(1e-12))
    }

    fn expected_improvement(&self, x: &[f64; M]) -> f64 {
        let (mu, var) = self.predict(x);
        let sigma = var.sqrt();
        let z = (mu - self.best) / sigma;
        (mu - self.best) * norm_cdf(z) + sigma * norm_pdf(z)
    }
}

/// Coordinate search with step halving, starting from `x`.
fn coordinate_ascent(model: &PreferenceModel, mut x: [f64; M], iterations: usize) -> ([f64; M], f64) {
    let mut value = model.expected_improvement(&x);
    let mut step = 0.25;
    for _ in 0..iterations {
        let mut improved = false;
        for d in 0..M {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[d] = (y[d] + dir * step).clamp(-1.0, 1.0);
                if y[d] == x[d] {
                    continue;
                }
                let v = model.expected_improvement(&y);
                if v > value {
                    x = y;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-6 {
                break;
            }
        }
    }
    (x, value)
}

fn stream_seed(seed: u64, s: usize) -> u64 {
    // splitmix64 of (seed, s)
    let mut z = seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fallback_endpoint(anchor: &ParamVector, rng: &mut ChaCha8Rng) -> ParamVector {
    loop {
        let v = random_vector(rng);
        if linf(&v, anchor) >= FALLBACK_SPAN {
            return v;
        }
    }
}

/// Next segment end after the latest choice, with default settings.
pub fn next_endpoint(state: &LineSearchState) -> Result<ParamVector> {
    next_endpoint_with(state, &SlsConfig::default())
}

pub fn next_endpoint_with(state: &LineSearchState, cfg: &SlsConfig) -> Result<ParamVector> {
    if state.observations.is_empty() {
        return Err(Error::State("next endpoint needs at least one completed slider".into()));
    }
    if state.open_segment().is_some() {
        return Err(Error::State("current segment has no choice yet".into()));
    }
    let anchor = *state.anchor();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(state.rng_seed, state.observations.len()));
    let model = match PreferenceModel::fit(state, cfg) {
        Some(m) if m.spread > 1e-9 => m,
        _ => return Ok(fallback_endpoint(&anchor, &mut rng)),
    };

    let mut best: Option<([f64; M], f64)> = None;
    for _ in 0..cfg.starts.max(1) {
        let start = random_vector(&mut rng).0;
        let (x, v) = coordinate_ascent(&model, start, cfg.iterations);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((x, v));
        }
    }
    let (x, v) = best.expect("at least one start");
    let candidate = ParamVector(x);
    if v <= 1e-12 || linf(&candidate, &anchor) < 1e-9 {
        return Ok(fallback_endpoint(&anchor, &mut rng));
    }
    Ok(candidate)
}
