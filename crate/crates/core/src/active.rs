//! Label-free key-pixel selection: expected model output change (EMOC) and
//! the variance / farthest-point / random baselines.
//!
//! Adding a candidate `q` with label `y_q` to a GPR model moves the mean at
//! every pixel `n` by `c_n(q) (y_q - mu(q))`, where
//! `c_n(q) = cov(x_n, x_q) / var(q)` is built only from kernel quantities.
//! Under the predictive distribution `E|y_q - mu(q)| = sqrt(2/pi) sigma(q)`, so
//!
//! ```text
//! EMOC(q) = sqrt(2/pi) * sigma(q) * mean_n |c_n(q)|
//! ```
//!
//! which never looks at any parameter value.

use std::f64::consts::FRAC_2_PI;

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{Feature, GramFactor, KernelConfig, KeyPixels, PixelFeatures};

/// Candidates are subsampled above this many pixels.
pub const MAX_CANDIDATES: usize = 16384;
/// Size of the evaluation set the output change is averaged over.
pub const EVAL_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Emoc,
    Variance,
    GreedyDistance,
    Random,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Emoc => "emoc",
            StrategyKind::Variance => "variance",
            StrategyKind::GreedyDistance => "greedy_distance",
            StrategyKind::Random => "random",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emoc" => Ok(StrategyKind::Emoc),
            "variance" => Ok(StrategyKind::Variance),
            "greedy_distance" => Ok(StrategyKind::GreedyDistance),
            "random" => Ok(StrategyKind::Random),
            other => Err(Error::Config(format!("unknown selection strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Emoc,
            seed: 0,
        }
    }
}

/// `kappa(x,x) + r - k_x^T K^-1 k_x`; `1 + r` for an empty selection.
pub fn predictive_variance(
    x: &Feature,
    selected: &KeyPixels,
    features: &PixelFeatures,
    cfg: &KernelConfig,
) -> Result<f64> {
    Ok(GramFactor::new(features, selected, cfg)?.predictive_variance(x))
}

/// Precomputed state for scoring many candidates against one selection.
struct EmocScorer<'a> {
    factor: GramFactor,
    eval: Vec<&'a Feature>,
    /// `k_n` for every evaluation point.
    eval_k: Vec<DVector<f64>>,
}

impl<'a> EmocScorer<'a> {
    fn new(features: &'a PixelFeatures, selected: &KeyPixels, cfg: &KernelConfig, eval_idx: &[usize]) -> Result<Self> {
        let factor = GramFactor::new(features, selected, cfg)?;
        let eval: Vec<&Feature> = eval_idx.iter().map(|&n| features.row(n)).collect();
        let eval_k = eval.iter().map(|x| factor.kernel_vector(x)).collect();
        Ok(Self { factor, eval, eval_k })
    }

    fn score(&self, q: &Feature) -> f64 {
        let var = self.factor.predictive_variance(q);
        if var < 1e-12 {
            return 0.0;
        }
        let v = self.factor.solve(&self.factor.kernel_vector(q));
        let total: f64 = self
            .eval
            .iter()
            .zip(&self.eval_k)
            .map(|(x, k)| (self.factor.kernel(x, q) - k.dot(&v)).abs())
            .sum();
        let mean_cov = total / self.eval.len() as f64;
        FRAC_2_PI.sqrt() * mean_cov / var.sqrt()
    }
}

/// EMOC of adding `candidate`, averaged over every pixel of `features`.
pub fn emoc_score(
    candidate: usize,
    selected: &KeyPixels,
    features: &PixelFeatures,
    cfg: &KernelConfig,
) -> Result<f64> {
    if candidate >= features.len() {
        return Err(Error::IndexOutOfRange {
            what: "pixel",
            index: candidate,
            len: features.len(),
        });
    }
    if selected.contains(candidate) {
        return Err(Error::AlreadySelected(candidate));
    }
    let all: Vec<usize> = (0..features.len()).collect();
    let scorer = EmocScorer::new(features, selected, cfg, &all)?;
    Ok(scorer.score(features.row(candidate)))
}

/// Regular lattice of at most `EVAL_GRID` pixels (all pixels when fewer).
fn evaluation_set(features: &PixelFeatures) -> Vec<usize> {
    let n = features.len();
    if n <= EVAL_GRID {
        return (0..n).collect();
    }
    let (w, h) = (features.width(), features.height());
    let aspect = w as f64 / h as f64;
    let gx = ((EVAL_GRID as f64 * aspect).sqrt().floor() as usize).clamp(1, w);
    let gy = (EVAL_GRID / gx).clamp(1, h);
    let mut out = Vec::with_capacity(gx * gy);
    for j in 0..gy {
        let y = ((j as f64 + 0.5) * h as f64 / gy as f64) as usize;
        for i in 0..gx {
            let x = ((i as f64 + 0.5) * w as f64 / gx as f64) as usize;
            out.push(y.min(h - 1) * w + x.min(w - 1));
        }
    }
    out
}

/// All pixels, or one seeded pick from each of `MAX_CANDIDATES` contiguous strata.
fn candidate_pool(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_CANDIDATES {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    (0..MAX_CANDIDATES)
        .map(|i| {
            let lo = i * n / MAX_CANDIDATES;
            let hi = (i + 1) * n / MAX_CANDIDATES;
            rng.gen_range(lo..hi)
        })
        .collect()
}

/// First strictly larger score wins, so ties resolve to the lowest index.
fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, s) in scores {
        match best {
            Some((_, b)) if s <= b + 1e-12 * b.abs() => {}
            _ => best = Some((n, s)),
        }
    }
    best.map(|(n, _)| n)
}

/// Greedy sequential selection of `l` key pixels.
pub fn select_key_pixels(
    features: &PixelFeatures,
    l: usize,
    strategy: &SelectionStrategy,
    cfg: &KernelConfig,
) -> Result<KeyPixels> {
    let n = features.len();
    if l == 0 || l > n {
        return Err(Error::Config(format!("key pixel count {l} must be in 1..={n}")));
    }
    cfg.validate()?;
    if strategy.kind == StrategyKind::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
        return KeyPixels::new(index::sample(&mut rng, n, l).into_vec(), n);
    }

    let pool = candidate_pool(n, strategy.seed);
    let eval = evaluation_set(features);
    let mut selected = KeyPixels::empty();
    for _ in 0..l {
        let remaining = pool.iter().copied().filter(|c| !selected.contains(*c));
        let next = match strategy.kind {
            StrategyKind::Emoc => {
                let scorer = EmocScorer::new(features, &selected, cfg, &eval)?;
                let cands: Vec<usize> = remaining.collect();
                let scores: Vec<f64> = cands.par_iter().map(|&c| scorer.score(features.row(c))).collect();
                argmax(cands.into_iter().zip(scores))
            }
            StrategyKind::Variance => {
                let factor = GramFactor::new(features, &selected, cfg)?;
                argmax(remaining.map(|c| (c, factor.predictive_variance(features.row(c)))))
            }
            StrategyKind::GreedyDistance => {
                if selected.is_empty() {
                    let centroid = centroid(features);
                    argmax(remaining.map(|c| (c, -features.scaled_distance(features.row(c), &centroid))))
                } else {
                    argmax(remaining.map(|c| {
                        let d = selected
                            .indices()
                            .iter()
                            .map(|&s| features.scaled_distance(features.row(c), features.row(s)))
                            .fold(f64::INFINITY, f64::min);
                        (c, d)
                    }))
                }
            }
            StrategyKind::Random => unreachable!(),
        };
        let next = next.ok_or_else(|| Error::Config("no candidate pixels left".into()))?;
        selected.push(next);
    }
    Ok(selected)
}

fn centroid(features: &PixelFeatures) -> Feature {
    let mut c = [0.0; 3];
    for r in features.rows() {
        for k in 0..3 {
            c[k] += r[k];
        }
    }
    c.map(|v| v / features.len() as f64)
}
