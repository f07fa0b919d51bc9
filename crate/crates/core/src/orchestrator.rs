//! End-to-end enhancement loop.
//!
//! [`prepare`] runs preprocessing, illumination estimation, key-pixel
//! selection and the weight maps; [`EnhanceRun`] is the serializable state of
//! the slider schedule `(1,1), (1,2), ..., (S,L)`; a [`Respond`]
//! implementation supplies the chosen slider position for each step, either
//! from an automated quality oracle or from aggregated human responses.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{select_key_pixels, SelectionStrategy};
use crate::error::{Error, Result};
use crate::gpr::{
    assemble_param_map, features_from_map, Feature, GramFactor, KernelConfig, KeyParams, KeyPixels, PixelFeatures,
    WeightMaps,
};
use crate::illumination::{self, IlluminationMap};
use crate::imaging::{apply_edit_f32, apply_param_map, preview_dims, resize_for_preview, Image, ParamMap, ParamVector, M};
use crate::linesearch::{blend, blend_unchecked, next_endpoint_with, LineSearchState, SlsConfig};
use crate::quality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// GPR weight maps over selected key pixels.
    #[default]
    Local,
    /// One parameter vector for every pixel.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub enabled: bool,
    pub gamma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            gamma: illumination::DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    #[serde(alias = "L")]
    pub key_pixels: usize,
    #[serde(alias = "S")]
    pub sliders: usize,
    pub strategy: SelectionStrategy,
    pub kernel: KernelConfig,
    pub feature_scales: Feature,
    /// When false the illumination feature is dropped (`x`, `y` only).
    pub use_illumination: bool,
    pub filter: FilterKind,
    pub preprocess: PreprocessConfig,
    pub denoise_strength: u8,
    pub seed: u64,
    pub responses_per_slider: usize,
    pub check_range: (f64, f64),
    pub preview_max_edge: usize,
    pub sls: SlsConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            key_pixels: 4,
            sliders: 4,
            strategy: SelectionStrategy::default(),
            kernel: KernelConfig::default(),
            feature_scales: [1.0; 3],
            use_illumination: true,
            filter: FilterKind::Local,
            preprocess: PreprocessConfig::default(),
            denoise_strength: 0,
            seed: 0,
            responses_per_slider: 7,
            check_range: (0.25, 0.75),
            preview_max_edge: 512,
            sls: SlsConfig::default(),
        }
    }
}

impl EnhanceConfig {
    /// Defaults for crowd sessions: LIME brightening plus light denoising.
    pub fn human_default() -> Self {
        Self {
            preprocess: PreprocessConfig {
                enabled: true,
                gamma: illumination::DEFAULT_GAMMA,
            },
            denoise_strength: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.key_pixels == 0 {
            return bad("L (key pixels) must be at least 1".into());
        }
        if self.filter == FilterKind::Global && self.key_pixels != 1 {
            return bad("the global filter has exactly one parameter vector (L = 1)".into());
        }
        if self.sliders == 0 {
            return bad("S (sliders per key pixel) must be at least 1".into());
        }
        if self.responses_per_slider == 0 || self.responses_per_slider % 2 == 0 {
            return bad(format!(
                "responses_per_slider must be odd and positive, got {}",
                self.responses_per_slider
            ));
        }
        let (lo, hi) = self.check_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return bad(format!("check_range must satisfy 0 <= lower < upper <= 1, got [{lo}, {hi}]"));
        }
        if self.preprocess.enabled && !(self.preprocess.gamma > 0.0 && self.preprocess.gamma <= 1.0) {
            return bad(format!("preprocess gamma must be in (0, 1], got {}", self.preprocess.gamma));
        }
        if self.denoise_strength > 3 {
            return bad(format!("denoise_strength must be 0..=3, got {}", self.denoise_strength));
        }
        if self.preview_max_edge == 0 {
            return bad("preview_max_edge must be positive".into());
        }
        if self.sls.starts == 0
            || !(self.sls.length_scale > 0.0)
            || !(self.sls.comparison_scale > 0.0)
            || !(self.sls.visit_noise > 0.0)
        {
            return bad("invalid line-search settings".into());
        }
        self.kernel.validate()
    }

    pub fn effective_scales(&self) -> Feature {
        let mut s = self.feature_scales;
        if !self.use_illumination {
            s[2] = 0.0;
        }
        s
    }

    pub fn total_steps(&self) -> usize {
        self.key_pixels * self.sliders
    }
}

/// Everything fixed before the first slider: the edited base image, its
/// features, key pixels and weight maps at full and preview resolution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: Image,
    pub illumination: IlluminationMap,
    pub features: PixelFeatures,
    pub keys: KeyPixels,
    pub weights: WeightMaps,
    pub preview: Image,
    pub preview_weights: WeightMaps,
}

/// LIME brightening and denoising when enabled.
pub fn preprocess(image: &Image, cfg: &EnhanceConfig) -> Image {
    if !cfg.preprocess.enabled {
        return image.clone();
    }
    let lit = illumination::lime_preprocess(image, cfg.preprocess.gamma);
    illumination::denoise(&lit, cfg.denoise_strength)
}

pub fn prepare(image: &Image, cfg: &EnhanceConfig) -> Result<Prepared> {
    prepare_with(image, cfg, None)
}

/// Like [`prepare`], but reuses previously selected key pixels when given.
pub fn prepare_with(image: &Image, cfg: &EnhanceConfig, known_keys: Option<&[usize]>) -> Result<Prepared> {
    cfg.validate()?;
    let base = preprocess(image, cfg);
    let illum = illumination::estimate_illumination(&base);
    let features = features_from_map(&illum, cfg.effective_scales())?;
    let keys = match (cfg.filter, known_keys) {
        (FilterKind::Global, _) => KeyPixels::empty(),
        (FilterKind::Local, Some(idx)) => {
            if idx.len() != cfg.key_pixels {
                return Err(Error::DimensionMismatch {
                    expected: cfg.key_pixels,
                    actual: idx.len(),
                });
            }
            KeyPixels::new(idx.to_vec(), features.len())?
        }
        (FilterKind::Local, None) => select_key_pixels(&features, cfg.key_pixels, &cfg.strategy, &cfg.kernel)?,
    };
    prepare_with_keys(base, illum, features, keys, cfg)
}

/// Builds the weight maps for already chosen key pixels.
pub fn prepare_with_keys(
    base: Image,
    illum: IlluminationMap,
    features: PixelFeatures,
    keys: KeyPixels,
    cfg: &EnhanceConfig,
) -> Result<Prepared> {
    let (pw, ph) = preview_dims(base.width(), base.height(), cfg.preview_max_edge);
    let preview = resize_for_preview(&base, cfg.preview_max_edge);
    let (weights, preview_weights) = match cfg.filter {
        FilterKind::Global => (WeightMaps::global(base.len()), WeightMaps::global(pw * ph)),
        FilterKind::Local => {
            let factor = GramFactor::new(&features, &keys, &cfg.kernel)?;
            let full = WeightMaps::compute(&factor, features.rows());
            let small = if (pw, ph) == (base.width(), base.height()) {
                full.clone()
            } else {
                let small_features = features_from_map(&illum.resized(pw, ph), cfg.effective_scales())?;
                WeightMaps::compute(&factor, small_features.rows())
            };
            (full, small)
        }
    };
    Ok(Prepared {
        image: base,
        illumination: illum,
        features,
        keys,
        weights,
        preview,
        preview_weights,
    })
}

/// 1-based slider step `(s, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepIndex {
    pub s: usize,
    pub l: usize,
}

impl StepIndex {
    /// 1-based position in the schedule, `(s - 1) L + l`.
    pub fn ordinal(&self, n_keys: usize) -> usize {
        (self.s - 1) * n_keys + self.l
    }
}

/// One slider adjustment to perform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderTask {
    pub session_id: Option<String>,
    pub step: StepIndex,
    /// Current parameters of every key pixel (zero when untouched).
    pub anchors: Vec<ParamVector>,
    /// 0-based index of the key pixel being adjusted.
    pub active: usize,
    pub segment: (ParamVector, ParamVector),
    pub reversed: bool,
}

impl SliderTask {
    /// Key parameters with the active key moved to `alpha` along the segment.
    pub fn key_params(&self, alpha: f64) -> Result<KeyParams> {
        let mut q = self.anchors.clone();
        q[self.active] = blend(&self.segment.0, &self.segment.1, alpha)?;
        Ok(KeyParams(q))
    }

    /// Slider position as shown to a worker mapped to the effective alpha.
    pub fn effective_alpha(&self, ui_alpha: f64) -> f64 {
        if self.reversed {
            1.0 - ui_alpha
        } else {
            ui_alpha
        }
    }
}

/// `P = sum_{j != l} w_j anchor_j^T + w_l blend(p, p_bar, alpha)^T`, clamped.
pub fn slider_param_map(
    weights: &WeightMaps,
    anchors: &[ParamVector],
    active: usize,
    segment: (&ParamVector, &ParamVector),
    alpha: f64,
) -> Result<ParamMap> {
    if active >= anchors.len() {
        return Err(Error::IndexOutOfRange {
            what: "key pixel",
            index: active,
            len: anchors.len(),
        });
    }
    let mut q = anchors.to_vec();
    q[active] = blend(segment.0, segment.1, alpha)?;
    assemble_param_map(weights, &KeyParams(q))
}

/// `f(I, clamp(W Q))` without materializing the parameter map. Bit-identical
/// to `apply_param_map(image, assemble_param_map(W, Q))`.
pub fn render(image: &Image, weights: &WeightMaps, q: &KeyParams) -> Result<Image> {
    if weights.n_pixels() != image.len() {
        return Err(Error::DimensionMismatch {
            expected: image.len(),
            actual: weights.n_pixels(),
        });
    }
    if weights.n_keys() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.n_keys(),
            actual: q.len(),
        });
    }
    let data = image
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(n, px)| {
            let mut p = [0.0; M];
            for (wl, ql) in weights.row(n).iter().zip(&q.0) {
                for k in 0..M {
                    p[k] += wl * ql.0[k];
                }
            }
            apply_edit_f32(*px, &p.map(|v| v.clamp(-1.0, 1.0)))
        })
        .collect();
    Ok(Image::from_parts(image.width(), image.height(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub s: usize,
    pub l: usize,
    pub alpha: f64,
    pub score: Option<f64>,
    pub elapsed_ms: f64,
}

/// Serializable state of one run of the slider schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceRun {
    sliders: usize,
    states: Vec<LineSearchState>,
    next: StepIndex,
    trace: Vec<TraceRecord>,
    sls: SlsConfig,
}

fn key_seed(seed: u64, l: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((l as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

impl EnhanceRun {
    pub fn new(cfg: &EnhanceConfig) -> Self {
        let states = (0..cfg.key_pixels)
            .map(|l| LineSearchState::new(key_seed(cfg.seed, l)))
            .collect();
        Self {
            sliders: cfg.sliders,
            states,
            next: StepIndex { s: 1, l: 1 },
            trace: Vec::new(),
            sls: cfg.sls,
        }
    }

    pub fn n_keys(&self) -> usize {
        self.states.len()
    }

    pub fn sliders(&self) -> usize {
        self.sliders
    }

    pub fn total_steps(&self) -> usize {
        self.sliders * self.states.len()
    }

    pub fn is_done(&self) -> bool {
        self.next.s > self.sliders
    }

    /// The step awaiting a response, if any.
    pub fn step(&self) -> Option<StepIndex> {
        (!self.is_done()).then_some(self.next)
    }

    pub fn completed_steps(&self) -> usize {
        self.trace.len()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn states(&self) -> &[LineSearchState] {
        &self.states
    }

    /// Latest chosen parameters per key pixel, zero before the first choice.
    pub fn current_anchors(&self) -> Vec<ParamVector> {
        self.states
            .iter()
            .map(|st| {
                if st.completed() == 0 {
                    ParamVector::ZERO
                } else {
                    *st.anchor()
                }
            })
            .collect()
    }

    pub fn current_task(&self) -> Option<SliderTask> {
        let step = self.step()?;
        let active = step.l - 1;
        let segment = self.states[active].open_segment()?;
        Some(SliderTask {
            session_id: None,
            step,
            anchors: self.current_anchors(),
            active,
            segment,
            reversed: false,
        })
    }

    /// Records the chosen position for the current step and advances.
    pub fn apply(&mut self, alpha: f64, score: Option<f64>, elapsed_ms: f64) -> Result<()> {
        let step = self.step().ok_or_else(|| Error::State("run already finished".into()))?;
        let state = &mut self.states[step.l - 1];
        state.record_choice(alpha)?;
        if step.s < self.sliders {
            let e = next_endpoint_with(state, &self.sls)?;
            state.push_endpoint(e)?;
        }
        self.trace.push(TraceRecord {
            step: step.ordinal(self.states.len()),
            s: step.s,
            l: step.l,
            alpha,
            score,
            elapsed_ms,
        });
        self.next = if step.l == self.states.len() {
            StepIndex { s: step.s + 1, l: 1 }
        } else {
            StepIndex { s: step.s, l: step.l + 1 }
        };
        Ok(())
    }

    /// `p^{S+1}` per key pixel (current anchors while unfinished).
    pub fn final_key_params(&self) -> KeyParams {
        KeyParams(self.current_anchors())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub alpha: f64,
    pub score: Option<f64>,
}

/// Source of slider choices.
pub trait Respond {
    fn respond(&mut self, task: &SliderTask) -> Result<Response>;
}

impl<F> Respond for F
where
    F: FnMut(&SliderTask) -> Result<Response>,
{
    fn respond(&mut self, task: &SliderTask) -> Result<Response> {
        self(task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleChoice {
    pub alpha: f64,
    pub score: f64,
}

pub const ORACLE_GRID: usize = 17;
pub const ORACLE_TOLERANCE: f64 = 1e-3;

/// Maximizes `quality(alpha)` on `[0, 1]`: a 17-point grid, then golden-section
/// refinement of the best bracket down to width 1e-3. Ties go to the smaller
/// alpha; the returned score is the quality at the returned alpha.
pub fn oracle_adjust<F>(quality: F) -> OracleChoice
where
    F: Fn(f64) -> f64 + Sync,
{
    let grid: Vec<f64> = (0..ORACLE_GRID).map(|i| i as f64 / (ORACLE_GRID - 1) as f64).collect();
    let scores: Vec<f64> = grid.par_iter().map(|&a| quality(a)).collect();
    let mut best_i = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_i] {
            best_i = i;
        }
    }
    let mut best = OracleChoice {
        alpha: grid[best_i],
        score: scores[best_i],
    };
    let mut consider = |alpha: f64, score: f64| {
        if score > best.score || (score == best.score && alpha < best.alpha) {
            best = OracleChoice { alpha, score };
        }
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut lo = grid[best_i.saturating_sub(1)];
    let mut hi = grid[(best_i + 1).min(ORACLE_GRID - 1)];
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = quality(x1);
    let mut f2 = quality(x2);
    consider(x1, f1);
    consider(x2, f2);
    while hi - lo > ORACLE_TOLERANCE {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = quality(x1);
            consider(x1, f1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = quality(x2);
            consider(x2, f2);
        }
    }
    best
}

/// Quality function driving the automated oracle.
#[derive(Debug, Clone)]
pub enum Oracle {
    /// No-reference exposure / contrast / colorfulness score.
    NoReference,
    /// PSNR against a reference at the resolution being scored.
    Psnr(Image),
}

impl Oracle {
    pub fn score(&self, image: &Image) -> f64 {
        match self {
            Oracle::NoReference => quality::nr_score(image),
            Oracle::Psnr(reference) => quality::psnr(image, reference).unwrap_or(f64::NEG_INFINITY),
        }
    }

    /// Same oracle with any reference resized to `width x height`.
    pub fn at_resolution(&self, width: usize, height: usize) -> Oracle {
        match self {
            Oracle::NoReference => Oracle::NoReference,
            Oracle::Psnr(r) if (r.width(), r.height()) == (width, height) => Oracle::Psnr(r.clone()),
            Oracle::Psnr(r) => {
                let data = crate::imaging::box_downsample(r.pixels(), r.width(), r.height(), width, height);
                Oracle::Psnr(Image::from_parts(width, height, data))
            }
        }
    }
}

/// Responds by maximizing an oracle over previews.
pub struct OracleResponder<'a> {
    preview: &'a Image,
    weights: &'a WeightMaps,
    oracle: Oracle,
}

impl<'a> OracleResponder<'a> {
    pub fn new(prepared: &'a Prepared, oracle: &Oracle) -> Self {
        Self {
            preview: &prepared.preview,
            weights: &prepared.preview_weights,
            oracle: oracle.at_resolution(prepared.preview.width(), prepared.preview.height()),
        }
    }
}

impl Respond for OracleResponder<'_> {
    fn respond(&mut self, task: &SliderTask) -> Result<Response> {
        let score_at = |alpha: f64| {
            let mut q = task.anchors.clone();
            q[task.active] = blend_unchecked(&task.segment.0, &task.segment.1, alpha);
            render(self.preview, self.weights, &KeyParams(q))
                .map(|img| self.oracle.score(&img))
                .unwrap_or(f64::NEG_INFINITY)
        };
        let choice = oracle_adjust(score_at);
        Ok(Response {
            alpha: choice.alpha,
            score: Some(choice.score),
        })
    }
}

/// Exact median of an odd number of slider positions.
pub fn aggregate_responses(alphas: &[f64]) -> Result<f64> {
    if alphas.is_empty() {
        return Err(Error::Config("no responses to aggregate".into()));
    }
    if alphas.len() % 2 == 0 {
        return Err(Error::Config(format!("need an odd number of responses, got {}", alphas.len())));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::OutOfRange {
            what: "alpha",
            value: *a,
            lower: 0.0,
            upper: 1.0,
        });
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[sorted.len() / 2])
}

/// Closed-interval check of a worker's check-task answer.
pub fn validate_check(alpha_check: f64, range: (f64, f64)) -> bool {
    range.0 <= alpha_check && alpha_check <= range.1
}

/// Drives `run` to completion (or until `respond` fails, leaving `run` resumable).
pub fn drive(run: &mut EnhanceRun, respond: &mut dyn Respond) -> Result<()> {
    while let Some(task) = run.current_task() {
        let started = Instant::now();
        let r = respond.respond(&task)?;
        if !(0.0..=1.0).contains(&r.alpha) {
            return Err(Error::Respond(format!("alpha {} outside [0, 1]", r.alpha)));
        }
        run.apply(r.alpha, r.score, started.elapsed().as_secs_f64() * 1e3)?;
    }
    Ok(())
}

/// Full-resolution parameter map and render for the run's current anchors.
pub fn finish(prepared: &Prepared, run: &EnhanceRun) -> Result<(Image, ParamMap)> {
    let params = assemble_param_map(&prepared.weights, &run.final_key_params())?;
    let image = apply_param_map(&prepared.image, &params)?;
    Ok((image, params))
}

#[derive(Debug, Clone)]
pub struct EnhanceOutput {
    pub image: Image,
    pub params: ParamMap,
    pub trace: Vec<TraceRecord>,
    pub prepared: Prepared,
}

/// Whole pipeline with a caller-supplied response source.
pub fn enhance(image: &Image, cfg: &EnhanceConfig, respond: &mut dyn Respond) -> Result<EnhanceOutput> {
    let prepared = prepare(image, cfg)?;
    let mut run = EnhanceRun::new(cfg);
    drive(&mut run, respond)?;
    let (out, params) = finish(&prepared, &run)?;
    Ok(EnhanceOutput {
        image: out,
        params,
        trace: run.trace,
        prepared,
    })
}

/// Whole pipeline with the automated oracle.
pub fn enhance_with_oracle(image: &Image, cfg: &EnhanceConfig, oracle: &Oracle) -> Result<EnhanceOutput> {
    let prepared = prepare(image, cfg)?;
    run_oracle(prepared, cfg, oracle)
}

pub fn run_oracle(prepared: Prepared, cfg: &EnhanceConfig, oracle: &Oracle) -> Result<EnhanceOutput> {
    let mut run = EnhanceRun::new(cfg);
    {
        let mut responder = OracleResponder::new(&prepared, oracle);
        drive(&mut run, &mut responder)?;
    }
    let (out, params) = finish(&prepared, &run)?;
    Ok(EnhanceOutput {
        image: out,
        params,
        trace: run.trace,
        prepared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_finds_interior_peak() {
        let c = oracle_adjust(|a| -(a - 0.3) * (a - 0.3));
        assert!((c.alpha - 0.3).abs() <= 0.002, "{c:?}");
    }

    #[test]
    fn oracle_boundary_and_constant() {
        assert!(oracle_adjust(|a| a).alpha >= 0.999);
        let c = oracle_adjust(|_| 1.0);
        assert_eq!(c.alpha, 0.0);
    }

    #[test]
    fn median_aggregation() {
        assert_eq!(aggregate_responses(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap(), 0.4);
        assert_eq!(aggregate_responses(&[0.9, 0.1, 0.5]).unwrap(), 0.5);
        assert_eq!(aggregate_responses(&[0.25; 7]).unwrap(), 0.25);
        assert!(aggregate_responses(&[]).is_err());
        assert!(aggregate_responses(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn check_validation_is_closed() {
        assert!(validate_check(0.5, (0.3, 0.7)));
        assert!(!validate_check(0.71, (0.3, 0.7)));
        assert!(validate_check(0.3, (0.3, 0.7)));
        assert!(validate_check(0.7, (0.3, 0.7)));
    }

    #[test]
    fn config_validation() {
        assert!(EnhanceConfig::default().validate().is_ok());
        let bad = [
            EnhanceConfig {
                key_pixels: 0,
                ..Default::default()
            },
            EnhanceConfig {
                sliders: 0,
                ..Default::default()
            },
            EnhanceConfig {
                responses_per_slider: 6,
                ..Default::default()
            },
            EnhanceConfig {
                check_range: (0.7, 0.3),
                ..Default::default()
            },
            EnhanceConfig {
                filter: FilterKind::Global,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_defaults_and_aliases() {
        let cfg: EnhanceConfig = serde_json::from_str(r#"{"L": 2, "S": 3, "seed": 9}"#).unwrap();
        assert_eq!((cfg.key_pixels, cfg.sliders, cfg.seed), (2, 3, 9));
        assert_eq!(cfg.responses_per_slider, 7);
    }

    #[test]
    fn schedule_order_and_count() {
        let cfg = EnhanceConfig {
            key_pixels: 3,
            sliders: 2,
            ..Default::default()
        };
        let mut run = EnhanceRun::new(&cfg);
        let mut seen = Vec::new();
        while let Some(t) = run.current_task() {
            seen.push((t.step.s, t.step.l));
            run.apply(0.5, None, 0.0).unwrap();
        }
        assert_eq!(seen, vec![(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]);
        assert_eq!(run.trace().len(), 6);
        assert!(run.apply(0.5, None, 0.0).is_err());
    }

    #[test]
    fn first_round_untouched_keys_are_zero() {
        let cfg = EnhanceConfig::default();
        let mut run = EnhanceRun::new(&cfg);
        let t = run.current_task().unwrap();
        assert!(t.anchors.iter().all(|a| *a == ParamVector::ZERO));
        run.apply(0.25, None, 0.0).unwrap();
        let t2 = run.current_task().unwrap();
        assert_ne!(t2.anchors[0], ParamVector::ZERO);
        assert!(t2.anchors[1..].iter().all(|a| *a == ParamVector::ZERO));
    }

    #[test]
    fn step_ordinal() {
        assert_eq!(StepIndex { s: 2, l: 3 }.ordinal(4), 7);
        assert_eq!(StepIndex { s: 4, l: 4 }.ordinal(4), 16);
    }
}
