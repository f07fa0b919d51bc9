//! CSV and PNG artifacts.

use std::fs;
use std::path::Path;

use crowdenhance_core::imaging::{save_image, ParamMap};
use crowdenhance_core::illumination::IlluminationMap;
use crowdenhance_core::orchestrator::{Prepared, TraceRecord};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::CliResult;

pub const SCATTER_MAX_ROWS: usize = 10_000;

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "s", "l", "alpha", "score"])?;
    for r in trace {
        let score = r.score.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.step.to_string(), r.s.to_string(), r.l.to_string(), r.alpha.to_string(), score])?;
    }
    w.flush()?;
    Ok(())
}

/// One grayscale PNG per key pixel plus `keys.csv` with their coordinates.
pub fn dump_weights(dir: &Path, prepared: &Prepared) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let (w, h) = (prepared.image.width(), prepared.image.height());
    let mut keys = writer(&dir.join("keys.csv"))?;
    keys.write_record(["l", "x", "y", "t"])?;
    for (l, &n) in prepared.keys.indices().iter().enumerate() {
        let img = prepared.weights.column_image(l, w, h)?;
        save_image(&img, dir.join(format!("weight_{:02}.png", l + 1)))?;
        let t = prepared.illumination.values()[n];
        keys.write_record([(l + 1).to_string(), (n % w).to_string(), (n / w).to_string(), t.to_string()])?;
    }
    keys.flush()?;
    Ok(())
}

/// Illumination (0..255) against brightness parameter for a seeded subsample
/// of pixels, in pixel order.
pub fn write_scatter(path: &Path, illumination: &IlluminationMap, params: &ParamMap, seed: u64) -> CliResult<()> {
    let n = params.len();
    let mut picked: Vec<usize> = if n <= SCATTER_MAX_ROWS {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, n, SCATTER_MAX_ROWS).into_vec()
    };
    picked.sort_unstable();
    let mut w = writer(path)?;
    w.write_record(["t_255", "p_brightness"])?;
    for i in picked {
        let t = 255.0 * illumination.values()[i];
        w.write_record([t.to_string(), params.rows()[i][0].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub struct AblationRow<'a> {
    pub image: &'a str,
    pub key_pixels: usize,
    pub strategy: &'a str,
    pub use_illumination: bool,
    pub iteration: usize,
    pub score: f64,
}

pub fn ablation_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let mut w = writer(path)?;
    w.write_record(["image", "L", "strategy", "use_illumination", "iteration", "score"])?;
    Ok(w)
}

pub fn write_ablation_row(w: &mut csv::Writer<fs::File>, row: &AblationRow<'_>) -> CliResult<()> {
    w.write_record([
        row.image.to_string(),
        row.key_pixels.to_string(),
        row.strategy.to_string(),
        row.use_illumination.to_string(),
        row.iteration.to_string(),
        row.score.to_string(),
    ])?;
    Ok(())
}
