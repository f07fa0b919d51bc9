use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use crowdenhance_core::imaging::load_image;
use crowdenhance_core::orchestrator::{prepare, run_oracle, EnhanceConfig, Oracle};

use crate::enhance::{base_config, strategy, PipelineArgs};
use crate::output::{ablation_writer, write_ablation_row, AblationRow};
use crate::{CliError, CliResult};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Folder of input photos (png/jpg), processed in file-name order.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Comma-separated key-pixel counts.
    #[arg(long = "L-list", value_delimiter = ',', default_value = "1,4")]
    pub key_pixel_list: Vec<usize>,
    /// Comma-separated selection strategies.
    #[arg(long, value_delimiter = ',', default_value = "emoc")]
    pub strategies: Vec<String>,
    /// Also run every configuration without the illumination feature.
    #[arg(long)]
    pub no_illumination: bool,
    /// Sliders per key pixel; each run logs S*L iterations.
    #[arg(long = "S", default_value_t = 4)]
    pub sliders: usize,
    /// Fixed iteration budget for every run instead of S*L; runs use
    /// ceil(budget / L) sliders per key pixel and log the first `budget`.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no png/jpg images in {}", dir.display())));
    }
    Ok(paths)
}

pub fn run(args: AblateArgs) -> CliResult<()> {
    if args.key_pixel_list.is_empty() || args.strategies.is_empty() {
        return Err(CliError::Usage("--L-list and --strategies need at least one value".into()));
    }
    if args.iterations == Some(0) {
        return Err(CliError::Usage("--iterations must be positive".into()));
    }
    let illumination_modes: &[bool] = if args.no_illumination { &[true, false] } else { &[true] };

    // Validate every configuration before doing any work.
    let mut runs = Vec::new();
    for &l in &args.key_pixel_list {
        for name in &args.strategies {
            for &use_illumination in illumination_modes {
                let sliders = match args.iterations {
                    Some(budget) => budget.div_ceil(l.max(1)),
                    None => args.sliders,
                };
                let cfg = EnhanceConfig {
                    key_pixels: l,
                    sliders,
                    strategy: strategy(name, args.seed)?,
                    use_illumination,
                    seed: args.seed,
                    ..base_config(&args.pipeline)
                };
                cfg.validate()?;
                let logged = args.iterations.unwrap_or(cfg.total_steps());
                runs.push((name.as_str(), cfg, logged));
            }
        }
    }

    let images = list_images(&args.inputs)?;
    let mut out = ablation_writer(&args.out)?;
    for path in &images {
        let image = load_image(path)?;
        let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for (name, cfg, logged) in &runs {
            let prepared = prepare(&image, cfg)?;
            let result = run_oracle(prepared, cfg, &Oracle::NoReference)?;
            for rec in result.trace.iter().take(*logged) {
                write_ablation_row(
                    &mut out,
                    &AblationRow {
                        image: &label,
                        key_pixels: cfg.key_pixels,
                        strategy: name,
                        use_illumination: cfg.use_illumination,
                        iteration: rec.step,
                        score: rec.score.unwrap_or(f64::NAN),
                    },
                )?;
            }
            eprintln!(
                "{label} L={} {name} illumination={}: {:.4}",
                cfg.key_pixels,
                cfg.use_illumination,
                result.trace.iter().take(*logged).last().and_then(|r| r.score).unwrap_or(f64::NAN)
            );
        }
    }
    out.flush()?;
    Ok(())
}
