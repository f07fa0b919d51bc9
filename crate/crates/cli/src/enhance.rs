use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use crowdenhance_core::active::{SelectionStrategy, StrategyKind};
use crowdenhance_core::imaging::{load_image, save_image};
use crowdenhance_core::orchestrator::{
    enhance_with_oracle, EnhanceConfig, FilterKind, Oracle, PreprocessConfig,
};

use crate::output::{dump_weights, write_scatter, write_trace};
use crate::{CliError, CliResult};

/// `nr` or `psnr:<reference image>`.
#[derive(Debug, Clone)]
pub enum OracleSpec {
    NoReference,
    Psnr(PathBuf),
}

impl FromStr for OracleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "nr" => Ok(OracleSpec::NoReference),
            Some(("psnr", path)) if !path.is_empty() => Ok(OracleSpec::Psnr(PathBuf::from(path))),
            _ => Err(format!("expected `nr` or `psnr:<reference>`, got `{s}`")),
        }
    }
}

impl OracleSpec {
    pub fn load(&self, width: usize, height: usize) -> CliResult<Oracle> {
        match self {
            OracleSpec::NoReference => Ok(Oracle::NoReference),
            OracleSpec::Psnr(path) => {
                let reference = load_image(path)?;
                if (reference.width(), reference.height()) != (width, height) {
                    return Err(CliError::Usage(format!(
                        "reference {} is {}x{}, input is {width}x{height}",
                        path.display(),
                        reference.width(),
                        reference.height()
                    )));
                }
                Ok(Oracle::Psnr(reference))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    Local,
    Global,
}

/// Options shared by `enhance` and `ablate`.
#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Longest preview edge used while scoring sliders.
    #[arg(long, default_value_t = 512)]
    pub preview_max_edge: usize,
    /// Brighten with the illumination-map gamma curve and denoise before enhancing.
    #[arg(long)]
    pub preprocess: bool,
    /// Denoising strength 0..=3 (only with --preprocess).
    #[arg(long, default_value_t = 1)]
    pub denoise: u8,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "nr")]
    pub oracle: OracleSpec,
    /// Number of key pixels.
    #[arg(long = "L", default_value_t = 4)]
    pub key_pixels: usize,
    /// Sliders per key pixel.
    #[arg(long = "S", default_value_t = 4)]
    pub sliders: usize,
    /// emoc, random, variance or greedy_distance.
    #[arg(long, default_value = "emoc")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop the illumination feature from the weight maps.
    #[arg(long)]
    pub no_illumination: bool,
    #[arg(long, value_enum, default_value_t = FilterArg::Local)]
    pub filter: FilterArg,
    /// Write the per-step trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write one weight-map PNG per key pixel into this directory.
    #[arg(long)]
    pub dump_weights: Option<PathBuf>,
    /// Write illumination vs brightness-parameter pairs here.
    #[arg(long)]
    pub dump_scatter: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

pub fn strategy(name: &str, seed: u64) -> CliResult<SelectionStrategy> {
    Ok(SelectionStrategy {
        kind: StrategyKind::from_str(name)?,
        seed,
    })
}

pub fn base_config(pipeline: &PipelineArgs) -> EnhanceConfig {
    EnhanceConfig {
        preview_max_edge: pipeline.preview_max_edge,
        preprocess: PreprocessConfig {
            enabled: pipeline.preprocess,
            ..PreprocessConfig::default()
        },
        denoise_strength: if pipeline.preprocess { pipeline.denoise } else { 0 },
        ..EnhanceConfig::default()
    }
}

pub fn run(args: EnhanceArgs) -> CliResult<()> {
    let cfg = EnhanceConfig {
        key_pixels: args.key_pixels,
        sliders: args.sliders,
        strategy: strategy(&args.strategy, args.seed)?,
        use_illumination: !args.no_illumination,
        filter: match args.filter {
            FilterArg::Local => FilterKind::Local,
            FilterArg::Global => FilterKind::Global,
        },
        seed: args.seed,
        ..base_config(&args.pipeline)
    };
    cfg.validate()?;
    let image = load_image(&args.input)?;
    let oracle = args.oracle.load(image.width(), image.height())?;
    let out = enhance_with_oracle(&image, &cfg, &oracle)?;

    save_image(&out.image, &args.output)?;
    if let Some(path) = &args.trace {
        write_trace(path, &out.trace)?;
    }
    if let Some(dir) = &args.dump_weights {
        dump_weights(dir, &out.prepared)?;
    }
    if let Some(path) = &args.dump_scatter {
        write_scatter(path, &out.prepared.illumination, &out.params, args.seed)?;
    }
    if let Some(last) = out.trace.last().and_then(|r| r.score) {
        eprintln!("{} steps, final score {last:.4}", out.trace.len());
    }
    Ok(())
}
