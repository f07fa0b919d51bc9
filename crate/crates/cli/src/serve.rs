use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::Args;
use crowdenhance_service::ServiceConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port to listen on; 0 picks a free one.
    #[arg(long, env = "CROWDENHANCE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "CROWDENHANCE_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory holding sessions and microtask state.
    #[arg(long, env = "CROWDENHANCE_DATA_DIR", default_value = "crowdenhance-data")]
    pub data_dir: PathBuf,
    /// Acceptable check-slider range as `lower,upper`.
    #[arg(long, env = "CROWDENHANCE_CHECK_RANGE", default_value = "0.25,0.75", value_parser = parse_range)]
    pub check_range: (f64, f64),
    /// Maximum number of sessions bundled into one microtask.
    #[arg(long, env = "CROWDENHANCE_BUNDLE_SIZE", default_value_t = 5)]
    pub bundle_size: usize,
    /// Seed for slider reversal and check placement.
    #[arg(long, env = "CROWDENHANCE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Static files (the worker and admin pages) served for other paths.
    #[arg(long, env = "CROWDENHANCE_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected `lower,upper`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(lo)?, parse(hi)?))
}

pub fn run(args: ServeArgs) -> CliResult<()> {
    let cfg = ServiceConfig {
        check_range: args.check_range,
        bundle_size: args.bundle_size,
        seed: args.seed,
    };
    let app = crowdenhance_service::build(&args.data_dir, cfg, args.static_dir)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(args.host, args.port))
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        crowdenhance_service::serve_on(listener, app)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}
