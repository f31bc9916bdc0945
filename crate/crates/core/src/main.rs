use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lod_elasticity::experiment::{run_and_write, Case, ExperimentConfig};
use lod_elasticity::{LodError, Result};

#[derive(Parser)]
#[command(version, about = "LOD multiscale elasticity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence or decay study.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// constant, multiscale, locking or decay
    #[arg(long)]
    case: Option<String>,
    /// Fine level n_h (squares per side).
    #[arg(long)]
    fine: Option<usize>,
    /// Coarse levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    coarse: Vec<usize>,
    /// Patch sizes per coarse level (default: ceil(0.8 ln(1/H))).
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// key = value file; command line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => Some(ExperimentConfig::parse_unchecked(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    let case = match (&args.case, &config) {
        (Some(c), _) => c.parse::<Case>()?,
        (None, Some(c)) => c.case,
        (None, None) => return Err(LodError::Config("--case is required".into())),
    };
    let fine = args
        .fine
        .or(config.as_ref().map(|c| c.fine))
        .ok_or_else(|| LodError::Config("--fine is required".into()))?;
    let coarse = if !args.coarse.is_empty() {
        args.coarse
    } else {
        config.as_ref().map(|c| c.coarse.clone()).ok_or_else(|| LodError::Config("--coarse is required".into()))?
    };
    let mut out = ExperimentConfig::new(case, fine, coarse);
    if let Some(c) = config.take() {
        out.k = c.k;
        out.seed = c.seed;
        out.out = c.out;
        out.plots = c.plots;
    }
    if !args.k.is_empty() {
        out.k = Some(args.k);
    }
    out.seed = args.seed.unwrap_or(out.seed);
    out.out = args.out.or(out.out);
    out.plots |= args.plots;
    out.validate()?;
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run(args) = Cli::parse().command;
    let result = build_config(args).and_then(|config| run_and_write(&config));
    match result {
        Ok((report, files)) => {
            for l in &report.levels {
                println!(
                    "n = {:3}  H = {:.4e}  k = {}  err_gfem = {:.4e}  err_fem = {:.4e}  ({:.1}s)",
                    l.n, l.h, l.k, l.err_gfem, l.err_fem, l.seconds
                );
            }
            if !report.levels.is_empty() {
                println!("slope gfem = {:.3}, slope fem = {:.3}", report.slope_gfem, report.slope_fem);
            }
            if let Some(e) = report.reference_error {
                println!("|I_h u - u_h| / |I_h u| = {e:.4}");
            }
            for d in &report.decay {
                println!("element {}: slope {:.3}, tails {:?}", d.element, d.slope, d.tails);
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
