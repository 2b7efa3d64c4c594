use clap::{Args, Parser, Subcommand};
use radsplat::cli::{
    cmd_bench, cmd_eval, cmd_pointcloud, cmd_reconstruct, cmd_render, cmd_synth, CliError,
};
use radsplat::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "radsplat",
    version,
    about = "Sparse radar depth scans to dense depth fields, point clouds, and splat renders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a localized depth model from a scan and write mean/variance rasters
    Reconstruct(RunArgs),
    /// Build a confidence-filtered 3D point cloud (PLY) from a scan
    Pointcloud(RunArgs),
    /// Render a PLY point cloud through a camera into a PPM or PNG image
    Render(RenderArgs),
    /// Time conventional vs localized fits and write a CSV table
    Bench(RunArgs),
    /// Compare conventional vs localized accuracy on a synthetic scene
    Eval(RunArgs),
    /// Generate a synthetic scene and write a sampled scan plus its truth raster
    Synth(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key=value config file; '#' starts a comment, unknown keys are errors
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input scan file, .csv or .json
    #[arg(long)]
    scan: Option<PathBuf>,
    /// Output directory for results and manifest.json
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random choice in the run
    #[arg(long)]
    seed: Option<String>,
    /// Region grid as AxB (azimuth cells x elevation cells), e.g. 4x3
    #[arg(long)]
    regions: Option<String>,
    /// Variance quantile in (0, 1] kept when filtering cloud points
    #[arg(long)]
    quantile: Option<String>,
    /// Number of query directions sampled for the point cloud
    #[arg(long)]
    queries: Option<String>,
    /// Output format: csv or json for scans, ascii or binary for PLY
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    /// Key=value config file; '#' starts a comment, unknown keys are errors
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input PLY point cloud
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Camera JSON file: extrinsic (12 numbers), intrinsic fx/fy/cx/cy, width, height
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Output image path ending in .ppm or .png
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config_file(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_text(&text).map_err(CliError::from)
        }
        None => Ok(RunConfig::default()),
    }
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut config = load_config_file(&args.config)?;
    if let Some(p) = &args.scan {
        config.scan = Some(p.clone());
        config.assigned.insert("scan".to_string());
    }
    if let Some(p) = &args.out {
        config.output_dir = Some(p.clone());
        config.assigned.insert("output_dir".to_string());
    }
    for (key, value) in [
        ("seed", &args.seed),
        ("regions", &args.regions),
        ("quantile", &args.quantile),
        ("queries", &args.queries),
        ("format", &args.format),
    ] {
        if let Some(v) = value {
            config.apply(key, v)?;
        }
    }
    Ok(config)
}

fn build_render_config(args: &RenderArgs) -> Result<RunConfig, CliError> {
    let mut config = load_config_file(&args.config)?;
    if let Some(p) = &args.ply {
        config.ply = Some(p.clone());
        config.assigned.insert("ply".to_string());
    }
    if let Some(p) = &args.camera {
        config.camera = Some(p.clone());
        config.assigned.insert("camera".to_string());
    }
    if let Some(p) = &args.out {
        config.image = Some(p.clone());
        config.assigned.insert("image".to_string());
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Reconstruct(a) => build_run_config(a).and_then(|c| cmd_reconstruct(&c)),
        Command::Pointcloud(a) => build_run_config(a).and_then(|c| cmd_pointcloud(&c)),
        Command::Render(a) => build_render_config(a).and_then(|c| cmd_render(&c)),
        Command::Bench(a) => build_run_config(a).and_then(|c| cmd_bench(&c)),
        Command::Eval(a) => build_run_config(a).and_then(|c| cmd_eval(&c)),
        Command::Synth(a) => build_run_config(a).and_then(|c| cmd_synth(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
