//! Command-line driver: simulate scenes, run individual pipeline stages or
//! the full densification, render and evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voxsplat::commands;
use voxsplat::formats::ConfigOverrides;
use voxsplat::voxel::RasterizeMode;

#[derive(Parser)]
#[command(
    name = "voxsplat",
    version,
    about = "Voxel-visibility driven densification of Gaussian-splat scenes"
)]
struct Cli {
    /// Worker thread cap (default: hardware concurrency).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Numeric pipeline knobs; unset values fall back to the manifest config and
/// then to the built-in defaults.
#[derive(Args, Default)]
struct CfgArgs {
    /// Voxel edge length in meters (default 0.3).
    #[arg(long)]
    voxel_resolution: Option<f64>,
    /// Relative depth slack of the incomplete flag (default 0.1).
    #[arg(long)]
    tau_rel: Option<f64>,
    /// Bad-pixel fraction that flags an instance (default 0.3).
    #[arg(long)]
    tau_frac: Option<f64>,
    /// Supporting views per instance (default 4).
    #[arg(long)]
    k: Option<usize>,
    /// Intra-subset diversity weight (default 0.5).
    #[arg(long)]
    lambda: Option<f64>,
    /// Selection noise standard deviation (default 0).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Patch side length in pixels, odd (default 11).
    #[arg(long)]
    window: Option<usize>,
    /// Patch-match iterations (default 8).
    #[arg(long)]
    iterations: Option<usize>,
    /// NCC-cost acceptance threshold (default 0.6).
    #[arg(long)]
    cost_max: Option<f64>,
    /// Cross-view reprojection tolerance in pixels (default 1.0).
    #[arg(long)]
    geo_max_px: Option<f64>,
    /// Cross-view relative depth tolerance (default 0.02).
    #[arg(long)]
    geo_max_rel: Option<f64>,
    /// Cross-view normal angle tolerance in degrees (default 10).
    #[arg(long)]
    geo_max_deg: Option<f64>,
    /// Supporting views that must agree (default 2).
    #[arg(long)]
    min_consistent: Option<usize>,
    /// Random depth sampling lower bound in meters (default 0.5).
    #[arg(long)]
    zmin: Option<f64>,
    /// Random depth sampling upper bound in meters (default 60).
    #[arg(long)]
    zmax: Option<f64>,
    /// Point spawning stride in pixels (default 2).
    #[arg(long)]
    stride: Option<usize>,
    /// Neighbors for the spawned-primitive radius (default 4).
    #[arg(long)]
    neighbor_k: Option<usize>,
    /// Densification passes (default 1).
    #[arg(long)]
    passes: Option<usize>,
    /// Seed for every randomized stage.
    #[arg(long)]
    seed: Option<u64>,
}

impl CfgArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            voxel_resolution: self.voxel_resolution,
            tau_rel: self.tau_rel,
            tau_frac: self.tau_frac,
            k: self.k,
            lambda: self.lambda,
            epsilon: self.epsilon,
            window: self.window,
            iterations: self.iterations,
            cost_max: self.cost_max,
            geo_max_px: self.geo_max_px,
            geo_max_rel: self.geo_max_rel,
            geo_max_deg: self.geo_max_deg,
            min_consistent: self.min_consistent,
            zmin: self.zmin,
            zmax: self.zmax,
            stride: self.stride,
            neighbor_k: self.neighbor_k,
            passes: self.passes,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    Filtered,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene spec into a full on-disk scene.
    Simulate { spec: PathBuf, outdir: PathBuf },
    /// Voxelize the scene's point cloud and dump the grid as JSON.
    Voxelize {
        manifest: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Z-buffer the voxel grid into depth/index maps for one view.
    Rasterize {
        manifest: PathBuf,
        outdir: PathBuf,
        #[arg(long)]
        view: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Flag instances whose Gaussians disagree with the voxel depth.
    Flag {
        manifest: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Score and select supporting views for one instance.
    SelectViews {
        manifest: PathBuf,
        out: PathBuf,
        #[arg(long)]
        instance: u32,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Patch-match stereo for one instance.
    Mvs {
        manifest: PathBuf,
        outdir: PathBuf,
        #[arg(long)]
        instance: u32,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// End-to-end densification of every incomplete instance.
    Densify {
        manifest: PathBuf,
        outdir: PathBuf,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// Render a primitive set from one of the scene's views.
    Render {
        manifest: PathBuf,
        outdir: PathBuf,
        #[arg(long)]
        view: u32,
        /// Primitive PLY to render (default: the manifest's priors).
        #[arg(long)]
        primitives: Option<PathBuf>,
        #[command(flatten)]
        cfg: CfgArgs,
    },
    /// PSNR and loss breakdown of a rendered view against ground truth.
    Evaluate {
        /// Scene directory written by `simulate`.
        scene: PathBuf,
        /// Render directory written by `render`.
        render: PathBuf,
        #[arg(long)]
        view: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), commands::CommandError> {
    match cli.command {
        Command::Simulate { spec, outdir } => commands::simulate(&spec, &outdir),
        Command::Voxelize { manifest, out, cfg } => {
            commands::voxelize_cmd(&manifest, &out, &cfg.overrides())
        }
        Command::Rasterize {
            manifest,
            outdir,
            view,
            mode,
            cfg,
        } => commands::rasterize_cmd(
            &manifest,
            &outdir,
            view,
            match mode {
                ModeArg::All => RasterizeMode::AllVoxels,
                ModeArg::Filtered => RasterizeMode::ViewFiltered,
            },
            &cfg.overrides(),
        ),
        Command::Flag { manifest, out, cfg } => {
            commands::flag_cmd(&manifest, &out, &cfg.overrides())
        }
        Command::SelectViews {
            manifest,
            out,
            instance,
            cfg,
        } => commands::select_views_cmd(&manifest, &out, instance, &cfg.overrides()),
        Command::Mvs {
            manifest,
            outdir,
            instance,
            cfg,
        } => commands::mvs_cmd(&manifest, &outdir, instance, &cfg.overrides()),
        Command::Densify {
            manifest,
            outdir,
            cfg,
        } => commands::densify_cmd(&manifest, &outdir, &cfg.overrides()),
        Command::Render {
            manifest,
            outdir,
            view,
            primitives,
            cfg,
        } => commands::render_cmd(
            &manifest,
            &outdir,
            view,
            primitives.as_deref(),
            &cfg.overrides(),
        ),
        Command::Evaluate {
            scene,
            render,
            view,
            out,
        } => commands::evaluate_cmd(&scene, &render, view, out.as_deref()).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the same path; those are
            // not usage errors.
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
