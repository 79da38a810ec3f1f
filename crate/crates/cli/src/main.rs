use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sparse_recon::mesh::import_ply;
use sparse_recon::pipeline::{Pipeline, PipelineConfig, Stage, StageError, GRID_FUSED, GRID_INIT, GRID_REFINED, MESH};
use sparse_recon::{Error, SparseDenseGrid};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sparse-recon", version, about = "Monocular indoor reconstruction on a sparse SDF voxel grid")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set refine.steps=1000`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(short, long, env = "SPARSE_RECON_WORKERS", global = true)]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `run.data`.
    Synth,
    /// Fit per-frame depth scale fields.
    Calibrate,
    /// Allocate blocks and fuse scaled depth, color and semantics.
    Fuse,
    /// Smooth the fused grid.
    Denoise {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Refine SDF and color by differentiable volume rendering.
    Refine {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Joint rendering and continuous CRF refinement.
    Crf {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Extract the zero level set as a PLY mesh.
    Mesh {
        /// Grid snapshot; defaults to the most refined one present.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a mesh against the ground truth.
    Eval {
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline {
        /// Stage to leave out; repeatable.
        #[arg(long, value_name = "STAGE")]
        skip: Vec<String>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let core = e
        .downcast_ref::<Error>()
        .or_else(|| e.downcast_ref::<StageError>().map(|s| &s.source));
    match core {
        Some(Error::Config(_)) => 2,
        Some(Error::Diverged { .. } | Error::NonFiniteLoss { .. }) => 4,
        Some(_) => 3,
        None => 1,
    }
}

fn load_grid(p: &Pipeline, input: Option<PathBuf>, default: &str) -> Result<SparseDenseGrid> {
    let path = input.unwrap_or_else(|| p.out_path(default));
    Ok(SparseDenseGrid::load(&path)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let p = Pipeline::new(cfg);
    match cli.command {
        Command::Synth => p.synth().context("synth")?,
        Command::Calibrate => {
            let ds = p.load_data()?;
            p.calibrate(&ds).context("calibrate")?;
        }
        Command::Fuse => {
            let ds = p.load_data()?;
            let scales = p.load_scales(&ds)?;
            p.fuse(&ds, &scales).context("fuse")?;
        }
        Command::Denoise { input } => {
            let g = load_grid(&p, input, GRID_FUSED)?;
            p.denoise(g).context("denoise")?;
        }
        Command::Refine { input } => {
            let ds = p.load_data()?;
            let scales = p.load_scales(&ds)?;
            let g = load_grid(&p, input, GRID_INIT)?;
            p.refine(&ds, &scales, g).context("refine")?;
        }
        Command::Crf { input } => {
            let ds = p.load_data()?;
            let scales = p.load_scales(&ds)?;
            let g = load_grid(&p, input, GRID_REFINED)?;
            p.crf(&ds, &scales, g).context("crf")?;
        }
        Command::Mesh { input } => {
            let g = match input {
                Some(path) => SparseDenseGrid::load(&path)?,
                None => p.latest_grid()?,
            };
            let m = p.mesh(&g).context("mesh")?;
            log::info!("{} vertices, {} triangles", m.vertices.len(), m.triangles.len());
        }
        Command::Eval { mesh } => {
            let ds = p.load_data()?;
            let m = import_ply(&mesh.unwrap_or_else(|| p.out_path(MESH)))?;
            let metrics = p.eval(&ds, &m).context("eval")?;
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::Pipeline { skip } => {
            let skip = skip.iter().map(|s| s.parse::<Stage>()).collect::<Result<Vec<_>, _>>()?;
            if let Some(m) = p.run(&skip)? {
                println!("{}", serde_json::to_string(&m)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
