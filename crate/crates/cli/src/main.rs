//! `cbt-tess`: validate meshes, subdivide them uniformly, animate camera
//! driven refinement, benchmark updates and export snapshots.
//!
//! Exit codes: 0 ok, 1 usage, 2 invalid input, 3 capacity exceeded.

mod commands;
mod snapshot;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cbt-tess", version, about = "Adaptive bisection tessellation over a concurrent binary tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a mesh and report its halfedge statistics.
    Validate {
        /// OBJ file or built-in shape (triangle, dodecahedron, grid:NxM).
        #[arg(long)]
        mesh: String,
    },
    /// Split every bisector to a uniform depth.
    Subdivide(SubdivideArgs),
    /// Follow a camera path, running one update per frame.
    Animate(AnimateArgs),
    /// Time updates at a uniform-depth triangulation.
    Bench(BenchArgs),
    /// Write OBJ or SVG files from a snapshot.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Obj,
    Svg,
    Csv,
}

#[derive(Debug, Args)]
pub struct StateArgs {
    /// OBJ file or built-in shape (triangle, dodecahedron, grid:NxM).
    #[arg(long, default_value = "dodecahedron")]
    pub mesh: String,
    /// Memory pool holds 2^D bisectors.
    #[arg(long, default_value_t = 17)]
    pub cbt_depth: u32,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Comma-separated subset of obj, svg, csv.
    #[arg(long, value_delimiter = ',')]
    pub export: Vec<Format>,
    /// Write zeros instead of stage times so runs compare byte for byte.
    #[arg(long)]
    pub no_timing: bool,
    /// Weld OBJ vertices that agree to 1e-7.
    #[arg(long)]
    pub weld: bool,
}

#[derive(Debug, Args)]
pub struct SubdivideArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub uniform_depth: u32,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// JSON keyframes: [{t, position, forward, up, fov}].
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Screen-space area per triangle, in pixels.
    #[arg(long, default_value_t = 49.0)]
    pub target_area: f64,
    /// Enables planet mode: vertices are projected onto a sphere of this
    /// radius.
    #[arg(long)]
    pub planet_radius: Option<f64>,
    #[arg(long, default_value_t = 1280)]
    pub width: u32,
    #[arg(long, default_value_t = 720)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "grid:4x4")]
    pub mesh: String,
    #[arg(long, default_value_t = 18)]
    pub cbt_depth: u32,
    /// Largest thread count measured; 1, 2 and 4 are measured below it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 11)]
    pub uniform_depth: u32,
    /// Measured updates per thread count.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Time random split/merge updates from this seed instead of all-Keep.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(anyhow::Error),
    Capacity(String),
}

impl Failure {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Self::Input(e.into())
    }

    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Input(_) => 2,
            Self::Capacity(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::Input(e) => write!(f, "invalid input: {e:#}"),
            Self::Capacity(m) => write!(f, "capacity exceeded: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Validate { mesh } => commands::validate(&mesh),
        Command::Subdivide(a) => commands::subdivide(&a),
        Command::Animate(a) => commands::animate(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Export(a) => commands::export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cbt-tess: {f}");
            ExitCode::from(f.code())
        }
    }
}
