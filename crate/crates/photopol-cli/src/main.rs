//! Command line front end for the photopol toolkit.

mod pipeline;
mod table2;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "photopol", version, about = "Photo-polarimetric height reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic polariser stack with ground truth.
    Synth(SynthArgs),
    /// Decompose a stack into unpolarised intensities, rho and phi.
    Decompose(DecomposeArgs),
    /// Estimate both light directions from a two-source decomposition.
    EstimateLight(EstimateLightArgs),
    /// Reconstruct surface height with a method variant.
    Reconstruct(ReconstructArgs),
    /// Recover albedo maps from a height solution.
    Albedo(AlbedoArgs),
    /// Compare an estimated height map against ground truth.
    Eval(EvalArgs),
    /// Run the full evaluation grid and emit a CSV.
    Table2(Table2Args),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene configuration file (flat key = value; flags override).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the stack and ground truth.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export each captured image as an 8-bit PNG.
    #[arg(long)]
    pub png: bool,
    /// Override scene keys, e.g. `-s noise_sigma=0.02 -s seed=7`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// Directory produced by `synth` (stack.phmap + scene.meta).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory (defaults to the input directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EstimateLightArgs {
    /// Directory holding a decomposition (iun/rho/phi + scene.meta).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Seed for restarts and pixel subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON record here as well as stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// srt16 | prop1 | prop2 | prop3 | prop13
    #[arg(long)]
    pub variant: String,
    /// known (from scene.meta) or estimated (two-source estimation).
    #[arg(long, default_value = "known")]
    pub lights: String,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Assumed albedo map for DOP rows (defaults to uniform 1).
    #[arg(long)]
    pub albedo_map: Option<PathBuf>,
    /// Gradient-consistency weight for prop13's albedo refits.
    #[arg(long)]
    pub albedo_lambda: Option<f64>,
    /// Stacking weight of the DOP ratio rows.
    #[arg(long, default_value_t = 1.0)]
    pub weight_dop: f64,
    /// Stacking weight of the intensity ratio rows.
    #[arg(long, default_value_t = 1.0)]
    pub weight_intensity: f64,
    /// Stacking weight of the phase rows.
    #[arg(long, default_value_t = 1.0)]
    pub weight_phase: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (defaults to the input directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AlbedoArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Height map to differentiate (defaults to height.phmap in the input
    /// directory).
    #[arg(long)]
    pub height: Option<PathBuf>,
    /// Gradient-consistency weight; 0 keeps the pointwise estimate.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Estimated height map.
    #[arg(long)]
    pub est: PathBuf,
    /// Directory holding truth_height.phmap and truth_normals.phmap.
    #[arg(long)]
    pub truth: PathBuf,
    /// Print a CSV row instead of the human-readable line.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args)]
pub struct Table2Args {
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Append a wall_ms column (not byte-reproducible across runs).
    #[arg(long)]
    pub timings: bool,
    /// JSON-lines solver stats stream.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 20.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 10.0)]
    pub peak_width: f64,
    #[arg(long, default_value_t = 22.0)]
    pub mask_radius: f64,
}

fn fail(kind: &str, err: &dyn std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": err.to_string(), "kind": kind }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                return fail("validation", &e.render(), 1);
            }
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => pipeline::cmd_synth(args),
        Command::Decompose(args) => pipeline::cmd_decompose(args),
        Command::EstimateLight(args) => pipeline::cmd_estimate_light(args),
        Command::Reconstruct(args) => pipeline::cmd_reconstruct(args),
        Command::Albedo(args) => pipeline::cmd_albedo(args),
        Command::Eval(args) => pipeline::cmd_eval(args),
        Command::Table2(args) => table2::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) =
                if err.is_numerical() { ("numerical", 2) } else { ("validation", 1) };
            fail(kind, &err, code)
        }
    }
}
