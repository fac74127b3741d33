//! `paak`: bake scene SDFs, synthesize data, compute keyframe weights, place
//! animations and score them.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paak_core::WeightMode;

#[derive(Parser)]
#[command(name = "paak", version, about = "Place human animations in labeled 3D scenes")]
struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for training and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for baked SDFs and trained models.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bake a scene's signed distance field and write it to a cache file.
    BakeSdf {
        scene: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        cell_size: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic scenes and clips.
    Synth {
        #[command(subcommand)]
        target: SynthTarget,
    },
    /// Estimate per-vertex contact and semantics with the built-in heuristic.
    Features {
        anim: PathBuf,
        /// Labels file whose vocabulary to use (default vocabulary otherwise).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute per-frame keyframe weights.
    Keyframes {
        anim: PathBuf,
        features: PathBuf,
        #[arg(long, default_value = "geometric")]
        mode: WeightMode,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the keyframe regressor on clips in a directory, or on synthetic clips.
    TrainModel {
        /// Directory of `.anim` files with `.ftr` features of the same stem.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place an animation in a scene.
    Place {
        scene: PathBuf,
        anim: PathBuf,
        features: PathBuf,
        #[arg(long, default_value = "active")]
        weights: WeightMode,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a placed animation for collisions and contact.
    Eval {
        scene: PathBuf,
        anim: PathBuf,
        /// A pose JSON (`tau`, `theta_deg`) or a placement result.
        pose: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        contact_threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline once per weighting mode and tabulate the results.
    Compare {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_delimiter = ',', default_value = "uniform,geometric,active")]
        modes: Vec<WeightMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run features, keyframes, placement and metrics end to end.
    Run {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        mode: Option<WeightMode>,
    },
}

#[derive(Subcommand)]
enum SynthTarget {
    /// Floor plus labeled boxes from a recipe; writes OBJ and labels JSON.
    Scene {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// A procedural clip with its constructed features and phase spans.
    Clip {
        #[arg(long, default_value = "walk_then_sit")]
        kind: paak_core::animation::ClipKind,
        #[arg(long, default_value_t = 4.0)]
        duration: f64,
        #[arg(long, default_value_t = 15.0)]
        fps: f64,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 0.45)]
        seat_height: f64,
        #[arg(long, default_value_t = 0.3)]
        jump_height: f64,
        #[arg(long, default_value_t = 0.0)]
        idle: f64,
        #[arg(long, default_value_t = 0.0)]
        heading: f64,
        /// Class the seated body touches.
        #[arg(long, default_value = "chair")]
        seat_class: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Write phase spans and seat geometry as JSON.
        #[arg(long)]
        phases: Option<PathBuf>,
    },
}

/// Inputs for the end-to-end commands; each overrides the config's `paths`.
#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    recipe: Option<PathBuf>,
    #[arg(long)]
    anim: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
