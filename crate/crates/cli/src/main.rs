use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semsplat_cli::commands::{
    cmd_eval, cmd_pseudo, cmd_render, cmd_synth, cmd_train, RenderArgs, TrainArgs,
};
use semsplat_cli::synth::SynthConfig;
use semsplat_cli::CliError;

/// Semantic Gaussian splatting: optimize per-point color and semantic
/// features against sparsely labeled multi-view images, then render
/// view-consistent RGB and segmentation from any pose.
#[derive(Parser)]
#[command(name = "semsplat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle with an analytic ray-traced oracle.
    Synth(SynthArgs),
    /// Build pseudo labels and boundary masks from instance masks.
    Pseudo(PseudoArgs),
    /// Optimize a Gaussian cloud and decoder against a scene bundle.
    Train(TrainCli),
    /// Render RGB, segmentation, and optional feature-PCA images.
    Render(RenderCli),
    /// Score predicted label maps against ground truth (mIoU).
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    out: PathBuf,
    /// Object classes (background class 0 is added on top).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    blobs: usize,
    #[arg(long, default_value_t = 30)]
    views: usize,
    /// Square image resolution.
    #[arg(long, default_value_t = 256)]
    size: u32,
    /// Number of views that keep ground-truth labels.
    #[arg(long, default_value_t = 3)]
    labeled: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Surface samples for the synthetic SfM point cloud.
    #[arg(long, default_value_t = 4000)]
    colmap_points: usize,
}

#[derive(Args)]
struct PseudoArgs {
    /// Scene bundle directory.
    #[arg(long)]
    scene: PathBuf,
    /// Labeled reference view id; defaults to the first labeled view.
    #[arg(long)]
    reference: Option<String>,
    /// Border margin as a fraction of min(width, height).
    #[arg(long, default_value_t = 0.15)]
    margin: f64,
}

#[derive(Args)]
struct TrainCli {
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for model.ckpt and losses.csv.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the step count.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (1 = fully deterministic, 0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RenderCli {
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene bundle providing camera poses and the palette.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated view ids; default renders all views.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    views: Option<Vec<String>>,
    /// Also write feature-map PCA visualizations.
    #[arg(long)]
    pca: bool,
    /// Fit one PCA basis across all views (for consistency comparisons).
    #[arg(long)]
    pca_scene: bool,
    /// Report per-view render times (first render discarded as warm-up).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted label PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth label PNGs with matching file names.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Class count; inferred from the label maps when omitted.
    #[arg(long)]
    classes: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(
            &a.out,
            &SynthConfig {
                classes: a.classes,
                blobs: a.blobs,
                views: a.views,
                size: a.size,
                labeled: a.labeled,
                seed: a.seed,
                colmap_points: a.colmap_points,
            },
        ),
        Command::Pseudo(a) => cmd_pseudo(&a.scene, a.reference.as_deref(), a.margin),
        Command::Train(a) => cmd_train(
            &a.scene,
            &a.out,
            &TrainArgs {
                config_path: a.config,
                steps: a.steps,
                seed: a.seed,
                threads: a.threads,
            },
        ),
        Command::Render(a) => cmd_render(
            &a.ckpt,
            &a.scene,
            &a.out,
            &RenderArgs {
                views: a.views,
                pca: a.pca,
                pca_scene: a.pca_scene,
                threads: a.threads,
                timing: a.timing,
            },
        ),
        Command::Eval(a) => cmd_eval(&a.pred, &a.gt, &a.out, a.classes).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
