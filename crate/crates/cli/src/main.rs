use std::path::PathBuf;
use std::process::ExitCode;

use attnlab::{run_pipeline, PipelineConfig, Stage};
use attnlab_hism::Variant;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "attnlab",
    version,
    about = "Highlight attention simulation, saliency analysis and NS prediction"
)]
struct Cli {
    /// TOML pipeline configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Temporal branch: lstm, tranenc or tranenc-task.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the monitoring tasks.
    Simulate,
    /// Generate synthetic gaze sessions.
    GazeGen,
    /// Detect fixations, screen calibration, segment trials.
    Fixations,
    /// Pooled fixation density maps and split-half reliability.
    Saliency,
    /// Normalized element saliency around each critical event.
    Ns,
    /// Bottom-up saliency of event frames.
    Itti,
    /// Assemble (input, NS) training pairs.
    Dataset,
    /// Train the predictor.
    Train,
    /// Predict held-out NS series.
    Predict,
    /// Evaluation report by highlight condition.
    Eval,
    /// Hypothesis tests.
    Stats,
    /// Heatmaps, NS plots and their CSVs.
    Export,
    /// Run all stages, or up to --stage.
    Pipeline {
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match PipelineConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: stage config failed: {e}");
                return ExitCode::from(2);
            }
        },
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    let until = match cli.command {
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            return ExitCode::SUCCESS;
        }
        Command::Simulate => Stage::Simulate,
        Command::GazeGen => Stage::GazeGen,
        Command::Fixations => Stage::Fixations,
        Command::Saliency => Stage::Saliency,
        Command::Ns => Stage::Ns,
        Command::Itti => Stage::Itti,
        Command::Dataset => Stage::Dataset,
        Command::Train => Stage::Train,
        Command::Predict => Stage::Predict,
        Command::Eval => Stage::Eval,
        Command::Stats => Stage::Stats,
        Command::Export => Stage::Export,
        Command::Pipeline { stage } => stage.unwrap_or(Stage::Export),
    };
    match run_pipeline(&cfg, until) {
        Ok(m) => {
            println!(
                "{} stages, {} artifacts, manifest {}",
                m.stages.len(),
                m.artifacts.len(),
                cfg.out_dir.join("manifest.json").display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
