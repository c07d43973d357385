mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "meshlabel", version, about = "Batch driver for the 3D labeling pipeline")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON pipeline config; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Taxonomy JSON; defaults to the one stored with the input labels.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Chunk a mesh and build its LODs, or voxelize a point cloud, into a scene directory.
    Preprocess(commands::PreprocessArgs),
    /// Voxelize a point cloud into grid.json + occupied.csv.
    Voxelize(commands::VoxelizeArgs),
    /// Replay a stroke log on a scene and export the labels.
    LabelReplay(commands::ReplayArgs),
    /// Majority-vote several annotators' labels.
    Fuse(commands::FuseArgs),
    /// Per-element label uncertainty from several annotators.
    Uncert(commands::UncertArgs),
    /// Fill unlabeled (and optionally uncertain) elements from their neighbors.
    Fill(commands::FillArgs),
    /// Render label and uncertainty images along a camera trajectory.
    Render(commands::RenderArgs),
    /// Area-weighted IoU / mIoU / Perc.Area of a prediction.
    Score(commands::ScoreArgs),
    /// mIoU and Perc.Area restricted to elements under uncertainty thresholds.
    Sweep(commands::SweepArgs),
    /// Noisy copies of a ground-truth labeling.
    SimulateAnnotators(commands::SimulateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            commands::print_error("usage", first);
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<meshlabel_core::Error>())
                .map_or("error", |c| c.kind());
            let msg = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            commands::print_error(kind, &msg);
            ExitCode::FAILURE
        }
    }
}
