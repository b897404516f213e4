use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lidar_slam::pipeline::{self, write_synthetic_sequence};
use lidar_slam::{PipelineConfig, Result, RunResult, WorldSpec};

#[derive(Parser)]
#[command(name = "lidar-slam", version, about = "LiDAR SLAM with adaptive Scan Context loop closure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on a dataset or synthetic world.
    Run(RunArgs),
    /// Write a synthetic world as a KITTI-style sequence.
    Generate {
        /// World spec, e.g. `square_loop:frames=400,noise=0.02`.
        spec: WorldSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Key-value configuration file. Defaults apply when omitted.
    config: Option<PathBuf>,
    /// Disable loop closure (pure odometry).
    #[arg(long)]
    no_loop: bool,
    /// Replace the adaptive gate with a fixed distance threshold in meters.
    #[arg(long, value_name = "M")]
    fixed_threshold: Option<f64>,
    /// Use a synthetic world instead of a dataset.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<WorldSpec>,
    /// Ground-truth poses file (KITTI format) for evaluation.
    #[arg(long, value_name = "GT")]
    eval: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run all stages on the calling thread.
    #[arg(long)]
    single_thread: bool,
}

fn build_config(args: RunArgs) -> Result<PipelineConfig> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for item in &args.overrides {
        config.apply_override(item)?;
    }
    if args.no_loop {
        config.loop_enabled = false;
    }
    if let Some(m) = args.fixed_threshold {
        config.fixed_gate = true;
        config.fixed_threshold = m;
    }
    if let Some(spec) = args.synthetic {
        config.synthetic = Some(spec);
    }
    if let Some(gt) = args.eval {
        config.ground_truth = Some(gt);
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if args.single_thread {
        config.threaded = false;
    }
    config.validate()?;
    Ok(config)
}

fn summarize(config: &PipelineConfig, result: &RunResult) {
    println!("frames: {}", result.trajectory.len());
    println!("keyframes: {}", result.keyframe_frames.len());
    println!(
        "loops: {} accepted, {} rejected",
        result.loops_accepted(),
        result.events.len() - result.loops_accepted()
    );
    if let Some(report) = &result.report {
        if report.insufficient_length {
            println!("ATE/ARE: trajectory shorter than the shortest segment");
        } else {
            println!("ATE: {:.4} %  ARE: {:.4} deg/100m", report.ate_percent, report.are_deg_per_100m);
        }
    }
    if let Some(e) = result.final_position_error {
        println!("final position error: {e:.4} m");
    }
    println!("outputs: {}", config.output_dir.display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = build_config(args)?;
            let result = pipeline::run(&config)?;
            summarize(&config, &result);
        }
        Command::Generate { spec, out } => {
            spec.validate()?;
            let poses = write_synthetic_sequence(&spec, &out)?;
            println!("wrote {} frames to {}", spec.frames, out.display());
            println!("ground truth: {}", poses.display());
        }
        Command::Config => print!("{}", PipelineConfig::default().to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
