use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wheelleg::commands::{cmd_plot, cmd_pose_opt, cmd_simulate};
use wheelleg_core::kinematics::RobotModel;

#[derive(Parser)]
#[command(name = "wheelleg", version, about = "Pose optimization and closed-loop simulation for a wheel-legged quadruped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the pose sequence for a scenario and write it as JSON.
    PoseOpt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed loop and write the per-tick CSV log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Pose file from `pose-opt`; the nominal stand is held without one.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a CSV log as an SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Torque clamp drawn on the force panel, N·m.
        #[arg(long)]
        torque_limit: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WHEELLEG_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::PoseOpt { config, out } => cmd_pose_opt(config, out.as_deref()),
        Command::Simulate { config, poses, out } => cmd_simulate(config, poses.as_deref(), out.as_deref()).map(|_| ()),
        Command::Plot { csv, out, torque_limit } => cmd_plot(csv, out, torque_limit.unwrap_or(RobotModel::default().torque_max)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
