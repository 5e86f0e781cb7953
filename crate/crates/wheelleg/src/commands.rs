//! The three subcommands as library calls.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use wheelleg_core::pose_opt::{plan_pose_sequence_observed, SolveEvent, Task};
use wheelleg_core::scenario::{run_scenario, Trajectory};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::log::{read_csv, write_csv};
use crate::plot::render_svg;
use crate::posefile::PoseFile;

/// One solve or re-check during pose optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub role: String,
    /// Terrain step of a re-checked copy.
    pub step: Option<usize>,
    pub seconds: f64,
    pub iterations: usize,
    pub max_violation: f64,
}

pub fn solve_poses(cfg: &ScenarioConfig) -> Result<(PoseFile, Vec<SolveRecord>), CliError> {
    let terrain = cfg.terrain()?;
    cfg.controller.pose_opt.validate().map_err(|e| CliError::Config(format!("controller.pose_opt: {e}")))?;
    let task = Task::infer(&terrain);
    info!("pose optimization for {task:?} terrain with {} step(s)", terrain.steps().len());
    let mut records = Vec::new();
    let mut started = Instant::now();
    let mut observe = |ev: SolveEvent<'_>| match ev {
        SolveEvent::Started(role) => {
            debug!("solving {role}");
            started = Instant::now();
        }
        SolveEvent::Solved(role, rep) => {
            records.push(SolveRecord { role: role.to_string(), step: None, seconds: started.elapsed().as_secs_f64(), iterations: rep.iterations, max_violation: rep.max_violation });
        }
        SolveEvent::Checked { role, step, max_violation } => {
            records.push(SolveRecord { role: role.to_string(), step: Some(step), seconds: 0.0, iterations: 0, max_violation });
        }
    };
    let seq = plan_pose_sequence_observed(&terrain, &cfg.robot, task, &cfg.controller.pose_opt, &mut observe).map_err(|e| match e {
        wheelleg_core::Error::Pose(p) => CliError::Solver(p.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    Ok((PoseFile::new(cfg, seq)?, records))
}

pub fn simulate(cfg: &ScenarioConfig, poses: Option<&PoseFile>) -> Result<Trajectory, CliError> {
    let sc = cfg.scenario()?;
    let seq = match poses {
        Some(p) => {
            p.check(cfg)?;
            p.sequence.clone()
        }
        None => cfg.nominal_sequence()?,
    };
    info!("simulating {:.2} s with {} pose(s)", sc.duration, seq.len());
    let tr = run_scenario(&sc, &seq)?;
    if !tr.note.is_empty() {
        info!("{}", tr.note);
    }
    Ok(tr)
}

pub fn status_line(tr: &Trajectory) -> String {
    format!("status={} t_end={:.3} x_end={:.3}", tr.status.as_str(), tr.t_end, tr.x_end)
}

pub fn cmd_pose_opt(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = ScenarioConfig::load(config)?;
    let (file, records) = solve_poses(&cfg)?;
    for r in &records {
        match r.step {
            None => println!("{}: solve_time={:.3}s iterations={} max_violation={:.3e}", r.role, r.seconds, r.iterations, r.max_violation),
            Some(k) => println!("{} (copy on step {}): re-check max_violation={:.3e}", r.role, k + 1, r.max_violation),
        }
    }
    let out = out.or(cfg.outputs.poses.as_deref()).ok_or_else(|| CliError::Config("no output path: pass --out or set outputs.poses".into()))?;
    file.save(out)?;
    println!("wrote {} poses to {}", file.sequence.len(), out.display());
    Ok(())
}

pub fn cmd_simulate(config: &Path, poses: Option<&Path>, out: Option<&Path>) -> Result<Trajectory, CliError> {
    let cfg = ScenarioConfig::load(config)?;
    let poses = poses.map(PoseFile::load).transpose()?;
    let tr = simulate(&cfg, poses.as_ref())?;
    if let Some(out) = out.or(cfg.outputs.csv.as_deref()) {
        let f = File::create(out).map_err(|e| CliError::io(out, e))?;
        write_csv(&tr, BufWriter::new(f))?;
        info!("wrote {} rows to {}", tr.rows.len(), out.display());
    }
    println!("{}", status_line(&tr));
    Ok(tr)
}

pub fn cmd_plot(csv: &Path, out: &Path, torque_limit: f64) -> Result<(), CliError> {
    let f = File::open(csv).map_err(|e| CliError::io(csv, e))?;
    let table = read_csv(f)?;
    let svg = render_svg(&table, torque_limit)?;
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))?;
    info!("plotted {} rows to {}", table.rows, out.display());
    Ok(())
}
