//! Command-line front end: scenario simulation, sequence replay through
//! the estimator, and trajectory evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use elevio::eval::evaluate;
use elevio::io;
use elevio::mode::ManualTriggers;
use elevio::pipeline::RunConfig;
use elevio::sim::{generate, Scenario};

#[derive(Parser)]
#[command(name = "elevio", version, about = "Elevator-aware LiDAR-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sensor sequence and ground truth from a scenario file.
    Simulate {
        /// Scenario JSON; omit to use the built-in single-ride scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory for seq.jsonl and gt.csv.
        #[arg(long)]
        out: PathBuf,
        /// Write the effective scenario (with defaults filled in).
        #[arg(long)]
        dump_scenario: bool,
    },
    /// Run the estimator over a sequence file.
    Run {
        #[arg(long)]
        seq: PathBuf,
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for traj.csv and report.json.
        #[arg(long)]
        out: PathBuf,
        /// Skip the exit-time zero-state update.
        #[arg(long)]
        no_zupt: bool,
        /// Fixed-resolution voxel filter instead of the adaptive law.
        #[arg(long)]
        no_adapt: bool,
        /// Never switch out of inertial mode.
        #[arg(long)]
        no_elevator_mode: bool,
        /// Manual mode triggers: lines of `t_seconds entry|exit`.
        #[arg(long)]
        triggers: Option<PathBuf>,
        /// Optional ASCII dump of the final global map.
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Compute metrics for a trajectory.
    Eval {
        #[arg(long)]
        traj: PathBuf,
        /// Ground-truth CSV from the simulator.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Reference terminal height, m.
        #[arg(long)]
        zref: Option<f64>,
    },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let file = File::open(path).with_context(|| format!("open {what} {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parse {what} {}", path.display()))
}

fn simulate(scenario: Option<PathBuf>, out: PathBuf, dump: bool) -> Result<()> {
    let scenario: Scenario = match scenario {
        Some(p) => load_json(&p, "scenario")?,
        None => Scenario::single_ride(1),
    };
    std::fs::create_dir_all(&out)?;
    let (events, gt) = generate(&scenario)?;
    io::write_sequence(BufWriter::new(File::create(out.join("seq.jsonl"))?), &events)?;
    io::write_ground_truth(BufWriter::new(File::create(out.join("gt.csv"))?), &gt)?;
    if dump {
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(out.join("scenario.json"))?),
            &scenario,
        )?;
    }
    eprintln!(
        "wrote {} events and {} ground-truth rows to {}",
        events.len(),
        gt.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cmd(
    seq: PathBuf,
    config: Option<PathBuf>,
    out: PathBuf,
    no_zupt: bool,
    no_adapt: bool,
    no_elevator_mode: bool,
    triggers: Option<PathBuf>,
    map_out: Option<PathBuf>,
) -> Result<bool> {
    let mut cfg: RunConfig = match config {
        Some(p) => load_json(&p, "config")?,
        None => RunConfig::default(),
    };
    cfg.disable_zupt |= no_zupt;
    cfg.disable_adaptive |= no_adapt;
    cfg.disable_elevator_mode |= no_elevator_mode;
    let trig = match triggers {
        Some(p) => ManualTriggers::parse(BufReader::new(
            File::open(&p).with_context(|| format!("open triggers {}", p.display()))?,
        ))?,
        None => ManualTriggers::default(),
    };
    let events = io::read_sequence(BufReader::new(
        File::open(&seq).with_context(|| format!("open sequence {}", seq.display()))?,
    ))?;
    std::fs::create_dir_all(&out)?;

    let mut pipeline = elevio::pipeline::Pipeline::with_triggers(cfg, trig);
    let mut abort: Option<String> = None;
    for e in &events {
        if let Err(err) = pipeline.step(e) {
            abort = Some(err.to_string());
            break;
        }
    }
    pipeline.report.aborted = abort.clone();

    io::write_trajectory(
        BufWriter::new(File::create(out.join("traj.csv"))?),
        &pipeline.trajectory,
    )?;
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(out.join("report.json"))?),
        &pipeline.report,
    )?;
    if let Some(p) = map_out {
        pipeline
            .global_map()
            .export_ascii(BufWriter::new(File::create(&p)?))?;
    }
    match &abort {
        Some(msg) => eprintln!(
            "run aborted ({msg}); {} records flushed to {}",
            pipeline.trajectory.len(),
            out.display()
        ),
        None => eprintln!(
            "run complete: {} records, {} updates, {} mode switches",
            pipeline.trajectory.len(),
            pipeline.report.updates,
            pipeline.report.entry_flags.len() + pipeline.report.exit_flags.len()
        ),
    }
    Ok(abort.is_none())
}

fn eval_cmd(traj: PathBuf, gt: Option<PathBuf>, zref: Option<f64>) -> Result<()> {
    let trajectory = io::read_trajectory(BufReader::new(
        File::open(&traj).with_context(|| format!("open trajectory {}", traj.display()))?,
    ))?;
    let gt_rows = match gt {
        Some(p) => Some(io::read_ground_truth(BufReader::new(
            File::open(&p).with_context(|| format!("open ground truth {}", p.display()))?,
        ))?),
        None => None,
    };
    let metrics = evaluate(&trajectory, gt_rows.as_deref(), zref)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &metrics)?;
    writeln!(stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            dump_scenario,
        } => simulate(scenario, out, dump_scenario).map(|_| true),
        Command::Run {
            seq,
            config,
            out,
            no_zupt,
            no_adapt,
            no_elevator_mode,
            triggers,
            map_out,
        } => run_cmd(
            seq,
            config,
            out,
            no_zupt,
            no_adapt,
            no_elevator_mode,
            triggers,
            map_out,
        ),
        Command::Eval { traj, gt, zref } => eval_cmd(traj, gt, zref).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
