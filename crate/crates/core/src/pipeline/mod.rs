//! Wiring of the modules into a ticked pipeline, run either on one thread
//! or with one thread per module.

pub mod eval;
pub mod nodes;
pub mod replay;
pub mod report;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bus::{Bus, BusError, LogError};
use crate::context::ContextError;
use crate::mapping::{map_iou, save_map, CellState, GlobalMap, MappingError};
use crate::msg::{topics, Payload};
use crate::scenario::{Scenario, ScenarioError};
use crate::trajectory::TrajectoryError;

pub use eval::{ate, pair_by_stamp, Evaluator};
pub use nodes::{Clock, ContextNode, ControlNode, InputNode, MappingNode, Node, SimNode, SlamNode, SNAPSHOT_LIMIT};
pub use replay::{replay, ReplayOptions, ReplayOutcome, ReplayTarget};
pub use report::{ControlSummary, MapSummary, ModuleTiming, RunReport, TrackingSummary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unexpected payload on {0}")]
    Unexpected(String),
    #[error("log has no run/config record")]
    MissingConfig,
    #[error("node thread panicked: {0}")]
    NodePanic(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Wall-clock pacing for threaded runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    AsFastAsPossible,
    /// Simulated seconds per wall second.
    Realtime(f64),
}

pub struct Pipeline {
    scenario: Scenario,
    bus: Arc<Bus>,
    nodes: Vec<Box<dyn Node>>,
    timings: Vec<Vec<f64>>,
    tick: u64,
    total: u64,
    wall: Duration,
    shared_tick: Arc<AtomicU64>,
}

impl Pipeline {
    /// Builds every module on `bus` and announces the configuration.
    pub fn new(scenario: Scenario, bus: Arc<Bus>) -> Result<Pipeline, PipelineError> {
        scenario.validate()?;
        bus.publisher("runner")
            .publish(topics::RUN_CONFIG, 0.0, Payload::Config(scenario.to_json()))?;
        let nodes: Vec<Box<dyn Node>> = vec![
            Box::new(InputNode::new(&bus, &scenario)?),
            Box::new(ControlNode::new(&bus, &scenario)?),
            Box::new(SimNode::new(&bus, &scenario)?),
            Box::new(SlamNode::new(&bus, &scenario)?),
            Box::new(ContextNode::new(&bus, &scenario)?),
            Box::new(MappingNode::new(&bus, &scenario)?),
            Box::new(Evaluator::new(&bus)?),
        ];
        Ok(Pipeline {
            total: scenario.total_ticks(),
            timings: vec![Vec::new(); nodes.len()],
            scenario,
            bus,
            nodes,
            tick: 0,
            wall: Duration::ZERO,
            shared_tick: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }

    pub fn clock(&self) -> Clock {
        Clock {
            tick_hz: self.scenario.tick_hz,
        }
    }

    /// Next tick to run; readable from other threads while running.
    pub fn tick_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.shared_tick)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn total_ticks(&self) -> u64 {
        self.total
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.total
    }

    pub fn node<T: 'static>(&self) -> &T {
        self.nodes
            .iter()
            .find_map(|n| n.as_any().downcast_ref::<T>())
            .expect("every node type is present")
    }

    pub fn global_map(&self) -> &GlobalMap {
        self.node::<MappingNode>().global()
    }

    pub fn evaluator(&self) -> &Evaluator {
        self.node::<Evaluator>()
    }

    fn record(&mut self, i: usize, worked: bool, ms: f64) {
        if worked {
            self.timings[i].push(ms);
        }
    }

    /// Runs one tick through every module in order. False once finished.
    pub fn step(&mut self) -> Result<bool, PipelineError> {
        if self.is_finished() {
            return Ok(false);
        }
        let start = Instant::now();
        for i in 0..self.nodes.len() {
            let t = Instant::now();
            let worked = self.nodes[i].step(self.tick)?;
            self.record(i, worked, t.elapsed().as_secs_f64() * 1e3);
        }
        self.tick += 1;
        self.shared_tick.store(self.tick, Ordering::SeqCst);
        self.wall += start.elapsed();
        Ok(true)
    }

    pub fn run(&mut self) -> Result<(), PipelineError> {
        while self.step()? {}
        Ok(())
    }

    /// Runs the remaining ticks with every module on its own thread. The
    /// coordinator still releases modules in pipeline order each tick, so
    /// the message flow matches [`Pipeline::run`].
    pub fn run_threaded(&mut self, pacing: Pacing, stop: &AtomicBool) -> Result<(), PipelineError> {
        let nodes = std::mem::take(&mut self.nodes);
        let names: Vec<&'static str> = nodes.iter().map(|n| n.name()).collect();
        let tick_s = 1.0 / self.scenario.tick_hz as f64;
        let (nodes, result) = std::thread::scope(|scope| {
            let (done_tx, done_rx) = mpsc::channel::<(usize, Result<bool, PipelineError>, f64)>();
            let mut go = Vec::new();
            let mut handles = Vec::new();
            for (i, mut node) in nodes.into_iter().enumerate() {
                let (tx, rx) = mpsc::channel::<u64>();
                let done = done_tx.clone();
                go.push(tx);
                handles.push(scope.spawn(move || {
                    while let Ok(tick) = rx.recv() {
                        let t = Instant::now();
                        let r = node.step(tick);
                        if done.send((i, r, t.elapsed().as_secs_f64() * 1e3)).is_err() {
                            break;
                        }
                    }
                    node
                }));
            }
            drop(done_tx);
            let run_start = Instant::now();
            let first_tick = self.tick;
            let mut result = Ok(());
            'ticks: while !self.is_finished() && !stop.load(Ordering::SeqCst) {
                let start = Instant::now();
                for (i, tx) in go.iter().enumerate() {
                    if tx.send(self.tick).is_err() {
                        result = Err(PipelineError::NodePanic(names[i]));
                        break 'ticks;
                    }
                    match done_rx.recv() {
                        Ok((j, Ok(worked), ms)) => self.record(j, worked, ms),
                        Ok((_, Err(e), _)) => {
                            result = Err(e);
                            break 'ticks;
                        }
                        Err(_) => {
                            result = Err(PipelineError::NodePanic(names[i]));
                            break 'ticks;
                        }
                    }
                }
                self.tick += 1;
                self.shared_tick.store(self.tick, Ordering::SeqCst);
                self.wall += start.elapsed();
                if let Pacing::Realtime(speed) = pacing {
                    let due = (self.tick - first_tick) as f64 * tick_s / speed;
                    let ahead = due - run_start.elapsed().as_secs_f64();
                    if ahead > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(ahead));
                    }
                }
            }
            drop(go);
            let mut nodes = Vec::new();
            for (h, name) in handles.into_iter().zip(&names) {
                match h.join() {
                    Ok(n) => nodes.push(n),
                    Err(_) => result = Err(PipelineError::NodePanic(name)),
                }
            }
            (nodes, result)
        });
        if nodes.len() != names.len() {
            return result;
        }
        self.nodes = nodes;
        result
    }

    pub fn report(&self) -> RunReport {
        let ev = self.evaluator();
        let sim = self.node::<SimNode>();
        let slam = self.node::<SlamNode>();
        let ctx = self.node::<ContextNode>();
        let mapping = self.node::<MappingNode>();
        let control = self.node::<ControlNode>().stats();
        let map = mapping.global();
        let extent = map.extent();
        let (transform, valid) = slam.transform();
        let wall = self.wall.as_secs_f64();
        RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            ticks: self.tick,
            sim_time_s: self.clock().stamp(self.tick),
            wall_time_s: wall,
            frames_processed: sim.frames(),
            keyframes_forwarded: slam.gate().forwarded(),
            keyframes_gated: slam.gate().gated(),
            boundaries: ctx.processed(),
            local_maps: mapping.built(),
            fused: mapping.fused(),
            pipeline_rate_hz: if wall > 0.0 { sim.frames() as f64 / wall } else { 0.0 },
            scaled_ate_m: ev.scaled_ate(),
            raw_ate_m: ev.raw_ate(),
            final_scaled_error_m: ev.final_scaled_error(),
            final_raw_error_m: ev.final_raw_error(),
            map: MapSummary {
                resolution: map.resolution(),
                width: extent.width as usize,
                height: extent.height as usize,
                occupied: map.count(CellState::Occupied),
                free: map.count(CellState::Free),
                epoch: map.epoch(),
                iou: map_iou(map, &self.scenario.scene, self.scenario.mapping.iou_band),
            },
            tracking: TrackingSummary {
                final_state: slam.state().as_str().to_string(),
                losses: slam.losses(),
                relocalisations: slam.relocalisations(),
                scaler_failures: slam.scaler_failures(),
                scale: valid.then_some(transform.scale),
            },
            control: ControlSummary {
                clamped: sim.clamped_ticks(),
                suppressed: control.suppressed,
                retraced_ticks: control.retraced_ticks,
                killed_ticks: control.killed_ticks,
            },
            modules: self
                .nodes
                .iter()
                .zip(&self.timings)
                .map(|(n, t)| (n.name().to_string(), ModuleTiming::from_samples(t)))
                .collect(),
            topics: self.bus.all_stats().into_iter().collect(),
        }
    }
}

/// Files written by [`run_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub log: PathBuf,
    pub map_pgm: Option<PathBuf>,
    pub map_yaml: Option<PathBuf>,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threaded: bool,
    pub pacing: Option<f64>,
    pub stop: Option<Arc<AtomicBool>>,
}

pub fn open_recording(bus: &Bus, dir: &Path) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log = dir.join("bus.jsonl");
    let f = File::create(&log).map_err(io_err(&log))?;
    bus.record_to(Box::new(BufWriter::new(f)));
    Ok(log)
}

/// Writes map, report and trajectories for a finished pipeline.
pub fn write_artifacts(pipeline: &Pipeline, dir: &Path, log: PathBuf) -> Result<(RunReport, RunArtifacts), PipelineError> {
    pipeline.bus().finish_recording().map_err(io_err(&log))?;
    let map = pipeline.global_map();
    let (map_pgm, map_yaml) = if map.is_empty() {
        log::warn!("map is empty; no map files written");
        (None, None)
    } else {
        let files = save_map(map, dir, "map")?;
        (Some(files.pgm), Some(files.yaml))
    };
    let ev = pipeline.evaluator();
    ev.truth_trajectory().save(&dir.join("trajectory_truth.txt"))?;
    ev.scaled_trajectory().save(&dir.join("trajectory_scaled.txt"))?;
    ev.visual_trajectory().save(&dir.join("trajectory_visual.txt"))?;
    let report = pipeline.report();
    let report_json = dir.join("report.json");
    let report_text = dir.join("report.txt");
    let json = serde_json::to_string_pretty(&report).expect("report is plain data");
    std::fs::write(&report_json, json + "\n").map_err(io_err(&report_json))?;
    std::fs::write(&report_text, report.to_text()).map_err(io_err(&report_text))?;
    Ok((
        report,
        RunArtifacts {
            dir: dir.to_path_buf(),
            log,
            map_pgm,
            map_yaml,
            report_json,
            report_text,
        },
    ))
}

/// Runs a scenario to completion, recording everything under `dir`.
pub fn run_scenario(scenario: Scenario, dir: &Path, opts: &RunOptions) -> Result<(RunReport, RunArtifacts), PipelineError> {
    let bus = Bus::standard();
    let log = open_recording(&bus, dir)?;
    let mut pipeline = Pipeline::new(scenario, bus)?;
    if opts.threaded || opts.pacing.is_some() {
        let pacing = opts.pacing.map_or(Pacing::AsFastAsPossible, Pacing::Realtime);
        let never = AtomicBool::new(false);
        let stop = opts.stop.as_deref().unwrap_or(&never);
        pipeline.run_threaded(pacing, stop)?;
    } else {
        pipeline.run()?;
    }
    write_artifacts(&pipeline, dir, log)
}
