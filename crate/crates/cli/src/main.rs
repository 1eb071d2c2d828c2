use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ctxmap_core::bus::Bus;
use ctxmap_core::mapping::save_map;
use ctxmap_core::pipeline::{
    open_recording, replay, write_artifacts, Pacing, Pipeline, ReplayOptions, ReplayOutcome, ReplayTarget, RunReport,
};
use ctxmap_core::scenario::Scenario;
use ctxmap_server::{serve, ServerConfig, SimClock};

/// Exit code for a replay that stopped at a cut-off log line.
const EXIT_TRUNCATED: u8 = 2;
/// Exit code for a replay whose recomputed outputs differ from the log.
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "ctxmap", version, about = "Run, replay and report simulated mapping scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the bus log, map and report.
    Run(RunArgs),
    /// Re-run context and mapping over a recorded bus log.
    Replay(ReplayArgs),
    /// Print the report of a finished run.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pace the simulation against the wall clock.
    #[arg(long)]
    realtime: bool,
    /// Simulated seconds per wall second when paced.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Serve telemetry over WebSocket on this port (0 picks a free one).
    /// Implies --realtime.
    #[arg(long, value_name = "PORT")]
    serve: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Overrides the scenario duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory, defaults to runs/<scenario name>.
    #[arg(long, env = "CTXMAP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Module {
    Context,
    Mapping,
}

#[derive(clap::Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Modules to recompute.
    #[arg(long, value_delimiter = ',', default_value = "context,mapping")]
    modules: Vec<Module>,
    /// Replays mapping at a different cell size; results are then
    /// expected to differ from the recording.
    #[arg(long)]
    resolution: Option<f64>,
    /// Write the replayed map here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(clap::Args)]
struct ReportArgs {
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTXMAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a).map(|_| ExitCode::SUCCESS),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain on one line, skipping causes the outer message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    text
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(d) = a.duration {
        scenario.duration_s = d;
    }
    scenario.validate()?;
    if !(a.speed > 0.0 && a.speed.is_finite()) {
        bail!("--speed must be positive");
    }
    let dir = a.out.clone().unwrap_or_else(|| Path::new("runs").join(&scenario.name));
    let bus = Bus::standard();
    let log = open_recording(&bus, &dir)?;
    let mut pipeline = Pipeline::new(scenario, bus)?;

    if a.serve.is_some() || a.realtime {
        let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
        let stop = Arc::new(AtomicBool::new(false));
        let server = match a.serve {
            Some(port) => {
                let clock = SimClock {
                    tick: pipeline.tick_counter(),
                    tick_hz: pipeline.scenario().tick_hz,
                };
                let addr = format!("{}:{port}", a.bind);
                let handle = rt.block_on(serve(&addr, Arc::clone(pipeline.bus()), clock, ServerConfig::default()))?;
                println!("serving on ws://{}", handle.local_addr());
                Some(handle)
            }
            None => None,
        };
        let flag = Arc::clone(&stop);
        rt.spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                log::warn!("interrupted; finishing the current tick");
                flag.store(true, Ordering::SeqCst);
            }
        });
        pipeline.run_threaded(Pacing::Realtime(a.speed), &stop)?;
        if let Some(h) = server {
            rt.block_on(h.shutdown());
        }
    } else {
        pipeline.run()?;
    }
    let (report, artifacts) = write_artifacts(&pipeline, &dir, log)?;
    print!("{}", report.to_text());
    println!("artifacts in {}", artifacts.dir.display());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let context = a.modules.iter().any(|m| matches!(m, Module::Context));
    let mapping = a.modules.iter().any(|m| matches!(m, Module::Mapping));
    let target = match (context, mapping) {
        (true, true) => ReplayTarget::Both,
        (true, false) => ReplayTarget::Context,
        (false, true) => ReplayTarget::Mapping,
        (false, false) => bail!("--modules is empty"),
    };
    let outcome = replay(
        &a.log,
        ReplayOptions {
            target,
            resolution: a.resolution,
        },
    )
    .with_context(|| format!("replaying {}", a.log.display()))?;
    print_replay(&outcome);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        if outcome.map.is_empty() {
            log::warn!("replayed map is empty; nothing written");
        } else {
            let files = save_map(&outcome.map, dir, "map")?;
            println!("map written to {}", files.pgm.display());
        }
    }
    if let Some(line) = outcome.truncated {
        eprintln!("warning: log is truncated at line {line}; replay is partial");
        return Ok(ExitCode::from(EXIT_TRUNCATED));
    }
    if outcome.mismatches() > 0 && !outcome.config_divergent {
        return Ok(ExitCode::from(EXIT_MISMATCH));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_replay(o: &ReplayOutcome) {
    println!("scenario    {}", o.scenario.name);
    println!("records     {}", o.records);
    for (name, c) in [("boundaries", o.boundaries), ("local maps", o.local_maps), ("global maps", o.global_maps)] {
        println!("{name:<11} {} checked, {} mismatched", c.checked, c.mismatched);
    }
    if o.config_divergent {
        println!("config      divergent from the recording; mismatches are expected");
    }
    if let Some((line, topic)) = &o.first_mismatch {
        println!("first mismatch at line {line} ({topic})");
    }
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let json = a.dir.join("report.json");
    if !json.is_file() {
        bail!("{}: no report.json; is this a run directory?", a.dir.display());
    }
    let report = RunReport::load(&json).with_context(|| format!("reading {}", json.display()))?;
    let mut expected = vec![
        "bus.jsonl",
        "report.txt",
        "trajectory_truth.txt",
        "trajectory_scaled.txt",
        "trajectory_visual.txt",
    ];
    if report.map.occupied + report.map.free > 0 {
        expected.extend(["map.pgm", "map.yaml"]);
    }
    let missing: Vec<&str> = expected.into_iter().filter(|f| !a.dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        bail!("{}: missing {}", a.dir.display(), missing.join(", "));
    }
    let text = match a.format {
        Format::Text => report.to_text(),
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
