use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use ctxmap_core::bus::Bus;
use ctxmap_core::pipeline::{
    replay, run_scenario, Pipeline, PipelineError, ReplayOptions, ReplayTarget, RunOptions,
};
use ctxmap_core::scenario::Scenario;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.yaml"));
    Scenario::load(&path).unwrap()
}

fn record(name: &str, dir: &Path, opts: &RunOptions) -> Vec<u8> {
    let (_, a) = run_scenario(scenario(name), dir, opts).unwrap();
    std::fs::read(a.log).unwrap()
}

#[test]
fn threaded_scheduler_matches_sequential_log() {
    for name in ["driveby", "retrace", "loss"] {
        let seq = tempfile::tempdir().unwrap();
        let thr = tempfile::tempdir().unwrap();
        let a = record(name, seq.path(), &RunOptions::default());
        let b = record(
            name,
            thr.path(),
            &RunOptions {
                threaded: true,
                ..Default::default()
            },
        );
        assert!(a == b, "{name}: threaded log differs");
    }
}

#[test]
fn stop_flag_ends_a_threaded_run_early() {
    let mut p = Pipeline::new(scenario("square"), Bus::standard()).unwrap();
    let stop = AtomicBool::new(true);
    p.run_threaded(ctxmap_core::pipeline::Pacing::AsFastAsPossible, &stop).unwrap();
    assert!(p.tick() < p.total_ticks());
}

#[test]
fn report_accounts_for_every_frame() {
    for name in ["driveby", "square", "retrace", "loss"] {
        let mut p = Pipeline::new(scenario(name), Bus::standard()).unwrap();
        p.run().unwrap();
        let r = p.report();
        let expected = r.sim_time_s * p.scenario().frame_hz as f64;
        assert!((r.frames_processed as f64 - expected).abs() <= 1.0, "{name}: {}", r.frames_processed);
        assert!(r.wall_time_s >= 0.0 && r.pipeline_rate_hz >= 0.0);
        assert_eq!(r.keyframes_forwarded + r.keyframes_gated, r.frames_processed, "{name}");
        assert_eq!(r.boundaries, r.keyframes_forwarded);
        assert!(r.topics.values().all(|t| t.dropped == 0), "{name}");
    }
}

#[test]
fn replay_reproduces_recorded_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (report, a) = run_scenario(scenario("square"), dir.path(), &RunOptions::default()).unwrap();
    let o = replay(&a.log, ReplayOptions::default()).unwrap();
    assert_eq!(o.truncated, None);
    assert!(!o.config_divergent);
    assert_eq!(o.mismatches(), 0, "first mismatch {:?}", o.first_mismatch);
    assert_eq!(o.boundaries.checked as u64, report.boundaries);
    assert_eq!(o.local_maps.checked as u64, report.local_maps);
    assert!(o.global_maps.checked > 0);
    let pgm = std::fs::read(a.map_pgm.unwrap()).unwrap();
    assert_eq!(ctxmap_core::mapping::export_pgm(&o.map).unwrap(), pgm);

    for target in [ReplayTarget::Context, ReplayTarget::Mapping] {
        let o = replay(&a.log, ReplayOptions { target, resolution: None }).unwrap();
        assert_eq!(o.mismatches(), 0, "{target:?}");
    }
}

#[test]
fn replay_flags_divergence_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = run_scenario(scenario("driveby"), dir.path(), &RunOptions::default()).unwrap();

    let same = replay(
        &a.log,
        ReplayOptions {
            target: ReplayTarget::Mapping,
            resolution: Some(0.05),
        },
    )
    .unwrap();
    assert!(!same.config_divergent);
    assert_eq!(same.mismatches(), 0);

    let coarse = replay(
        &a.log,
        ReplayOptions {
            target: ReplayTarget::Mapping,
            resolution: Some(0.1),
        },
    )
    .unwrap();
    assert!(coarse.config_divergent);
    assert!(coarse.mismatches() > 0);
    assert_eq!(coarse.map.resolution(), 0.1);

    let full = std::fs::read(&a.log).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &full[..full.len() / 2]).unwrap();
    let partial = replay(&cut, ReplayOptions::default()).unwrap();
    let line = partial.truncated.expect("cut log reported as truncated");
    assert_eq!(line, partial.records + 1);
    assert_eq!(partial.mismatches(), 0);

    let headless = dir.path().join("headless.jsonl");
    let text = String::from_utf8(full).unwrap();
    std::fs::write(&headless, text.lines().skip(1).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    assert!(matches!(replay(&headless, ReplayOptions::default()), Err(PipelineError::MissingConfig)));
}

#[test]
fn node_accessors_reach_running_state() {
    let bus = Bus::standard();
    let mut p = Pipeline::new(scenario("driveby"), Arc::clone(&bus)).unwrap();
    assert!(p.step().unwrap());
    assert_eq!(p.tick(), 1);
    p.run().unwrap();
    assert!(p.is_finished());
    assert!(!p.step().unwrap());
    assert_eq!(p.node::<ctxmap_core::pipeline::ContextNode>().processed(), 12);
    assert!(p.global_map().epoch() > 0);
}
