//! Offline re-execution of context and mapping from a recorded log.

use std::collections::VecDeque;
use std::path::Path;

use super::nodes::{ContextNode, MappingNode};
use super::PipelineError;
use crate::bus::{read_log, LogEntry, LogRecord};
use crate::mapping::{GlobalMap, GridUpdate};
use crate::msg::{topics, BoundaryMsg, LocalMapMsg, Payload};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayTarget {
    Context,
    Mapping,
    #[default]
    Both,
}

impl ReplayTarget {
    fn context(self) -> bool {
        matches!(self, ReplayTarget::Context | ReplayTarget::Both)
    }

    fn mapping(self) -> bool {
        matches!(self, ReplayTarget::Mapping | ReplayTarget::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplayOptions {
    pub target: ReplayTarget,
    /// Overrides the recorded map resolution.
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Comparison {
    pub checked: usize,
    pub mismatched: usize,
}

impl Comparison {
    fn check<T: PartialEq>(&mut self, expected: Option<T>, recorded: &T) -> bool {
        self.checked += 1;
        let same = expected.as_ref() == Some(recorded);
        if !same {
            self.mismatched += 1;
        }
        same
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub scenario: Scenario,
    pub records: usize,
    /// Line of a cut-off final record.
    pub truncated: Option<usize>,
    /// True when the replay configuration differs from the recorded one.
    pub config_divergent: bool,
    pub boundaries: Comparison,
    pub local_maps: Comparison,
    pub global_maps: Comparison,
    pub first_mismatch: Option<(usize, String)>,
    pub map: GlobalMap,
}

impl ReplayOutcome {
    pub fn mismatches(&self) -> usize {
        self.boundaries.mismatched + self.local_maps.mismatched + self.global_maps.mismatched
    }
}

struct Replayer {
    opts: ReplayOptions,
    context: ContextNode,
    mapping: MappingNode,
    boundaries: VecDeque<BoundaryMsg>,
    locals: VecDeque<LocalMapMsg>,
    globals: VecDeque<GridUpdate>,
    outcome: ReplayOutcome,
}

impl Replayer {
    fn new(config: &serde_json::Value, opts: ReplayOptions) -> Result<Replayer, PipelineError> {
        let mut scenario: Scenario =
            serde_json::from_value(config.clone()).map_err(|_| PipelineError::Unexpected(topics::RUN_CONFIG.into()))?;
        let mut divergent = false;
        if let Some(r) = opts.resolution {
            divergent = r != scenario.mapping.resolution;
            scenario.mapping.resolution = r;
        }
        scenario.validate()?;
        let mapping = MappingNode::offline(&scenario)?;
        Ok(Replayer {
            opts,
            context: ContextNode::offline(&scenario)?,
            boundaries: VecDeque::new(),
            locals: VecDeque::new(),
            globals: VecDeque::new(),
            outcome: ReplayOutcome {
                scenario,
                records: 0,
                truncated: None,
                config_divergent: divergent,
                boundaries: Comparison::default(),
                local_maps: Comparison::default(),
                global_maps: Comparison::default(),
                first_mismatch: None,
                map: mapping.global().clone(),
            },
            mapping,
        })
    }

    fn map(&mut self, msg: &BoundaryMsg) -> Result<(), PipelineError> {
        let (local, update) = self.mapping.process(msg)?;
        self.locals.push_back(local);
        self.globals.extend(update);
        Ok(())
    }

    fn mismatch(&mut self, line: usize, what: &str) {
        self.outcome.first_mismatch.get_or_insert((line, what.to_string()));
    }

    fn feed(&mut self, r: &LogRecord) -> Result<(), PipelineError> {
        match (r.topic.as_str(), &r.payload) {
            (topics::ODOM_SCALED, Payload::Scaled(s)) => self.context.observe_scaled(*s),
            (topics::SLAM_KEYFRAME, Payload::Mask(m)) if self.opts.target.context() => {
                let msg = self.context.process(m, r.stamp)?;
                if self.opts.target.mapping() {
                    self.map(&msg)?;
                }
                self.boundaries.push_back(msg);
            }
            (topics::CONTEXT_BOUNDARY, Payload::Boundary(b)) => {
                if self.opts.target.context() {
                    let expected = self.boundaries.pop_front();
                    if !self.outcome.boundaries.check(expected, b) {
                        self.mismatch(r.line, topics::CONTEXT_BOUNDARY);
                    }
                } else {
                    self.map(b)?;
                }
            }
            (topics::MAP_LOCAL, Payload::LocalMap(l)) if self.opts.target.mapping() => {
                let expected = self.locals.pop_front();
                if !self.outcome.local_maps.check(expected, l) {
                    self.mismatch(r.line, topics::MAP_LOCAL);
                }
            }
            (topics::MAP_GLOBAL, Payload::GlobalMap(g)) if self.opts.target.mapping() => {
                let expected = self.globals.pop_front();
                if !self.outcome.global_maps.check(expected, g) {
                    self.mismatch(r.line, topics::MAP_GLOBAL);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Re-runs context and/or mapping over `log`, comparing every output with
/// what was recorded.
pub fn replay(log: &Path, opts: ReplayOptions) -> Result<ReplayOutcome, PipelineError> {
    let mut replayer: Option<Replayer> = None;
    let mut records = 0;
    let mut truncated = None;
    for entry in read_log(log)? {
        let r = match entry? {
            LogEntry::Record(r) => r,
            LogEntry::Truncated { line } => {
                truncated = Some(line);
                break;
            }
        };
        records += 1;
        match (&mut replayer, &r.payload) {
            (None, Payload::Config(c)) if r.topic == topics::RUN_CONFIG => {
                replayer = Some(Replayer::new(c, opts)?);
            }
            (None, _) => {}
            (Some(rp), _) => rp.feed(&r)?,
        }
    }
    let mut rp = replayer.ok_or(PipelineError::MissingConfig)?;
    rp.outcome.records = records;
    rp.outcome.truncated = truncated;
    // outputs the log never got to record are not mismatches when truncated
    if truncated.is_none() {
        let unmatched = rp.boundaries.len() * usize::from(rp.opts.target.context())
            + rp.locals.len()
            + rp.globals.len();
        if unmatched > 0 {
            rp.outcome.boundaries.mismatched += rp.boundaries.len() * usize::from(rp.opts.target.context());
            rp.outcome.local_maps.mismatched += rp.locals.len();
            rp.outcome.global_maps.mismatched += rp.globals.len();
            rp.mismatch(records, "outputs missing from log");
        }
    }
    rp.outcome.map = rp.mapping.global().clone();
    Ok(rp.outcome)
}
