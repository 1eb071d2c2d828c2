//! Command routing: held teleop/script commands, the latched kill switch and
//! retracing the recent path when tracking is lost.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sim::VelocityLimits;
use crate::slam::TrackingState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmdSource {
    Teleop,
    Script,
    Retrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmdVel {
    pub v: f64,
    pub w: f64,
    pub stamp: f64,
    pub source: CmdSource,
}

/// Command actually applied to the robot for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectiveCmd {
    pub v: f64,
    pub w: f64,
    pub source: Option<CmdSource>,
    pub clamped: bool,
    pub killed: bool,
}

/// Kill dominates; otherwise the command is clamped into `limits`.
/// Non-finite components are treated as zero.
pub fn handle_cmd(cmd: &CmdVel, kill_engaged: bool, limits: &VelocityLimits) -> EffectiveCmd {
    if kill_engaged {
        return EffectiveCmd {
            source: Some(cmd.source),
            killed: true,
            ..Default::default()
        };
    }
    let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
    let (v, w, clamped) = limits.clamp(finite(cmd.v), finite(cmd.w));
    EffectiveCmd {
        v,
        w,
        source: Some(cmd.source),
        clamped: clamped || !cmd.v.is_finite() || !cmd.w.is_finite(),
        killed: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub v: f64,
    pub w: f64,
    pub ticks: u64,
}

/// Recent non-zero commands with how many ticks each was applied, bounded
/// by a total tick budget (oldest ticks are forgotten first).
#[derive(Debug, Clone, PartialEq)]
pub struct CommandHistory {
    entries: VecDeque<HistoryEntry>,
    capacity_ticks: u64,
    total: u64,
}

impl CommandHistory {
    pub fn new(capacity_ticks: u64) -> Self {
        CommandHistory {
            entries: VecDeque::new(),
            capacity_ticks,
            total: 0,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    pub fn total_ticks(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Records one tick of `(v, w)`. Standing still is not recorded.
    pub fn push(&mut self, v: f64, w: f64) {
        if (v == 0.0 && w == 0.0) || self.capacity_ticks == 0 {
            return;
        }
        match self.entries.back_mut() {
            Some(e) if e.v == v && e.w == w => e.ticks += 1,
            _ => self.entries.push_back(HistoryEntry { v, w, ticks: 1 }),
        }
        self.total += 1;
        while self.total > self.capacity_ticks {
            let front = self.entries.front_mut().expect("total > 0");
            front.ticks -= 1;
            self.total -= 1;
            if front.ticks == 0 {
                self.entries.pop_front();
            }
        }
    }

    /// Removes and returns the most recent recorded tick.
    pub fn pop_tick(&mut self) -> Option<(f64, f64)> {
        let back = self.entries.back_mut()?;
        let cmd = (back.v, back.w);
        back.ticks -= 1;
        self.total -= 1;
        if back.ticks == 0 {
            self.entries.pop_back();
        }
        Some(cmd)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.total = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ControlStats {
    pub clamped: u64,
    pub suppressed: u64,
    pub retraced_ticks: u64,
    pub killed_ticks: u64,
}

/// Control module state machine, advanced once per tick.
#[derive(Debug, Clone)]
pub struct Controller {
    limits: VelocityLimits,
    held: Option<CmdVel>,
    kill: bool,
    kill_stamp: f64,
    retracing: bool,
    state: TrackingState,
    history: CommandHistory,
    stats: ControlStats,
}

impl Controller {
    pub fn new(limits: VelocityLimits, history_ticks: u64) -> Self {
        Controller {
            limits,
            held: None,
            kill: false,
            kill_stamp: f64::NEG_INFINITY,
            retracing: false,
            state: TrackingState::default(),
            history: CommandHistory::new(history_ticks),
            stats: ControlStats::default(),
        }
    }

    pub fn limits(&self) -> &VelocityLimits {
        &self.limits
    }

    pub fn kill_engaged(&self) -> bool {
        self.kill
    }

    pub fn is_retracing(&self) -> bool {
        self.retracing
    }

    pub fn history(&self) -> &CommandHistory {
        &self.history
    }

    pub fn stats(&self) -> ControlStats {
        self.stats
    }

    /// Latches or releases the kill switch. Engaging drops the held command
    /// and aborts any retrace, so nothing resumes on release.
    pub fn set_kill(&mut self, engage: bool, stamp: f64) {
        if engage {
            self.held = None;
            self.retracing = false;
        }
        self.kill = engage;
        self.kill_stamp = self.kill_stamp.max(stamp);
    }

    pub fn command(&mut self, cmd: CmdVel) {
        // commands issued while the kill was engaged are discarded
        if self.kill || cmd.stamp <= self.kill_stamp || self.retracing {
            self.stats.suppressed += 1;
            return;
        }
        self.held = Some(cmd);
    }

    pub fn on_state(&mut self, state: TrackingState) {
        let prev = std::mem::replace(&mut self.state, state);
        if state == TrackingState::TrackingLost && prev != TrackingState::TrackingLost {
            self.held = None;
            self.retracing = !self.kill && !self.history.is_empty();
        } else if state != TrackingState::TrackingLost {
            self.retracing = false;
        }
    }

    /// Command for the coming tick.
    pub fn tick(&mut self) -> EffectiveCmd {
        if self.kill {
            self.stats.killed_ticks += 1;
            return EffectiveCmd {
                killed: true,
                ..Default::default()
            };
        }
        if self.retracing {
            if let Some((v, w)) = self.history.pop_tick() {
                self.stats.retraced_ticks += 1;
                return EffectiveCmd {
                    v: -v,
                    w: -w,
                    source: Some(CmdSource::Retrace),
                    clamped: false,
                    killed: false,
                };
            }
            self.retracing = false;
            return EffectiveCmd::default();
        }
        let Some(cmd) = self.held else {
            return EffectiveCmd::default();
        };
        let eff = handle_cmd(&cmd, false, &self.limits);
        if eff.clamped {
            self.stats.clamped += 1;
        }
        self.history.push(eff.v, eff.w);
        eff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::sim::step_dynamics;
    use std::collections::HashSet;

    const LIM: VelocityLimits = VelocityLimits { v_max: 1.0, w_max: 1.0 };

    fn cmd(v: f64, w: f64, stamp: f64) -> CmdVel {
        CmdVel { v, w, stamp, source: CmdSource::Teleop }
    }

    #[test]
    fn handle_cmd_examples() {
        let e = handle_cmd(&cmd(1.0, 0.0, 0.0), true, &LIM);
        assert_eq!((e.v, e.w, e.killed), (0.0, 0.0, true));
        let e = handle_cmd(&cmd(0.5, 0.1, 0.0), false, &LIM);
        assert_eq!((e.v, e.w, e.clamped), (0.5, 0.1, false));
        let e = handle_cmd(&cmd(5.0, 0.0, 0.0), false, &LIM);
        assert_eq!((e.v, e.w, e.clamped), (1.0, 0.0, true));
        let e = handle_cmd(&cmd(f64::NAN, 0.0, 0.0), false, &LIM);
        assert_eq!((e.v, e.clamped), (0.0, true));
    }

    #[test]
    fn history_merges_skips_zero_and_evicts() {
        let mut h = CommandHistory::new(5);
        h.push(1.0, 0.0);
        h.push(1.0, 0.0);
        h.push(0.0, 0.0);
        h.push(0.5, 0.2);
        assert_eq!(h.entries().copied().collect::<Vec<_>>(), vec![
            HistoryEntry { v: 1.0, w: 0.0, ticks: 2 },
            HistoryEntry { v: 0.5, w: 0.2, ticks: 1 },
        ]);
        for _ in 0..4 {
            h.push(0.3, 0.0);
        }
        assert_eq!(h.total_ticks(), 5);
        assert_eq!(h.entries().next().unwrap().v, 0.5);
        assert_eq!(h.pop_tick(), Some((0.3, 0.0)));
        assert_eq!(h.total_ticks(), 4);
    }

    #[test]
    fn kill_dominates_and_flushes() {
        let mut c = Controller::new(LIM, 300);
        c.command(cmd(1.0, 0.0, 0.0));
        assert_eq!(c.tick().v, 1.0);
        c.set_kill(true, 0.1);
        c.set_kill(true, 0.1);
        let e = c.tick();
        assert!(e.killed && e.v == 0.0);
        c.command(cmd(0.7, 0.0, 0.1));
        c.set_kill(false, 0.2);
        // nothing queued before or during the kill replays
        assert_eq!(c.tick(), EffectiveCmd::default());
        c.command(cmd(0.4, 0.0, 0.3));
        assert_eq!(c.tick().v, 0.4);
    }

    #[test]
    fn retrace_replays_reversed_negated() {
        let mut c = Controller::new(LIM, 300);
        c.on_state(TrackingState::Tracking);
        c.command(cmd(1.0, 0.0, 0.0));
        for _ in 0..20 {
            c.tick();
        }
        c.command(cmd(0.5, 0.3, 2.0));
        for _ in 0..5 {
            c.tick();
        }
        c.on_state(TrackingState::TrackingLost);
        let out: Vec<_> = (0..30).map(|_| c.tick()).collect();
        assert!(out[..5].iter().all(|e| e.v == -0.5 && e.w == -0.3));
        assert!(out[5..25].iter().all(|e| e.v == -1.0 && e.w == 0.0 && e.source == Some(CmdSource::Retrace)));
        assert!(out[25..].iter().all(|e| *e == EffectiveCmd::default()));
    }

    #[test]
    fn retrace_stops_on_relocalisation_and_suppresses_teleop() {
        let mut c = Controller::new(LIM, 300);
        c.on_state(TrackingState::Tracking);
        c.command(cmd(1.0, 0.0, 0.0));
        for _ in 0..20 {
            c.tick();
        }
        c.on_state(TrackingState::TrackingLost);
        for _ in 0..5 {
            assert_eq!(c.tick().v, -1.0);
        }
        c.command(cmd(0.2, 0.0, 3.0));
        assert_eq!(c.stats().suppressed, 1);
        c.on_state(TrackingState::Tracking);
        assert_eq!(c.tick(), EffectiveCmd::default());
        assert_eq!(c.history().total_ticks(), 15);
    }

    #[test]
    fn empty_history_holds() {
        let mut c = Controller::new(LIM, 300);
        c.on_state(TrackingState::Tracking);
        c.on_state(TrackingState::TrackingLost);
        assert!(!c.is_retracing());
        assert_eq!(c.tick(), EffectiveCmd::default());
    }

    #[test]
    fn retrace_returns_to_start() {
        let dt = 0.1;
        let mut c = Controller::new(LIM, 300);
        c.on_state(TrackingState::Tracking);
        let start = Pose2::new(1.0, 2.0, 0.3);
        let mut p = start;
        let script = [(0.5, 0.0, 10), (0.4, 0.5, 7), (0.8, -0.2, 13)];
        for (v, w, n) in script {
            c.command(cmd(v, w, 0.0));
            for _ in 0..n {
                let e = c.tick();
                p = step_dynamics(&p, e.v, e.w, dt, &LIM).pose;
            }
        }
        c.on_state(TrackingState::TrackingLost);
        while c.is_retracing() {
            let e = c.tick();
            p = step_dynamics(&p, e.v, e.w, dt, &LIM).pose;
        }
        assert!(p.distance_to(&start) < 1e-9);
    }

    /// Explores every reachable controller configuration under all inputs
    /// and checks that an engaged kill always yields a zero command.
    #[test]
    fn kill_is_dominant_in_every_reachable_state() {
        #[derive(Clone, Copy, Debug)]
        enum Input {
            Cmd(f64),
            Kill(bool),
            State(TrackingState),
            Tick,
        }
        let mut inputs = vec![Input::Cmd(0.5), Input::Cmd(0.0), Input::Kill(true), Input::Kill(false), Input::Tick];
        inputs.extend(TrackingState::ALL.iter().map(|s| Input::State(*s)));

        let key = |c: &Controller| {
            (
                c.kill,
                c.retracing,
                c.held.map(|h| h.v.to_bits()),
                c.state,
                c.history.total_ticks().min(3),
            )
        };
        let mut seen = HashSet::new();
        let mut frontier = vec![Controller::new(LIM, 3)];
        let mut stamp = 0.0;
        while let Some(c) = frontier.pop() {
            if !seen.insert(key(&c)) {
                continue;
            }
            for inp in &inputs {
                let mut n = c.clone();
                stamp += 1.0;
                match *inp {
                    Input::Cmd(v) => n.command(cmd(v, 0.0, stamp)),
                    Input::Kill(k) => n.set_kill(k, stamp),
                    Input::State(s) => n.on_state(s),
                    Input::Tick => {}
                }
                let engaged = n.kill_engaged();
                let mut probe = n.clone();
                let e = probe.tick();
                if engaged {
                    assert!(e.v == 0.0 && e.w == 0.0 && e.killed, "{inp:?} from {:?}", key(&c));
                }
                frontier.push(probe);
                frontier.push(n);
            }
        }
        assert!(seen.len() > 20);
    }
}
