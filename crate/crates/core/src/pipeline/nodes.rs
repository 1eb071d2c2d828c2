//! Pipeline modules as bus-connected nodes, stepped once per tick.

use std::any::Any;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::alignment::{associate_by_timestamp, OdometryScaler};
use crate::bus::{Bus, Envelope, Publisher, Subscription};
use crate::context::{build_homography, extract_boundary, filter_boundary, BoundaryFilter, ColumnRay, Homography};
use crate::control::{CmdSource, CmdVel, ControlStats, Controller, EffectiveCmd};
use crate::geometry::{Pose2, SimilarityTransform3};
use crate::mapping::{build_local_map, GlobalMap, GridUpdate, LocalMapConfig};
use crate::mask::SegMask;
use crate::msg::{topics, BoundaryMsg, LocalMapMsg, Payload};
use crate::scenario::{Scenario, ScriptAction, ScriptEvent};
use crate::sim::{render_segmentation, step_dynamics, wheel_odometry, CameraModel, Scene, VelocityLimits, VisualOdometry, VisualPose, WheelNoise};
use crate::slam::{publish_scaled, step_tracking, KeyframeGate, ScaledOdomMsg, TrackingEvent, TrackingState};
use crate::trajectory::{Trajectory, TrajectorySample};

/// Queue depth for node subscriptions; far more than one tick produces.
pub const NODE_QUEUE: usize = 4096;

pub trait Node: Send {
    fn name(&self) -> &'static str;
    /// Runs tick `tick`; returns whether there was work to do.
    fn step(&mut self, tick: u64) -> Result<bool, PipelineError>;
    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone, Copy)]
pub struct Clock {
    pub tick_hz: u32,
}

impl Clock {
    pub fn stamp(&self, tick: u64) -> f64 {
        tick as f64 / self.tick_hz as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_hz as f64
    }
}

fn payload<'a, T>(env: &'a Envelope, f: impl Fn(&'a Payload) -> Option<&'a T>) -> Result<&'a T, PipelineError> {
    f(&env.payload).ok_or_else(|| PipelineError::Unexpected(env.topic.to_string()))
}

/// Replays the scenario's drive script onto the command topics.
pub struct InputNode {
    clock: Clock,
    events: Vec<ScriptEvent>,
    next: usize,
    publisher: Publisher,
}

impl InputNode {
    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        Ok(InputNode {
            clock: Clock { tick_hz: scenario.tick_hz },
            events: scenario.script_events()?,
            next: 0,
            publisher: bus.publisher("input"),
        })
    }
}

impl Node for InputNode {
    fn name(&self) -> &'static str {
        "input"
    }

    fn step(&mut self, tick: u64) -> Result<bool, PipelineError> {
        let stamp = self.clock.stamp(tick);
        let mut worked = false;
        while let Some(ev) = self.events.get(self.next).filter(|e| e.tick <= tick) {
            match ev.action {
                ScriptAction::Cmd { v, w } => {
                    let cmd = CmdVel { v, w, stamp, source: CmdSource::Script };
                    self.publisher.publish(topics::CTRL_CMD_VEL, stamp, Payload::CmdVel(cmd))?;
                }
                ScriptAction::Kill(k) => {
                    self.publisher.publish(topics::CTRL_KILL, stamp, Payload::Kill(k))?;
                }
            }
            self.next += 1;
            worked = true;
        }
        Ok(worked)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct ControlNode {
    clock: Clock,
    ctl: Controller,
    cmd: Subscription,
    kill: Subscription,
    state: Subscription,
    publisher: Publisher,
}

impl ControlNode {
    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        let history = (scenario.control.history_s * scenario.tick_hz as f64).round() as u64;
        Ok(ControlNode {
            clock: Clock { tick_hz: scenario.tick_hz },
            ctl: Controller::new(scenario.limits, history),
            cmd: bus.subscribe(topics::CTRL_CMD_VEL, NODE_QUEUE)?,
            kill: bus.subscribe(topics::CTRL_KILL, NODE_QUEUE)?,
            state: bus.subscribe(topics::SLAM_STATE, NODE_QUEUE)?,
            publisher: bus.publisher("control"),
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.ctl
    }

    pub fn stats(&self) -> ControlStats {
        self.ctl.stats()
    }
}

impl Node for ControlNode {
    fn name(&self) -> &'static str {
        "control"
    }

    fn step(&mut self, tick: u64) -> Result<bool, PipelineError> {
        for env in self.kill.drain() {
            let k = *payload(&env, |p| match p {
                Payload::Kill(k) => Some(k),
                _ => None,
            })?;
            self.ctl.set_kill(k, env.stamp);
        }
        for env in self.state.drain() {
            let s = *payload(&env, |p| match p {
                Payload::Tracking(s) => Some(s),
                _ => None,
            })?;
            self.ctl.on_state(s);
        }
        for env in self.cmd.drain() {
            let c = *payload(&env, |p| match p {
                Payload::CmdVel(c) => Some(c),
                _ => None,
            })?;
            self.ctl.command(c);
        }
        let stamp = self.clock.stamp(tick);
        let eff = self.ctl.tick();
        self.publisher.publish(topics::CTRL_EFFECTIVE, stamp, Payload::Effective(eff))?;
        Ok(true)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Robot, camera, segmenter and visual front end.
pub struct SimNode {
    clock: Clock,
    scene: Scene,
    camera: CameraModel,
    limits: VelocityLimits,
    noise: WheelNoise,
    rng: ChaCha8Rng,
    vo: VisualOdometry,
    truth: Pose2,
    wheel: Pose2,
    frame_every: u64,
    started: bool,
    cmd: EffectiveCmd,
    effective: Subscription,
    publisher: Publisher,
    clamped_ticks: u64,
    frames: u64,
}

impl SimNode {
    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        let start = scenario.scene.robot_start;
        Ok(SimNode {
            clock: Clock { tick_hz: scenario.tick_hz },
            scene: scenario.scene.clone(),
            camera: scenario.camera_model(),
            limits: scenario.limits,
            noise: scenario.wheel_noise,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            vo: VisualOdometry::new(scenario.visual.clone()),
            truth: start,
            wheel: start,
            frame_every: scenario.frame_every(),
            started: false,
            cmd: EffectiveCmd::default(),
            effective: bus.subscribe(topics::CTRL_EFFECTIVE, NODE_QUEUE)?,
            publisher: bus.publisher("sim"),
            clamped_ticks: 0,
            frames: 0,
        })
    }

    pub fn truth(&self) -> Pose2 {
        self.truth
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn clamped_ticks(&self) -> u64 {
        self.clamped_ticks
    }
}

impl Node for SimNode {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn step(&mut self, tick: u64) -> Result<bool, PipelineError> {
        if !self.started {
            let s = self.clock.stamp(tick);
            self.publisher.publish(topics::ODOM_TRUTH, s, Payload::Pose(self.truth))?;
            self.publisher.publish(topics::ODOM_WHEEL, s, Payload::Pose(self.wheel))?;
            self.started = true;
        }
        if let Some(env) = self.effective.drain().pop() {
            self.cmd = *payload(&env, |p| match p {
                Payload::Effective(e) => Some(e),
                _ => None,
            })?;
        }
        let out = step_dynamics(&self.truth, self.cmd.v, self.cmd.w, self.clock.dt(), &self.limits);
        if out.clamped {
            self.clamped_ticks += 1;
        }
        let delta = self.truth.delta_to(&out.pose);
        self.truth = out.pose;
        self.wheel = self.wheel.compose(&wheel_odometry(&delta, &self.noise, &mut self.rng));

        let stamp = self.clock.stamp(tick + 1);
        self.publisher.publish(topics::ODOM_TRUTH, stamp, Payload::Pose(self.truth))?;
        self.publisher.publish(topics::ODOM_WHEEL, stamp, Payload::Pose(self.wheel))?;
        let frame = self.vo.frame(stamp, &self.truth);
        // silent while lost after initialisation
        if frame.pose.is_some() || frame.event.is_some() || !self.vo.is_initialized() {
            self.publisher.publish(topics::ODOM_VISUAL, stamp, Payload::Visual(frame))?;
        }
        if (tick + 1) % self.frame_every == 0 {
            let mask = render_segmentation(&self.scene, &self.truth, &self.camera);
            self.publisher.publish(topics::CAMERA_MASK, stamp, Payload::Mask(mask))?;
            self.frames += 1;
        }
        Ok(true)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Tracking state machine, odometry scaling and keyframe gating.
pub struct SlamNode {
    clock: Clock,
    state: TrackingState,
    gate: KeyframeGate,
    scaler: OdometryScaler,
    max_gap: f64,
    period_ticks: u64,
    pending_visual: Vec<TrajectorySample>,
    pending_wheel: Vec<TrajectorySample>,
    last_visual: Option<(f64, VisualPose)>,
    transform: (SimilarityTransform3, bool),
    losses: u64,
    relocalisations: u64,
    visual: Subscription,
    wheel: Subscription,
    masks: Subscription,
    publisher: Publisher,
}

impl SlamNode {
    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        let period_ticks = (scenario.slam.scale_period_s * scenario.tick_hz as f64).round() as u64;
        Ok(SlamNode {
            clock: Clock { tick_hz: scenario.tick_hz },
            state: TrackingState::default(),
            gate: KeyframeGate::default(),
            scaler: OdometryScaler::new(scenario.slam.scale_period_s),
            max_gap: scenario.slam.max_gap_s,
            period_ticks: period_ticks.max(1),
            pending_visual: Vec::new(),
            pending_wheel: Vec::new(),
            last_visual: None,
            transform: (SimilarityTransform3::identity(), false),
            losses: 0,
            relocalisations: 0,
            visual: bus.subscribe(topics::ODOM_VISUAL, NODE_QUEUE)?,
            wheel: bus.subscribe(topics::ODOM_WHEEL, NODE_QUEUE)?,
            masks: bus.subscribe(topics::CAMERA_MASK, NODE_QUEUE)?,
            publisher: bus.publisher("slam"),
        })
    }

    pub fn state(&self) -> TrackingState {
        self.state
    }

    pub fn gate(&self) -> &KeyframeGate {
        &self.gate
    }

    pub fn transform(&self) -> (SimilarityTransform3, bool) {
        self.transform
    }

    pub fn scaler_failures(&self) -> usize {
        self.scaler.failures()
    }

    pub fn losses(&self) -> u64 {
        self.losses
    }

    pub fn relocalisations(&self) -> u64 {
        self.relocalisations
    }

    fn transition(&mut self, event: TrackingEvent, stamp: f64) -> Result<(), PipelineError> {
        let next = step_tracking(self.state, event);
        if next != self.state {
            match event {
                TrackingEvent::LossEvent => self.losses += 1,
                TrackingEvent::RelocalizedEvent => self.relocalisations += 1,
                _ => {}
            }
            self.state = next;
            self.publisher.publish(topics::SLAM_STATE, stamp, Payload::Tracking(next))?;
        }
        Ok(())
    }

    fn associate(&mut self) {
        let Some(last_visual) = self.pending_visual.last().map(|s| s.stamp) else {
            return;
        };
        let (Ok(v), Ok(w)) = (
            Trajectory::new(std::mem::take(&mut self.pending_visual)),
            Trajectory::new(self.pending_wheel.clone()),
        ) else {
            return;
        };
        let pairs = associate_by_timestamp(&v, &w, self.max_gap);
        self.scaler.extend(pairs.pairs);
        self.pending_wheel.retain(|s| s.stamp > last_visual);
    }
}

impl Node for SlamNode {
    fn name(&self) -> &'static str {
        "slam"
    }

    fn step(&mut self, tick: u64) -> Result<bool, PipelineError> {
        let now = self.clock.stamp(tick + 1);
        for env in self.visual.drain() {
            let frame = *payload(&env, |p| match p {
                Payload::Visual(f) => Some(f),
                _ => None,
            })?;
            if self.state == TrackingState::WaitingForImages {
                self.transition(TrackingEvent::ImageArrived, env.stamp)?;
            }
            if let Some(ev) = frame.event {
                self.transition(ev, env.stamp)?;
            }
            if let (Some(p), TrackingState::Tracking) = (frame.pose, self.state) {
                self.last_visual = Some((env.stamp, p));
                self.pending_visual.push(TrajectorySample {
                    stamp: env.stamp,
                    position: p.position,
                    orientation: None,
                });
            }
        }
        for env in self.wheel.drain() {
            let p = *payload(&env, |p| match p {
                Payload::Pose(p) => Some(p),
                _ => None,
            })?;
            if self.pending_wheel.last().is_some_and(|s| s.stamp >= env.stamp) {
                continue;
            }
            self.pending_wheel.push(TrajectorySample::planar(env.stamp, p.x, p.y, p.yaw));
        }
        self.associate();

        let mut worked = false;
        if (tick + 1) % self.period_ticks == 0 {
            let update = self.scaler.update(now);
            self.transform = (update.transform, update.valid);
            self.publisher.publish(topics::ODOM_TRANSFORM, now, Payload::Transform(update))?;
            if let Some((stamp, vp)) = self.last_visual.filter(|(s, _)| (*s - now).abs() < 1e-9) {
                if let Some(msg) = publish_scaled(stamp, &vp, &self.transform.0, self.transform.1, self.state) {
                    self.publisher.publish(topics::ODOM_SCALED, now, Payload::Scaled(msg))?;
                }
            }
            worked = true;
        }
        for env in self.masks.drain() {
            let mask: &SegMask = payload(&env, |p| match p {
                Payload::Mask(m) => Some(m),
                _ => None,
            })?;
            if let Some(m) = self.gate.forward_keyframe(mask.clone(), self.state) {
                self.publisher.publish(topics::SLAM_KEYFRAME, env.stamp, Payload::Mask(m))?;
            }
            worked = true;
        }
        Ok(worked)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Mask to projected ground boundary.
pub struct ContextNode {
    hom: Homography,
    filter: BoundaryFilter,
    last_scaled: Option<ScaledOdomMsg>,
    keyframes: Option<Subscription>,
    scaled: Option<Subscription>,
    publisher: Option<Publisher>,
    processed: u64,
}

impl ContextNode {
    /// Detached instance for offline reprocessing.
    pub fn offline(scenario: &Scenario) -> Result<Self, PipelineError> {
        Ok(ContextNode {
            hom: build_homography(&scenario.camera_model())?,
            filter: scenario.mapping.filter(),
            last_scaled: None,
            keyframes: None,
            scaled: None,
            publisher: None,
            processed: 0,
        })
    }

    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        let mut n = Self::offline(scenario)?;
        n.keyframes = Some(bus.subscribe(topics::SLAM_KEYFRAME, NODE_QUEUE)?);
        n.scaled = Some(bus.subscribe(topics::ODOM_SCALED, NODE_QUEUE)?);
        n.publisher = Some(bus.publisher("context"));
        Ok(n)
    }

    pub fn homography(&self) -> &Homography {
        &self.hom
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn observe_scaled(&mut self, msg: ScaledOdomMsg) {
        self.last_scaled = Some(msg);
    }

    /// Boundary of a keyframe taken at `stamp`, tagged with the scaled pose
    /// of the same instant when there is one.
    pub fn process(&mut self, mask: &SegMask, stamp: f64) -> Result<BoundaryMsg, PipelineError> {
        let raw = extract_boundary(mask);
        let boundary = filter_boundary(&raw, &self.hom, &self.filter)?;
        self.processed += 1;
        Ok(BoundaryMsg {
            pose: self.last_scaled.filter(|s| (s.stamp - stamp).abs() < 1e-9),
            boundary,
        })
    }
}

impl Node for ContextNode {
    fn name(&self) -> &'static str {
        "context"
    }

    fn step(&mut self, _tick: u64) -> Result<bool, PipelineError> {
        let (Some(kf), Some(sc)) = (&self.keyframes, &self.scaled) else {
            return Ok(false);
        };
        let scaled = sc.drain();
        let frames = kf.drain();
        for env in scaled {
            let s = *payload(&env, |p| match p {
                Payload::Scaled(s) => Some(s),
                _ => None,
            })?;
            self.observe_scaled(s);
        }
        let worked = !frames.is_empty();
        for env in frames {
            let mask = payload(&env, |p| match p {
                Payload::Mask(m) => Some(m),
                _ => None,
            })?;
            let msg = self.process(mask, env.stamp)?;
            if let Some(p) = &self.publisher {
                p.publish(topics::CONTEXT_BOUNDARY, env.stamp, Payload::Boundary(msg))?;
            }
        }
        Ok(worked)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Largest map sent whole on `map/global`; bigger maps go out as patches.
pub const SNAPSHOT_LIMIT: usize = 256 * 256;

/// Local map construction and global fusion.
pub struct MappingNode {
    rays: Vec<ColumnRay>,
    config: LocalMapConfig,
    global: GlobalMap,
    fused: u64,
    built: u64,
    boundaries: Option<Subscription>,
    publisher: Option<Publisher>,
}

impl MappingNode {
    pub fn offline(scenario: &Scenario) -> Result<Self, PipelineError> {
        let hom = build_homography(&scenario.camera_model())?;
        let config = scenario.mapping.local();
        config.validate()?;
        Ok(MappingNode {
            rays: hom.column_rays(),
            config,
            global: GlobalMap::new(config.resolution),
            fused: 0,
            built: 0,
            boundaries: None,
            publisher: None,
        })
    }

    pub fn new(bus: &Arc<Bus>, scenario: &Scenario) -> Result<Self, PipelineError> {
        let mut n = Self::offline(scenario)?;
        n.boundaries = Some(bus.subscribe(topics::CONTEXT_BOUNDARY, NODE_QUEUE)?);
        n.publisher = Some(bus.publisher("mapping"));
        Ok(n)
    }

    pub fn global(&self) -> &GlobalMap {
        &self.global
    }

    pub fn fused(&self) -> u64 {
        self.fused
    }

    pub fn built(&self) -> u64 {
        self.built
    }

    /// Builds the local map and fuses it when the pose carries a valid scale.
    pub fn process(&mut self, msg: &BoundaryMsg) -> Result<(LocalMapMsg, Option<GridUpdate>), PipelineError> {
        let local = build_local_map(&msg.boundary, &self.rays, &self.config)?;
        self.built += 1;
        let pose = msg.pose.filter(|p| p.scale_valid).map(|p| p.pose);
        let update = pose.map(|pose| {
            self.global.fuse(&local, &pose);
            self.fused += 1;
            let patch = self.global.take_patch();
            if self.global.extent().area() <= SNAPSHOT_LIMIT {
                GridUpdate::Snapshot(self.global.snapshot())
            } else {
                GridUpdate::Patch(patch)
            }
        });
        Ok((
            LocalMapMsg {
                pose,
                fused: update.is_some(),
                map: local,
            },
            update,
        ))
    }
}

impl Node for MappingNode {
    fn name(&self) -> &'static str {
        "mapping"
    }

    fn step(&mut self, _tick: u64) -> Result<bool, PipelineError> {
        let Some(sub) = &self.boundaries else {
            return Ok(false);
        };
        let items = sub.drain();
        let worked = !items.is_empty();
        for env in items {
            let msg = payload(&env, |p| match p {
                Payload::Boundary(b) => Some(b),
                _ => None,
            })?;
            let (local, update) = self.process(msg)?;
            if let Some(p) = &self.publisher {
                p.publish(topics::MAP_LOCAL, env.stamp, Payload::LocalMap(local))?;
                if let Some(u) = update {
                    p.publish(topics::MAP_GLOBAL, env.stamp, Payload::GlobalMap(u))?;
                }
            }
        }
        Ok(worked)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
