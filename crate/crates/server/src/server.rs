//! WebSocket endpoint bridging the bus to UI clients.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use ctxmap_core::bus::{Bus, BusError, Publisher, Subscription};
use ctxmap_core::context::GroundEntry;
use ctxmap_core::control::{CmdSource, CmdVel};
use ctxmap_core::geometry::Pose2;
use ctxmap_core::msg::{topics, Payload};
use ctxmap_core::slam::TrackingState;

use crate::sync::GridSync;
use crate::wire::{
    encode_grid_patch, BoundaryThumbnailMsg, ClientMessage, PoseMsg, ReportTickMsg, ServerMessage, SessionAction,
    StateMsg, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Where the pipeline's simulation clock can be read.
#[derive(Debug, Clone)]
pub struct SimClock {
    /// Next tick the pipeline will run.
    pub tick: Arc<AtomicU64>,
    pub tick_hz: u32,
}

impl SimClock {
    pub fn stamp(&self) -> f64 {
        self.tick.load(Ordering::SeqCst) as f64 / self.tick_hz as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    /// Grid frames queued per client before the backlog is replaced by a
    /// fresh snapshot.
    pub patch_queue: usize,
    pub poll: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            patch_queue: 32,
            poll: Duration::from_millis(10),
        }
    }
}

enum Outgoing {
    Text(String),
    Grid(Vec<u8>),
}

#[derive(Default)]
struct Outbox {
    items: VecDeque<Outgoing>,
    grids: usize,
    closed: bool,
}

struct Session {
    outbox: Mutex<Outbox>,
    ready: Notify,
}

impl Session {
    fn push(&self, item: Outgoing) {
        let mut o = self.outbox.lock().unwrap();
        if matches!(item, Outgoing::Grid(_)) {
            o.grids += 1;
        }
        o.items.push_back(item);
        drop(o);
        self.ready.notify_one();
    }

    /// Queues a grid frame; past the bound every queued grid frame is
    /// dropped and replaced by `resync`, a snapshot that already contains
    /// them.
    fn push_grid(&self, frame: Vec<u8>, limit: usize, resync: impl FnOnce() -> Vec<u8>) {
        let mut o = self.outbox.lock().unwrap();
        if o.grids >= limit {
            o.items.retain(|i| !matches!(i, Outgoing::Grid(_)));
            o.items.push_back(Outgoing::Grid(resync()));
            o.grids = 1;
        } else {
            o.items.push_back(Outgoing::Grid(frame));
            o.grids += 1;
        }
        drop(o);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.outbox.lock().unwrap().closed = true;
        self.ready.notify_one();
    }
}

struct Hub {
    cfg: ServerConfig,
    clock: SimClock,
    sessions: HashMap<u64, Arc<Session>>,
    next_id: u64,
    driver: Option<u64>,
    tracking: TrackingState,
    kill: bool,
    grid: GridSync,
    estimate: Option<(Pose2, bool)>,
    last_report_tick: Option<u64>,
    teleop: Publisher,
}

fn text(m: &ServerMessage) -> Outgoing {
    Outgoing::Text(serde_json::to_string(m).expect("wire messages serialise"))
}

impl Hub {
    fn state_for(&self, id: u64, notice: Option<String>) -> ServerMessage {
        ServerMessage::State(StateMsg {
            schema: SCHEMA_VERSION,
            stamp: self.clock.stamp(),
            session: id,
            tracking: self.tracking,
            kill: self.kill,
            driver: self.driver == Some(id),
            driver_taken: self.driver.is_some(),
            notice,
        })
    }

    fn broadcast_state(&self) {
        for (id, s) in &self.sessions {
            s.push(text(&self.state_for(*id, None)));
        }
    }

    fn broadcast(&self, m: &ServerMessage) {
        let t = serde_json::to_string(m).expect("wire messages serialise");
        for s in self.sessions.values() {
            s.push(Outgoing::Text(t.clone()));
        }
    }

    fn snapshot_frame(&self) -> Vec<u8> {
        encode_grid_patch(&self.grid.snapshot(), self.clock.stamp(), true)
    }

    fn join(&mut self) -> (u64, Arc<Session>) {
        let id = self.next_id;
        self.next_id += 1;
        let s = Arc::new(Session {
            outbox: Mutex::new(Outbox::default()),
            ready: Notify::new(),
        });
        s.push(Outgoing::Grid(self.snapshot_frame()));
        s.push(text(&self.state_for(id, None)));
        self.sessions.insert(id, Arc::clone(&s));
        (id, s)
    }

    fn leave(&mut self, id: u64) {
        if let Some(s) = self.sessions.remove(&id) {
            s.close();
        }
        if self.driver == Some(id) {
            self.driver = None;
            self.broadcast_state();
        }
    }

    fn reply(&self, id: u64, notice: impl Into<String>) {
        if let Some(s) = self.sessions.get(&id) {
            s.push(text(&self.state_for(id, Some(notice.into()))));
        }
    }

    fn handle_client(&mut self, id: u64, msg: ClientMessage) {
        let stamp = self.clock.stamp();
        match msg {
            ClientMessage::CmdVel { v, w, .. } => {
                if self.driver != Some(id) {
                    self.reply(id, "cmd_vel ignored: driver token not held");
                } else if !(v.is_finite() && w.is_finite()) {
                    self.reply(id, "cmd_vel ignored: non-finite velocity");
                } else {
                    // clamped by the controller, like every other source
                    let cmd = CmdVel {
                        v,
                        w,
                        stamp,
                        source: CmdSource::Teleop,
                    };
                    if let Err(e) = self.teleop.publish(topics::CTRL_CMD_VEL, stamp, Payload::CmdVel(cmd)) {
                        log::warn!("teleop command dropped: {e}");
                    }
                }
            }
            ClientMessage::Kill { engage, .. } => {
                if let Err(e) = self.teleop.publish(topics::CTRL_KILL, stamp, Payload::Kill(engage)) {
                    log::warn!("kill dropped: {e}");
                }
            }
            ClientMessage::SessionControl { action, .. } => match (action, self.driver) {
                (SessionAction::Acquire, None) => {
                    self.driver = Some(id);
                    self.broadcast_state();
                }
                (SessionAction::Acquire, Some(d)) if d == id => self.reply(id, "driver token already held"),
                (SessionAction::Acquire, Some(d)) => self.reply(id, format!("driver token held by session {d}")),
                (SessionAction::Release, Some(d)) if d == id => {
                    self.driver = None;
                    self.broadcast_state();
                }
                (SessionAction::Release, _) => self.reply(id, "driver token not held"),
            },
        }
    }

    fn on_bus(&mut self, topic: &str, stamp: f64, payload: &Payload) {
        match payload {
            Payload::Tracking(s) => {
                self.tracking = *s;
                self.broadcast_state();
            }
            Payload::Kill(k) => {
                self.kill = *k;
                self.broadcast_state();
            }
            Payload::Scaled(s) => self.estimate = Some((s.pose, s.scale_valid)),
            Payload::Pose(p) if topic == topics::ODOM_TRUTH => {
                self.broadcast(&ServerMessage::Pose(PoseMsg {
                    schema: SCHEMA_VERSION,
                    stamp,
                    truth: *p,
                    estimate: self.estimate.map(|e| e.0),
                    scale_valid: self.estimate.is_some_and(|e| e.1),
                }));
            }
            Payload::Boundary(b) => {
                let mut filtered = 0;
                let mut clear = 0;
                let mut obstacles = Vec::new();
                for e in &b.boundary.entries {
                    match e {
                        GroundEntry::Obstacle { x, y } => obstacles.push([*x, *y]),
                        GroundEntry::Filtered { .. } => filtered += 1,
                        GroundEntry::Clear => clear += 1,
                    }
                }
                self.broadcast(&ServerMessage::BoundaryThumbnail(BoundaryThumbnailMsg {
                    schema: SCHEMA_VERSION,
                    stamp,
                    obstacles,
                    filtered,
                    clear,
                }));
            }
            Payload::GlobalMap(update) => match self.grid.ingest(update) {
                Ok(patch) => {
                    let frame = encode_grid_patch(&patch, stamp, false);
                    let limit = self.cfg.patch_queue;
                    for s in self.sessions.values() {
                        s.push_grid(frame.clone(), limit, || self.snapshot_frame());
                    }
                }
                Err(e) => log::warn!("map update skipped: {e}"),
            },
            Payload::Effective(e) => {
                let tick = (stamp * self.clock.tick_hz as f64).round() as u64;
                // one report per simulated second
                if tick % self.clock.tick_hz as u64 == 0 && self.last_report_tick != Some(tick) {
                    self.last_report_tick = Some(tick);
                    let extent = self.grid.grid().extent();
                    self.broadcast(&ServerMessage::ReportTick(ReportTickMsg {
                        schema: SCHEMA_VERSION,
                        stamp,
                        tick,
                        map_epoch: self.grid.grid().epoch().unwrap_or(0),
                        map_width: extent.width,
                        map_height: extent.height,
                        v: e.v,
                        w: e.w,
                        clamped: e.clamped,
                        killed: e.killed,
                    }));
                }
            }
            _ => {}
        }
    }
}

type SharedHub = Arc<Mutex<Hub>>;

pub struct ServerHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

const BRIDGED: [&str; 7] = [
    topics::SLAM_STATE,
    topics::CTRL_KILL,
    topics::ODOM_SCALED,
    topics::ODOM_TRUTH,
    topics::CONTEXT_BOUNDARY,
    topics::MAP_GLOBAL,
    topics::CTRL_EFFECTIVE,
];

/// Binds `addr` and starts serving. Subscriptions are taken before this
/// returns, so nothing published afterwards is missed.
pub async fn serve(addr: &str, bus: Arc<Bus>, clock: SimClock, cfg: ServerConfig) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let subs: Vec<Subscription> = BRIDGED
        .iter()
        .map(|t| bus.subscribe(t, 4096))
        .collect::<Result<_, _>>()?;
    let hub: SharedHub = Arc::new(Mutex::new(Hub {
        cfg,
        clock,
        sessions: HashMap::new(),
        next_id: 1,
        driver: None,
        tracking: TrackingState::default(),
        kill: false,
        grid: GridSync::new(),
        estimate: None,
        last_report_tick: None,
        teleop: bus.publisher("teleop"),
    }));
    let (stop, stop_rx) = watch::channel(false);
    let task = tokio::spawn(run(listener, hub, subs, cfg.poll, stop_rx));
    log::info!("telemetry server listening on {local}");
    Ok(ServerHandle { addr: local, stop, task })
}

async fn run(listener: TcpListener, hub: SharedHub, subs: Vec<Subscription>, poll: Duration, mut stop: watch::Receiver<bool>) {
    let mut ticker = tokio::time::interval(poll);
    let mut sessions = Vec::new();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    sessions.push(tokio::spawn(session(stream, peer, Arc::clone(&hub), stop.clone())));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            _ = ticker.tick() => pump(&hub, &subs),
        }
    }
    pump(&hub, &subs);
    for s in hub.lock().unwrap().sessions.values() {
        s.close();
    }
    for s in sessions {
        let _ = s.await;
    }
}

/// Moves everything pending on the bridged topics into the sessions, in
/// publish order.
fn pump(hub: &SharedHub, subs: &[Subscription]) {
    let mut pending: Vec<_> = subs.iter().flat_map(|s| s.drain()).collect();
    if pending.is_empty() {
        return;
    }
    pending.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
    let mut h = hub.lock().unwrap();
    for env in pending {
        h.on_bus(&env.topic, env.stamp, &env.payload);
    }
}

async fn session(stream: TcpStream, peer: SocketAddr, hub: SharedHub, mut stop: watch::Receiver<bool>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("{peer}: handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (id, outbox) = hub.lock().unwrap().join();
    log::info!("{peer}: session {id} joined");

    let writer_box = Arc::clone(&outbox);
    let writer = tokio::spawn(async move {
        loop {
            let (items, closed) = {
                let mut o = writer_box.outbox.lock().unwrap();
                o.grids = 0;
                (std::mem::take(&mut o.items), o.closed)
            };
            for item in items {
                let msg = match item {
                    Outgoing::Text(t) => Message::Text(t.into()),
                    Outgoing::Grid(b) => Message::Binary(b.into()),
                };
                if sink.send(msg).await.is_err() {
                    return;
                }
            }
            if closed {
                let _ = sink.close().await;
                return;
            }
            writer_box.ready.notified().await;
        }
    });

    loop {
        tokio::select! {
            _ = stop.changed() => break,
            msg = source.next() => match msg {
                Some(Ok(Message::Text(t))) => match ClientMessage::parse(&t) {
                    Ok(m) => hub.lock().unwrap().handle_client(id, m),
                    Err(e) => hub.lock().unwrap().reply(id, e.to_string()),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    hub.lock().unwrap().leave(id);
    outbox.close();
    let _ = writer.await;
    log::info!("{peer}: session {id} left");
}
