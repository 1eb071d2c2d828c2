//! In-process typed publish/subscribe bus.
//!
//! Every subscriber owns a bounded queue; when it is full the oldest
//! envelope is discarded. Latched topics hand their last envelope to new
//! subscribers. An optional recorder writes every published envelope, in
//! global publish order, as one JSON object per line.

mod log;

pub use log::{read_log, LogEntry, LogError, LogReader, LogRecord};

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msg::{Payload, PayloadKind, STANDARD_TOPICS};

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("topic {topic:?} carries {expected:?}, got {got:?}")]
    TypeMismatch {
        topic: String,
        expected: PayloadKind,
        got: PayloadKind,
    },
    #[error("publisher {publisher:?} stamp went back from {last} to {stamp}")]
    StampRegression { publisher: String, last: f64, stamp: f64 },
    #[error("topic {0:?} registered twice")]
    DuplicateTopic(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: Arc<str>,
    pub publisher: Arc<str>,
    pub seq: u64,
    pub stamp: f64,
    pub payload: Arc<Payload>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub published: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub subscribers: usize,
}

#[derive(Debug, Default)]
struct Counters {
    published: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
}

struct Queue {
    items: Mutex<VecDeque<Envelope>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    counters: Arc<Counters>,
}

impl Queue {
    fn push(&self, env: Envelope) {
        let mut q = lock(&self.items);
        if q.len() >= self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            self.counters.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(env);
        drop(q);
        self.ready.notify_one();
    }
}

struct TopicState {
    kind: PayloadKind,
    latched: bool,
    last: Option<Envelope>,
    subs: Vec<(u64, Arc<Queue>)>,
    counters: Arc<Counters>,
}

struct PublisherState {
    name: Arc<str>,
    last_stamp: f64,
    seqs: HashMap<Arc<str>, u64>,
}

struct Inner {
    topics: HashMap<Arc<str>, TopicState>,
    publishers: Vec<PublisherState>,
    next_sub: u64,
    recorder: Option<Box<dyn Write + Send>>,
    record_error: Option<std::io::Error>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicking subscriber thread must not wedge the whole pipeline
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Bus {
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus").finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct RecordLine<'a> {
    topic: &'a str,
    publisher: &'a str,
    seq: u64,
    stamp: f64,
    payload: &'a Payload,
}

impl Bus {
    pub fn new() -> Arc<Bus> {
        Arc::new(Bus {
            inner: Mutex::new(Inner {
                topics: HashMap::new(),
                publishers: Vec::new(),
                next_sub: 0,
                recorder: None,
                record_error: None,
            }),
        })
    }

    /// Bus with every pipeline topic registered.
    pub fn standard() -> Arc<Bus> {
        let bus = Bus::new();
        for &(name, kind, latched) in STANDARD_TOPICS {
            bus.register(name, kind, latched).expect("standard topics are unique");
        }
        bus
    }

    pub fn register(&self, name: &str, kind: PayloadKind, latched: bool) -> Result<(), BusError> {
        let mut inner = lock(&self.inner);
        if inner.topics.contains_key(name) {
            return Err(BusError::DuplicateTopic(name.to_string()));
        }
        inner.topics.insert(
            Arc::from(name),
            TopicState {
                kind,
                latched,
                last: None,
                subs: Vec::new(),
                counters: Arc::default(),
            },
        );
        Ok(())
    }

    pub fn topic_kind(&self, name: &str) -> Option<PayloadKind> {
        lock(&self.inner).topics.get(name).map(|t| t.kind)
    }

    /// Starts writing every subsequent envelope to `sink`.
    pub fn record_to(&self, sink: Box<dyn Write + Send>) {
        lock(&self.inner).recorder = Some(sink);
    }

    /// Flushes and detaches the recorder, reporting the first write error.
    pub fn finish_recording(&self) -> std::io::Result<()> {
        let mut inner = lock(&self.inner);
        if let Some(e) = inner.record_error.take() {
            inner.recorder = None;
            return Err(e);
        }
        match inner.recorder.take() {
            Some(mut w) => w.flush(),
            None => Ok(()),
        }
    }

    pub fn publisher(self: &Arc<Self>, name: &str) -> Publisher {
        let mut inner = lock(&self.inner);
        let id = inner.publishers.len();
        inner.publishers.push(PublisherState {
            name: Arc::from(name),
            last_stamp: f64::NEG_INFINITY,
            seqs: HashMap::new(),
        });
        Publisher { bus: Arc::clone(self), id }
    }

    fn publish(&self, publisher: usize, topic: &str, stamp: f64, payload: Payload) -> Result<u64, BusError> {
        let mut guard = lock(&self.inner);
        let inner = &mut *guard;
        let (key, state) = inner
            .topics
            .get_key_value(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        if state.kind != payload.kind() {
            return Err(BusError::TypeMismatch {
                topic: topic.to_string(),
                expected: state.kind,
                got: payload.kind(),
            });
        }
        let key = Arc::clone(key);
        let p = &mut inner.publishers[publisher];
        if stamp < p.last_stamp {
            return Err(BusError::StampRegression {
                publisher: p.name.to_string(),
                last: p.last_stamp,
                stamp,
            });
        }
        p.last_stamp = stamp;
        let seq = {
            let s = p.seqs.entry(Arc::clone(&key)).or_insert(0);
            *s += 1;
            *s
        };
        let env = Envelope {
            topic: key,
            publisher: Arc::clone(&p.name),
            seq,
            stamp,
            payload: Arc::new(payload),
        };

        if let Some(w) = inner.recorder.as_mut() {
            let line = RecordLine {
                topic: &env.topic,
                publisher: &env.publisher,
                seq,
                stamp,
                payload: &env.payload,
            };
            let res = serde_json::to_writer(&mut *w, &line)
                .map_err(std::io::Error::from)
                .and_then(|_| w.write_all(b"\n"));
            if let Err(e) = res {
                inner.record_error.get_or_insert(e);
                inner.recorder = None;
            }
        }

        let state = inner.topics.get_mut(topic).expect("looked up above");
        state.counters.published.fetch_add(1, Ordering::Relaxed);
        for (_, q) in &state.subs {
            q.push(env.clone());
        }
        if state.latched {
            state.last = Some(env);
        }
        Ok(seq)
    }

    pub fn subscribe(self: &Arc<Self>, topic: &str, capacity: usize) -> Result<Subscription, BusError> {
        let mut inner = lock(&self.inner);
        let id = inner.next_sub;
        inner.next_sub += 1;
        let state = inner
            .topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        let queue = Arc::new(Queue {
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            counters: Arc::clone(&state.counters),
        });
        if let Some(last) = &state.last {
            queue.push(last.clone());
        }
        state.subs.push((id, Arc::clone(&queue)));
        Ok(Subscription {
            bus: Arc::clone(self),
            topic: topic.to_string(),
            id,
            queue,
        })
    }

    pub fn stats(&self, topic: &str) -> Result<TopicStats, BusError> {
        let inner = lock(&self.inner);
        let t = inner
            .topics
            .get(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        Ok(TopicStats {
            published: t.counters.published.load(Ordering::Relaxed),
            delivered: t.counters.delivered.load(Ordering::Relaxed),
            dropped: t.counters.dropped.load(Ordering::Relaxed),
            subscribers: t.subs.len(),
        })
    }

    /// Stats for every registered topic, sorted by name.
    pub fn all_stats(&self) -> Vec<(String, TopicStats)> {
        let names: Vec<String> = {
            let inner = lock(&self.inner);
            let mut n: Vec<_> = inner.topics.keys().map(|k| k.to_string()).collect();
            n.sort();
            n
        };
        names
            .into_iter()
            .filter_map(|n| self.stats(&n).ok().map(|s| (n, s)))
            .collect()
    }

    fn unsubscribe(&self, topic: &str, id: u64) {
        let mut inner = lock(&self.inner);
        if let Some(t) = inner.topics.get_mut(topic) {
            t.subs.retain(|(sid, _)| *sid != id);
        }
    }
}

/// Publishing handle; sequence numbers and stamp ordering are tracked per handle.
#[derive(Clone)]
pub struct Publisher {
    bus: Arc<Bus>,
    id: usize,
}

impl std::fmt::Debug for Publisher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Publisher").field("id", &self.id).finish()
    }
}

impl Publisher {
    /// Publishes and returns the envelope's sequence number.
    pub fn publish(&self, topic: &str, stamp: f64, payload: Payload) -> Result<u64, BusError> {
        self.bus.publish(self.id, topic, stamp, payload)
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }
}

/// Receiving end of one subscription; dropping it unsubscribes.
pub struct Subscription {
    bus: Arc<Bus>,
    topic: String,
    id: u64,
    queue: Arc<Queue>,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription").field("topic", &self.topic).finish()
    }
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    fn delivered(&self, env: Option<Envelope>) -> Option<Envelope> {
        if env.is_some() {
            self.queue.counters.delivered.fetch_add(1, Ordering::Relaxed);
        }
        env
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        let env = lock(&self.queue.items).pop_front();
        self.delivered(env)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        let deadline = Instant::now() + timeout;
        let mut q = lock(&self.queue.items);
        loop {
            if let Some(env) = q.pop_front() {
                drop(q);
                return self.delivered(Some(env));
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            q = self
                .queue
                .ready
                .wait_timeout(q, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn drain(&self) -> Vec<Envelope> {
        let items: Vec<Envelope> = lock(&self.queue.items).drain(..).collect();
        self.queue
            .counters
            .delivered
            .fetch_add(items.len() as u64, Ordering::Relaxed);
        items
    }

    pub fn pending(&self) -> usize {
        lock(&self.queue.items).len()
    }

    /// Envelopes this subscriber lost to overflow.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.bus.unsubscribe(&self.topic, self.id);
    }
}
