//! Concurrent interpreter: one worker per thread, a gatherer owning the
//! transaction trie, and a scheduling policy deciding embeds, commits, aborts
//! and rendezvous.
//!
//! Two drivers share all of the logic. The deterministic driver runs every
//! worker round-robin on the calling thread with virtual time; the
//! concurrent driver gives each worker an OS thread and talks over channels.

mod gatherer;
mod thread;
mod trace;
mod trie;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub use gatherer::{Gatherer, Metrics, Outbox};
pub use thread::{
    alt_discard, alt_drop, alt_names, alt_push, alt_revivable, alt_rollback, AltStack, Alternative,
    Counters, Direction, Envelope, LocalThreadState, Notification, Progress, Signal, Snapshot,
    Status, ThreadId, Worker, WorkerIo,
};
pub use trace::{read_ndjson, to_ndjson, write_ndjson, EventKind, TraceEvent};
pub use trie::{
    Directive, Embeddable, Justification, RestoreRecord, SyncCandidate, ThreadInfo, Trie, TrieNode,
    ROOT,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{ChannelId, Expr};
use crate::refsem::{outcome_of_threads, Outcome};

/// A scheduling policy: looks at the trie and proposes at most one
/// directive. `now` is in nanoseconds.
pub trait Policy: Send {
    fn name(&self) -> &'static str;
    fn decide(&mut self, trie: &Trie, now: u64) -> Option<Directive>;
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Budget in milliseconds (virtual in deterministic mode).
    pub max_ms: u64,
    pub deterministic: bool,
    pub trace: bool,
    /// Reductions per worker turn in deterministic mode.
    pub quantum: usize,
    /// Policy tick: virtual time per round in deterministic mode, idle wake
    /// up period otherwise.
    pub tick_ms: f64,
    /// Rendezvous on these channels count as that many completed
    /// operations, for baselines without transactions.
    pub op_channels: Vec<(ChannelId, u64)>,
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            max_ms: 10_000,
            deterministic: true,
            trace: false,
            quantum: 8,
            tick_ms: 1.0,
            op_channels: Vec::new(),
            check_invariants: cfg!(debug_assertions),
        }
    }
}

impl RunConfig {
    pub fn concurrent(mut self) -> Self {
        self.deterministic = false;
        self.tick_ms = 5.0;
        self
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Present when the run reached quiescence.
    pub outcome: Option<Outcome>,
    pub elapsed_ns: u64,
    pub metrics: Metrics,
    pub trace: Vec<TraceEvent>,
}

impl RunResult {
    pub fn quiescent(&self) -> bool {
        self.outcome.is_some()
    }
}

pub fn run_program(e: &Expr, policy: &mut dyn Policy, cfg: &RunConfig) -> RunResult {
    if cfg.deterministic {
        run_deterministic(e, policy, cfg)
    } else {
        run_concurrent(e, policy, cfg)
    }
}

fn finish<O: Outbox>(g: &mut Gatherer<O>, quiescent: bool, elapsed_ns: u64) -> RunResult {
    let outcome = quiescent.then(|| outcome_of_threads(&g.residue(), &BTreeSet::new()));
    RunResult {
        outcome,
        elapsed_ns,
        metrics: g.metrics.clone(),
        trace: g.trace.take().unwrap_or_default(),
    }
}

#[derive(Default)]
struct Mailboxes {
    boxes: BTreeMap<ThreadId, VecDeque<Signal>>,
    spawned: Vec<LocalThreadState>,
}

impl Outbox for Mailboxes {
    fn send(&mut self, t: ThreadId, s: Signal) {
        self.boxes.entry(t).or_default().push_back(s);
    }

    fn spawn(&mut self, state: LocalThreadState) {
        self.spawned.push(state);
    }
}

struct DetIo<'a> {
    g: &'a mut Gatherer<Mailboxes>,
    policy: &'a mut dyn Policy,
    thread: ThreadId,
}

impl WorkerIo for DetIo<'_> {
    fn notify(&mut self, state: &mut LocalThreadState, note: Notification) -> bool {
        let ok = self.g.handle(Envelope { thread: self.thread, seen: state.seen, note });
        if ok {
            self.g.invoke_policy(self.policy);
        }
        ok
    }

    fn next_signal(&mut self, _block: bool) -> Option<Signal> {
        self.g.outbox.boxes.get_mut(&self.thread)?.pop_front()
    }
}

fn run_deterministic(e: &Expr, policy: &mut dyn Policy, cfg: &RunConfig) -> RunResult {
    let counters = Arc::new(Counters::default());
    let mut g = Gatherer::new(Mailboxes::default(), cfg.trace);
    g.check_invariants = cfg.check_invariants;
    g.op_channels = cfg.op_channels.clone();
    g.start(e.clone());
    let tick = (cfg.tick_ms * 1e6) as u64;
    let budget = cfg.max_ms * 1_000_000;
    // Interleavings vary with the seed: each round visits the workers in a
    // random order and gives each a random slice of the quantum.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0f5_c4ed);
    let mut workers: BTreeMap<ThreadId, Worker> = BTreeMap::new();
    loop {
        for s in std::mem::take(&mut g.outbox.spawned) {
            workers.insert(s.id, Worker::new(s, cfg.seed, counters.clone()));
        }
        let mut ids: Vec<ThreadId> = workers.keys().copied().collect();
        ids.shuffle(&mut rng);
        for id in ids {
            let w = workers.get_mut(&id).unwrap();
            let fuel = rng.gen_range(1..=cfg.quantum.max(1));
            let mut io = DetIo { g: &mut g, policy: &mut *policy, thread: id };
            if w.run(&mut io, fuel) == Progress::Exited {
                workers.remove(&id);
                g.outbox.boxes.remove(&id);
            }
        }
        g.now += tick;
        g.invoke_policy(policy);
        if g.outbox.spawned.is_empty() && g.quiescent() {
            let now = g.now;
            return finish(&mut g, true, now);
        }
        if g.now >= budget {
            let now = g.now;
            return finish(&mut g, false, now);
        }
    }
}

struct Threads {
    senders: BTreeMap<ThreadId, Sender<Signal>>,
    notes: Sender<Envelope>,
    seed: u64,
    counters: Arc<Counters>,
    stop: Arc<AtomicBool>,
    handles: Vec<std::thread::JoinHandle<()>>,
}

impl Outbox for Threads {
    fn send(&mut self, t: ThreadId, s: Signal) {
        if let Some(tx) = self.senders.get(&t) {
            if tx.send(s).is_err() {
                self.senders.remove(&t);
            }
        }
    }

    fn spawn(&mut self, state: LocalThreadState) {
        let (tx, rx) = mpsc::channel();
        self.senders.insert(state.id, tx);
        let mut io = ChannelIo { notes: self.notes.clone(), signals: rx };
        let mut w = Worker::new(state, self.seed, self.counters.clone());
        let stop = self.stop.clone();
        let h = std::thread::Builder::new()
            .name(format!("tcml-{}", w.state.id))
            .spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                match w.run(&mut io, 256) {
                    Progress::Runnable => {}
                    Progress::Parked => {
                        if !w.wait(&mut io) {
                            break;
                        }
                    }
                    Progress::Exited => break,
                }
            })
            .expect("spawning a worker thread");
        self.handles.push(h);
    }
}

struct ChannelIo {
    notes: Sender<Envelope>,
    signals: Receiver<Signal>,
}

impl WorkerIo for ChannelIo {
    fn notify(&mut self, state: &mut LocalThreadState, note: Notification) -> bool {
        if self.notes.send(Envelope { thread: state.id, seen: state.seen, note }).is_err() {
            state.status = Status::Dead;
            return false;
        }
        loop {
            match self.signals.recv() {
                Ok(Signal::Response(ok)) => return ok,
                Ok(s) => state.apply(s),
                Err(_) => {
                    state.status = Status::Dead;
                    return false;
                }
            }
        }
    }

    fn next_signal(&mut self, block: bool) -> Option<Signal> {
        if block {
            self.signals.recv().ok()
        } else {
            self.signals.try_recv().ok()
        }
    }
}

fn run_concurrent(e: &Expr, policy: &mut dyn Policy, cfg: &RunConfig) -> RunResult {
    let (notes_tx, notes_rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let threads = Threads {
        senders: BTreeMap::new(),
        notes: notes_tx,
        seed: cfg.seed,
        counters: Arc::new(Counters::default()),
        stop: stop.clone(),
        handles: Vec::new(),
    };
    let mut g = Gatherer::new(threads, cfg.trace);
    g.check_invariants = cfg.check_invariants;
    g.op_channels = cfg.op_channels.clone();
    let start = Instant::now();
    let tick = Duration::from_secs_f64(cfg.tick_ms / 1000.0);
    let budget = Duration::from_millis(cfg.max_ms);
    g.start(e.clone());
    let mut last_tick = Instant::now();
    let quiescent = loop {
        match notes_rx.recv_timeout(tick) {
            Ok(env) => {
                g.now = start.elapsed().as_nanos() as u64;
                let t = env.thread;
                let ok = g.handle(env);
                g.outbox.send(t, Signal::Response(ok));
                if ok {
                    g.invoke_policy(policy);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => unreachable!("the gatherer holds a sender"),
        }
        g.now = start.elapsed().as_nanos() as u64;
        if last_tick.elapsed() >= tick {
            last_tick = Instant::now();
            g.invoke_policy(policy);
        }
        if g.quiescent() {
            break true;
        }
        if start.elapsed() >= budget {
            break false;
        }
    };
    let elapsed = start.elapsed().as_nanos() as u64;
    stop.store(true, Ordering::Relaxed);
    g.outbox.senders.clear();
    // Workers blocked in `notify` see their signal channel close and exit.
    drop(notes_rx);
    for h in std::mem::take(&mut g.outbox.handles) {
        let _ = h.join();
    }
    finish(&mut g, quiescent, elapsed)
}
