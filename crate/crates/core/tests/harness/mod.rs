#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use tcml::ast::TxnId;
use tcml::parser::parse_expr;
use tcml::runtime::*;

#[derive(Default)]
pub struct Boxes {
    pub boxes: BTreeMap<ThreadId, VecDeque<Signal>>,
    pub spawned: Vec<LocalThreadState>,
}

impl Outbox for Boxes {
    fn send(&mut self, t: ThreadId, s: Signal) {
        self.boxes.entry(t).or_default().push_back(s);
    }
    fn spawn(&mut self, state: LocalThreadState) {
        self.spawned.push(state);
    }
}

struct Io<'a> {
    g: &'a mut Gatherer<Boxes>,
    id: ThreadId,
    log: &'a mut Vec<Notification>,
}

impl WorkerIo for Io<'_> {
    fn notify(&mut self, state: &mut LocalThreadState, note: Notification) -> bool {
        self.log.push(note.clone());
        self.g.handle(Envelope { thread: self.id, seen: state.seen, note })
    }
    fn next_signal(&mut self, _block: bool) -> Option<Signal> {
        self.g.outbox.boxes.get_mut(&self.id)?.pop_front()
    }
}

/// Drives workers by hand; no policy runs unless a test applies directives.
pub struct Harness {
    pub g: Gatherer<Boxes>,
    pub workers: BTreeMap<ThreadId, Worker>,
    pub log: Vec<(ThreadId, Notification)>,
    counters: Arc<Counters>,
}

impl Harness {
    pub fn new(src: &str) -> Self {
        let mut g = Gatherer::new(Boxes::default(), true);
        g.check_invariants = true;
        g.start(parse_expr(src).unwrap());
        let mut h = Harness { g, workers: BTreeMap::new(), log: Vec::new(), counters: Arc::default() };
        h.adopt();
        h
    }

    fn adopt(&mut self) {
        for s in std::mem::take(&mut self.g.outbox.spawned) {
            self.workers.insert(s.id, Worker::new(s, 1, self.counters.clone()));
        }
    }

    /// Runs one thread until it parks or `fuel` reductions pass.
    pub fn run(&mut self, id: ThreadId, fuel: usize) -> Progress {
        let mut log = Vec::new();
        let w = self.workers.get_mut(&id).unwrap();
        let p = w.run(&mut Io { g: &mut self.g, id, log: &mut log }, fuel);
        self.log.extend(log.into_iter().map(|n| (id, n)));
        self.adopt();
        p
    }

    pub fn state(&self, id: ThreadId) -> &LocalThreadState {
        &self.workers[&id].state
    }

    pub fn node_of(&self, id: ThreadId) -> TxnId {
        self.g.trie.thread(id).unwrap().node
    }
}
