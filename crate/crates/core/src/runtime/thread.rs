//! Worker side: a thread's local state, the signals it obeys and the
//! notifications it emits.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{decompose, substitute_txn, ChannelId, Decomposed, Expr, Redex, TxnId, Value};
use crate::refsem::{step_seq, SeqStep};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ThreadId(pub u64);

impl std::fmt::Display for ThreadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// What a thread returns to when a transaction it belongs to aborts.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Snapshot<S> {
    /// Resume from this state.
    Run(S),
    /// The thread was not running when it entered the transaction (it had
    /// been discarded by an inner abort); it returns to that state.
    Dormant,
    /// Created inside the transaction's default: discarded on abort.
    Spawned,
}

impl<S> Snapshot<S> {
    pub fn kind(&self) -> Snapshot<()> {
        match self {
            Snapshot::Run(_) => Snapshot::Run(()),
            Snapshot::Dormant => Snapshot::Dormant,
            Snapshot::Spawned => Snapshot::Spawned,
        }
    }
}

/// One entry of a thread's alternatives stack. `inner` keeps the entries that
/// were inner to this one when it was pushed, so a rollback also restores the
/// nesting the thread had at that moment.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Alternative<S> {
    pub tname: TxnId,
    pub snapshot: Snapshot<S>,
    pub inner: Vec<Alternative<S>>,
}

/// Alternatives stack, innermost first. The runtime keeps the thread's copy
/// (with expressions) and the gatherer a mirror (with `()`); both are edited
/// through these functions only.
pub type AltStack<S> = Vec<Alternative<S>>;

pub fn alt_push<S: Clone>(stack: &mut AltStack<S>, tname: TxnId, outer: usize, snapshot: Snapshot<S>) {
    let at = stack.len() - outer.min(stack.len());
    let inner = stack[..at].to_vec();
    stack.insert(at, Alternative { tname, snapshot, inner });
}

fn alt_index<S>(stack: &AltStack<S>, k: TxnId) -> Option<usize> {
    stack.iter().position(|a| a.tname == k)
}

pub fn alt_drop<S>(stack: &mut AltStack<S>, k: TxnId) {
    if let Some(i) = alt_index(stack, k) {
        stack.remove(i);
    }
}

/// Rolls back to the `k` entry; returns its snapshot.
pub fn alt_rollback<S: Clone>(stack: &mut AltStack<S>, k: TxnId) -> Option<Snapshot<S>> {
    let i = alt_index(stack, k)?;
    let entry = stack[i].clone();
    let mut next = entry.inner;
    next.extend(stack.drain(i + 1..));
    *stack = next;
    Some(entry.snapshot)
}

/// Drops the `k` entry and everything inner to it.
pub fn alt_discard<S>(stack: &mut AltStack<S>, k: TxnId) {
    if let Some(i) = alt_index(stack, k) {
        stack.drain(..=i);
    }
}

/// True when some entry could bring the thread back to life.
pub fn alt_revivable<S>(stack: &AltStack<S>) -> bool {
    stack.iter().any(|a| matches!(a.snapshot, Snapshot::Run(_)))
}

pub fn alt_names<S>(stack: &AltStack<S>) -> Vec<TxnId> {
    stack.iter().map(|a| a.tname).collect()
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Direction {
    Send(Value),
    Recv,
}

impl Direction {
    pub fn is_send(&self) -> bool {
        matches!(self, Direction::Send(_))
    }
}

/// Thread to gatherer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Notification {
    Spawned { thunk: Value },
    TxnStarted { txn: TxnId },
    CoSpawned { txn: TxnId },
    BlockedOn { channel: ChannelId, direction: Direction, expr: Expr },
    Finished { value: Value },
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub thread: ThreadId,
    /// Number of signals the thread had applied when it sent this.
    pub seen: u64,
    pub note: Notification,
}

/// Gatherer to thread. Every signal except `Response` counts towards `seen`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Signal {
    Response(bool),
    PushAlt { txn: TxnId, outer: usize },
    DropAlt(TxnId),
    Rollback(TxnId),
    Discard(TxnId),
    Deliver(Value),
    Kill,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Status {
    Running,
    Blocked,
    Finished,
    Dormant,
    Dead,
}

/// Identifier sources shared by every thread of a run.
#[derive(Default, Debug)]
pub struct Counters {
    pub channels: AtomicU64,
    pub txns: AtomicU64,
}

/// A worker's local state: its expression (the evaluation context is
/// recovered by decomposition) and its alternatives stack.
#[derive(Clone, Debug)]
pub struct LocalThreadState {
    pub id: ThreadId,
    pub expr: Expr,
    pub alternatives: AltStack<Expr>,
    pub status: Status,
    pub seen: u64,
}

impl LocalThreadState {
    pub fn new(id: ThreadId, expr: Expr, alternatives: AltStack<Expr>) -> Self {
        LocalThreadState { id, expr, alternatives, status: Status::Running, seen: 0 }
    }

    fn snapshot(&self) -> Snapshot<Expr> {
        match self.status {
            Status::Dormant | Status::Dead => Snapshot::Dormant,
            _ => Snapshot::Run(self.expr.clone()),
        }
    }

    /// Applies one signal at a safe point.
    pub fn apply(&mut self, s: Signal) {
        if !matches!(s, Signal::Response(_)) {
            self.seen += 1;
        }
        match s {
            Signal::Response(_) => {}
            Signal::PushAlt { txn, outer } => {
                let snap = self.snapshot();
                alt_push(&mut self.alternatives, txn, outer, snap);
            }
            Signal::DropAlt(k) => alt_drop(&mut self.alternatives, k),
            Signal::Rollback(k) => match alt_rollback(&mut self.alternatives, k) {
                Some(Snapshot::Run(e)) => {
                    self.expr = e;
                    self.status = Status::Running;
                }
                _ => self.status = Status::Dormant,
            },
            Signal::Discard(k) => {
                alt_discard(&mut self.alternatives, k);
                self.status = Status::Dormant;
            }
            Signal::Deliver(v) => {
                if let Ok(Decomposed::Split(ctx, _)) = decompose(&self.expr) {
                    self.expr = ctx.plug(Expr::val(v));
                }
                self.status = Status::Running;
            }
            Signal::Kill => self.status = Status::Dead,
        }
    }
}

/// The worker's link to the gatherer.
pub trait WorkerIo {
    /// Sends a notification and waits for the gatherer's verdict. Signals
    /// that arrive meanwhile are applied to `state` in order.
    fn notify(&mut self, state: &mut LocalThreadState, note: Notification) -> bool;
    /// Next pending signal; waits for one if `block` is set.
    fn next_signal(&mut self, block: bool) -> Option<Signal>;
}

/// Evaluation loop of one thread.
pub struct Worker {
    pub state: LocalThreadState,
    rng: ChaCha8Rng,
    counters: Arc<Counters>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Progress {
    /// Still running; call again.
    Runnable,
    /// Waiting for a signal.
    Parked,
    Exited,
}

impl Worker {
    pub fn new(state: LocalThreadState, seed: u64, counters: Arc<Counters>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ state.id.0.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Worker { state, rng, counters }
    }

    fn drain(&mut self, io: &mut dyn WorkerIo) {
        while let Some(s) = io.next_signal(false) {
            self.state.apply(s);
        }
    }

    /// Runs at most `fuel` reductions. Parked threads only apply signals.
    pub fn run(&mut self, io: &mut dyn WorkerIo, fuel: usize) -> Progress {
        self.drain(io);
        for _ in 0..fuel {
            match self.state.status {
                Status::Dead => return Progress::Exited,
                Status::Running => {}
                _ => return Progress::Parked,
            }
            self.step(io);
            self.drain(io);
        }
        match self.state.status {
            Status::Dead => Progress::Exited,
            Status::Running => Progress::Runnable,
            _ => Progress::Parked,
        }
    }

    /// Blocks until a signal arrives, then applies it.
    pub fn wait(&mut self, io: &mut dyn WorkerIo) -> bool {
        match io.next_signal(true) {
            Some(s) => {
                self.state.apply(s);
                true
            }
            None => false,
        }
    }

    fn step(&mut self, io: &mut dyn WorkerIo) {
        let st = &mut self.state;
        let step = match step_seq(&st.expr) {
            Ok(s) => s,
            Err(e) => panic!("{} is stuck: {e}", st.id),
        };
        match step {
            SeqStep::Stepped(next) => st.expr = next,
            SeqStep::Value(value) => {
                if io.notify(st, Notification::Finished { value }) {
                    st.status = Status::Finished;
                }
            }
            SeqStep::Blocked => {
                let Ok(Decomposed::Split(_, redex)) = decompose(&st.expr) else { unreachable!() };
                let (channel, direction) = match crate::ast::classify(&redex) {
                    Ok(Redex::Send(c, v)) => (c, Direction::Send(v)),
                    Ok(Redex::Recv(c)) => (c, Direction::Recv),
                    _ => unreachable!(),
                };
                let note = Notification::BlockedOn { channel, direction, expr: st.expr.clone() };
                if io.notify(st, note) {
                    st.status = Status::Blocked;
                }
            }
            SeqStep::Effect(ctx, redex) => match redex {
                Redex::Flip => st.expr = ctx.plug(Expr::bool(self.rng.gen())),
                Redex::NewChan(_) => {
                    let c = ChannelId(self.counters.channels.fetch_add(1, Ordering::Relaxed));
                    st.expr = ctx.plug(Expr::chan(c));
                }
                Redex::Spawn(thunk) => {
                    if io.notify(st, Notification::Spawned { thunk }) {
                        st.expr = ctx.plug(Expr::unit());
                    }
                }
                Redex::Atomic(k, e1, e2) => {
                    let txn = TxnId(self.counters.txns.fetch_add(1, Ordering::Relaxed));
                    let alt = ctx.plug(e2);
                    if io.notify(st, Notification::TxnStarted { txn }) {
                        let outer = st.alternatives.len();
                        alt_push(&mut st.alternatives, txn, outer, Snapshot::Run(alt));
                        st.expr = ctx.plug(substitute_txn(&e1, &k, txn));
                    }
                }
                Redex::Commit(txn) => {
                    if io.notify(st, Notification::CoSpawned { txn }) {
                        st.expr = ctx.plug(Expr::unit());
                    }
                }
                _ => unreachable!(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &AltStack<()>) -> Vec<u64> {
        s.iter().map(|a| a.tname.0).collect()
    }

    #[test]
    fn push_respects_outer_depth() {
        let mut s: AltStack<()> = Vec::new();
        alt_push(&mut s, TxnId(1), 0, Snapshot::Run(()));
        assert_eq!(names(&s), vec![1]);
        // Embedding the node of 1 into 2 (a sibling at root).
        alt_push(&mut s, TxnId(2), 0, Snapshot::Run(()));
        assert_eq!(names(&s), vec![1, 2]);
        assert_eq!(names(&s[1].inner), vec![1]);
        // A thread directly in 1 (depth 2) embedded into 3, a child of 1.
        alt_push(&mut s, TxnId(3), 2, Snapshot::Run(()));
        assert_eq!(names(&s), vec![3, 1, 2]);
    }

    #[test]
    fn rollback_restores_inner_nesting() {
        let mut s: AltStack<()> = Vec::new();
        alt_push(&mut s, TxnId(1), 0, Snapshot::Run(()));
        alt_push(&mut s, TxnId(2), 0, Snapshot::Run(()));
        alt_push(&mut s, TxnId(5), 2, Snapshot::Run(()));
        alt_drop(&mut s, TxnId(1));
        assert_eq!(names(&s), vec![5, 2]);
        assert_eq!(alt_rollback(&mut s, TxnId(2)), Some(Snapshot::Run(())));
        assert_eq!(names(&s), vec![1]);
    }

    #[test]
    fn discard_drops_inner_entries() {
        let mut s: AltStack<()> = Vec::new();
        alt_push(&mut s, TxnId(1), 0, Snapshot::Run(()));
        alt_push(&mut s, TxnId(2), 1, Snapshot::Spawned);
        alt_discard(&mut s, TxnId(2));
        assert_eq!(names(&s), vec![1]);
        assert!(alt_revivable(&s));
    }
}
