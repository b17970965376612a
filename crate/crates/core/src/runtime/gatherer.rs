//! The gatherer: sole owner of the trie. It applies thread notifications and
//! scheduler directives and tells threads how to follow.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ast::{ChannelId, Expr, TxnId, Value};

use super::thread::{
    alt_discard, alt_drop, alt_push, alt_revivable, alt_rollback, Direction, Envelope,
    LocalThreadState, Notification, Signal, Snapshot, Status, ThreadId,
};
use super::trace::{EventKind, TraceEvent};
use super::trie::{Directive, Embeddable, RestoreRecord, ThreadInfo, Trie, TrieNode, ROOT};
use super::Policy;

/// Where the gatherer's signals go.
pub trait Outbox {
    fn send(&mut self, t: ThreadId, s: Signal);
    fn spawn(&mut self, state: LocalThreadState);
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub notifications: u64,
    pub rejected: u64,
    pub policy_invocations: u64,
    pub syncs: u64,
    pub embeds: u64,
    pub commits: u64,
    pub aborts: u64,
    pub stale_drops: u64,
    /// Completed operations: outermost transactions made permanent by a
    /// commit at the root, plus rendezvous on the designated op channel.
    pub ops: u64,
}

pub struct Gatherer<O> {
    pub trie: Trie,
    pub outbox: O,
    /// Current time in nanoseconds, maintained by the driver.
    pub now: u64,
    pub metrics: Metrics,
    pub trace: Option<Vec<TraceEvent>>,
    pub check_invariants: bool,
    /// Rendezvous on these channels count as that many completed operations.
    pub op_channels: Vec<(ChannelId, u64)>,
    next_thread: u64,
    seq: u64,
}

impl<O: Outbox> Gatherer<O> {
    pub fn new(outbox: O, trace: bool) -> Self {
        Gatherer {
            trie: Trie::new(),
            outbox,
            now: 0,
            metrics: Metrics::default(),
            trace: trace.then(Vec::new),
            check_invariants: false,
            op_channels: Vec::new(),
            next_thread: 0,
            seq: 0,
        }
    }

    /// Registers the initial thread at the root.
    pub fn start(&mut self, e: Expr) -> ThreadId {
        let id = self.fresh_thread();
        self.register(id, ROOT, Vec::new());
        self.outbox.spawn(LocalThreadState::new(id, e, Vec::new()));
        id
    }

    fn fresh_thread(&mut self) -> ThreadId {
        self.next_thread += 1;
        ThreadId(self.next_thread - 1)
    }

    fn register(&mut self, id: ThreadId, node: TxnId, alts: Vec<super::thread::Alternative<()>>) {
        self.trie.nodes.get_mut(&node).expect("node exists").threads.insert(id);
        self.trie.threads.insert(
            id,
            ThreadInfo { id, node, status: Status::Running, blocked: None, expr: None, alts, sent: 0 },
        );
    }

    fn signal(&mut self, t: ThreadId, s: Signal) {
        if let Some(info) = self.trie.threads.get_mut(&t) {
            info.sent += 1;
        }
        self.outbox.send(t, s);
    }

    fn emit(&mut self, kind: EventKind, thread: Option<ThreadId>, txn: Option<TxnId>, at: TxnId, extra: serde_json::Value) {
        if self.trace.is_none() {
            return;
        }
        let path = self.trie.path(at).iter().map(|k| k.0).collect();
        let e = TraceEvent {
            seq: self.seq,
            wall_nanos: self.now,
            kind,
            thread: thread.map(|t| t.0),
            txn: txn.map(|k| k.0),
            path,
            extra,
        };
        self.seq += 1;
        self.trace.as_mut().unwrap().push(e);
    }

    /// Resets activity timers on every transaction from the root to `k`.
    fn touch(&mut self, k: TxnId) {
        for n in self.trie.path(k) {
            self.trie.nodes.get_mut(&n).unwrap().last_activity = self.now;
        }
    }

    fn mutated(&mut self) {
        self.trie.version += 1;
        if self.check_invariants {
            if let Err(e) = self.trie.check_invariants() {
                panic!("trie invariant violated: {e}\n{:#?}", self.trie);
            }
        }
    }

    fn move_thread(&mut self, t: ThreadId, to: TxnId) {
        let from = self.trie.threads[&t].node;
        self.trie.nodes.get_mut(&from).unwrap().threads.remove(&t);
        self.trie.nodes.get_mut(&to).unwrap().threads.insert(t);
        self.trie.threads.get_mut(&t).unwrap().node = to;
    }

    fn remove_thread(&mut self, t: ThreadId) {
        self.signal(t, Signal::Kill);
        if let Some(info) = self.trie.threads.remove(&t) {
            if let Some(n) = self.trie.nodes.get_mut(&info.node) {
                n.threads.remove(&t);
            }
        }
        self.emit(EventKind::Kill, Some(t), None, ROOT, serde_json::Value::Null);
    }

    /// A finished thread at the root can never be rolled back; let its
    /// worker go.
    fn release_if_final(&mut self, t: ThreadId) {
        let info = &self.trie.threads[&t];
        if info.status == Status::Finished && info.node == ROOT {
            self.outbox.send(t, Signal::Kill);
        }
    }

    /// Applies a notification. Returns whether it was accepted: a thread that
    /// has not yet applied every signal sent to it is rejected and retries.
    pub fn handle(&mut self, env: Envelope) -> bool {
        self.metrics.notifications += 1;
        let t = env.thread;
        let Some(info) = self.trie.threads.get(&t) else {
            self.metrics.rejected += 1;
            return false;
        };
        if env.seen < info.sent || info.status != Status::Running {
            self.metrics.rejected += 1;
            return false;
        }
        let node = info.node;
        match env.note {
            Notification::Spawned { thunk } => {
                let child = self.fresh_thread();
                let alts: Vec<_> = self.trie.threads[&t]
                    .alts
                    .iter()
                    .map(|a| super::thread::Alternative { tname: a.tname, snapshot: Snapshot::Spawned, inner: Vec::new() })
                    .collect();
                let local = alts
                    .iter()
                    .map(|a| super::thread::Alternative { tname: a.tname, snapshot: Snapshot::Spawned, inner: Vec::new() })
                    .collect();
                self.register(child, node, alts);
                let body = Expr::app(Expr::val(thunk), Expr::unit());
                self.outbox.spawn(LocalThreadState::new(child, body, local));
                self.emit(EventKind::Spawn, Some(child), None, node, json!({ "parent": t.0 }));
            }
            Notification::TxnStarted { txn } => {
                let mut n = TrieNode::new(txn, Some(node), self.now);
                n.outermost = node == ROOT;
                let outermost = n.outermost;
                self.trie.nodes.insert(txn, n);
                self.trie.nodes.get_mut(&node).unwrap().children.insert(txn);
                self.move_thread(t, txn);
                let alts = &mut self.trie.threads.get_mut(&t).unwrap().alts;
                let outer = alts.len();
                alt_push(alts, txn, outer, Snapshot::Run(()));
                self.touch(txn);
                self.emit(EventKind::TxnStart, Some(t), Some(txn), txn, json!({ "outermost": outermost }));
            }
            Notification::CoSpawned { txn } => {
                self.trie.nodes.get_mut(&node).unwrap().co_tokens.push(txn);
                self.touch(node);
                self.emit(EventKind::Co, Some(t), Some(txn), node, serde_json::Value::Null);
            }
            Notification::BlockedOn { channel, direction, expr } => {
                let info = self.trie.threads.get_mut(&t).unwrap();
                info.status = Status::Blocked;
                let send = direction.is_send();
                info.blocked = Some((channel, direction));
                info.expr = Some(expr);
                self.emit(EventKind::Block, Some(t), None, node, json!({ "channel": channel.0, "send": send }));
            }
            Notification::Finished { value } => {
                let info = self.trie.threads.get_mut(&t).unwrap();
                info.status = Status::Finished;
                info.expr = Some(Expr::val(value));
                self.emit(EventKind::Finish, Some(t), None, node, serde_json::Value::Null);
                self.release_if_final(t);
            }
        }
        self.mutated();
        true
    }

    pub fn invoke_policy(&mut self, policy: &mut dyn Policy) {
        self.metrics.policy_invocations += 1;
        if let Some(d) = policy.decide(&self.trie, self.now) {
            self.apply_directive(d);
        }
    }

    fn stale(&mut self, d: &Directive) -> bool {
        self.metrics.stale_drops += 1;
        self.emit(EventKind::StaleDrop, None, None, ROOT, json!({ "directive": format!("{d:?}") }));
        false
    }

    /// Applies a directive after revalidating it. Returns false when it was
    /// dropped as stale.
    pub fn apply_directive(&mut self, d: Directive) -> bool {
        let ok = match &d {
            Directive::Sync { sender, receiver, channel } => self.sync(*sender, *receiver, *channel),
            Directive::Embed { target, what, why } => self.embed(*target, *what, why.as_ref()),
            Directive::Commit(k) => self.commit(*k),
            Directive::Abort(k) => self.abort(*k),
        };
        if !ok {
            return self.stale(&d);
        }
        self.mutated();
        true
    }

    fn sync(&mut self, s: ThreadId, r: ThreadId, c: ChannelId) -> bool {
        let (Some(si), Some(ri)) = (self.trie.threads.get(&s), self.trie.threads.get(&r)) else { return false };
        if si.status != Status::Blocked || ri.status != Status::Blocked || si.node != ri.node {
            return false;
        }
        let value = match (&si.blocked, &ri.blocked) {
            (Some((c1, Direction::Send(v))), Some((c2, Direction::Recv))) if *c1 == c && *c2 == c => v.clone(),
            _ => return false,
        };
        let node = si.node;
        for t in [s, r] {
            let info = self.trie.threads.get_mut(&t).unwrap();
            info.status = Status::Running;
            info.blocked = None;
            info.expr = None;
        }
        self.signal(s, Signal::Deliver(Value::Unit));
        self.signal(r, Signal::Deliver(value.clone()));
        self.metrics.syncs += 1;
        if let Some((_, w)) = self.op_channels.iter().find(|(oc, _)| *oc == c) {
            self.metrics.ops += w;
        }
        self.touch(node);
        self.emit(
            EventKind::Sync,
            Some(r),
            None,
            node,
            json!({ "sender": s.0, "channel": c.0, "value": crate::pretty::print_value(&value) }),
        );
        true
    }

    fn push_alt(&mut self, t: ThreadId, k: TxnId, outer: usize) {
        let info = self.trie.threads.get_mut(&t).unwrap();
        let snap = match info.status {
            Status::Dormant | Status::Dead => Snapshot::Dormant,
            _ => Snapshot::Run(()),
        };
        alt_push(&mut info.alts, k, outer, snap);
        self.signal(t, Signal::PushAlt { txn: k, outer });
    }

    fn record(&self, k: TxnId) -> RestoreRecord {
        let n = &self.trie.nodes[&k];
        RestoreRecord {
            id: k,
            co_tokens: n.co_tokens.clone(),
            outermost: n.outermost,
            carried_ops: n.carried_ops,
            children: n.children.iter().map(|c| self.record(*c)).collect(),
            restores: n.restores.clone(),
        }
    }

    fn embed(&mut self, k: TxnId, what: Embeddable, why: Option<&super::trie::Justification>) -> bool {
        let Some(parent) = self.trie.node(k).and_then(|n| n.parent) else { return false };
        let outer = self.trie.depth(parent);
        let (thread, moved) = match what {
            Embeddable::Thread(t) => {
                let Some(info) = self.trie.thread(t) else { return false };
                if info.node != parent || !matches!(info.status, Status::Running | Status::Blocked) {
                    return false;
                }
                self.move_thread(t, k);
                self.push_alt(t, k, outer);
                (Some(t), None)
            }
            Embeddable::Txn(m) => {
                if m == k || self.trie.node(m).and_then(|n| n.parent) != Some(parent) {
                    return false;
                }
                let rec = self.record(m);
                self.trie.nodes.get_mut(&k).unwrap().restores.push(rec);
                self.trie.nodes.get_mut(&parent).unwrap().children.remove(&m);
                self.trie.nodes.get_mut(&k).unwrap().children.insert(m);
                self.trie.nodes.get_mut(&m).unwrap().parent = Some(k);
                for t in self.trie.subtree_threads(m) {
                    self.push_alt(t, k, outer);
                }
                (None, Some(m))
            }
        };
        self.metrics.embeds += 1;
        self.touch(k);
        let justification = why.map(|j| {
            json!({ "channel": j.channel.0, "send": j.send, "blocked": j.blocked.0, "partner": j.partner.0 })
        });
        self.emit(
            EventKind::Embed,
            thread,
            Some(k),
            k,
            json!({ "movedTxn": moved.map(|m| m.0), "justification": justification }),
        );
        true
    }

    fn commit(&mut self, k: TxnId) -> bool {
        if !self.trie.commit_enabled(k) {
            return false;
        }
        let threads = self.trie.subtree_threads(k);
        let mut node = self.trie.nodes.remove(&k).unwrap();
        let parent = node.parent.unwrap();
        node.co_tokens.retain(|c| *c != k);
        let ops = node.outermost as u64 + node.carried_ops;
        {
            let p = self.trie.nodes.get_mut(&parent).unwrap();
            p.children.remove(&k);
            p.children.extend(node.children.iter().copied());
            p.threads.extend(node.threads.iter().copied());
            p.co_tokens.extend(node.co_tokens.iter().copied());
            if parent != ROOT {
                p.carried_ops += ops;
            }
        }
        for c in &node.children {
            self.trie.nodes.get_mut(c).unwrap().parent = Some(parent);
        }
        for t in &node.threads {
            self.trie.threads.get_mut(t).unwrap().node = parent;
        }
        let permanent = if parent == ROOT { ops } else { 0 };
        self.metrics.ops += permanent;
        for t in threads {
            let info = self.trie.threads.get_mut(&t).unwrap();
            alt_drop(&mut info.alts, k);
            let dead = info.status == Status::Dormant && !alt_revivable(&info.alts);
            self.signal(t, Signal::DropAlt(k));
            if dead {
                self.remove_thread(t);
            } else {
                self.release_if_final(t);
            }
        }
        self.metrics.commits += 1;
        self.touch(parent);
        self.emit(
            EventKind::Commit,
            None,
            Some(k),
            parent,
            json!({ "outermost": node.outermost, "ops": permanent }),
        );
        true
    }

    fn graft(&mut self, rec: &RestoreRecord, parent: TxnId, out: &mut Vec<u64>) {
        let mut n = TrieNode::new(rec.id, Some(parent), self.now);
        n.co_tokens = rec.co_tokens.clone();
        n.outermost = rec.outermost;
        n.carried_ops = rec.carried_ops;
        n.restores = rec.restores.clone();
        self.trie.nodes.insert(rec.id, n);
        self.trie.nodes.get_mut(&parent).unwrap().children.insert(rec.id);
        out.push(rec.id.0);
        for c in &rec.children {
            self.graft(c, rec.id, out);
        }
    }

    fn abort(&mut self, k: TxnId) -> bool {
        let Some(parent) = self.trie.node(k).and_then(|n| n.parent) else { return false };
        let threads = self.trie.subtree_threads(k);
        let restores = self.trie.nodes[&k].restores.clone();
        for n in self.trie.subtree(k) {
            self.trie.nodes.remove(&n);
        }
        self.trie.nodes.get_mut(&parent).unwrap().children.remove(&k);
        let mut restored_nodes = Vec::new();
        for rec in &restores {
            self.graft(rec, parent, &mut restored_nodes);
        }
        let (mut restored, mut killed, mut dormant) = (Vec::new(), Vec::new(), Vec::new());
        for t in threads {
            let info = self.trie.threads.get_mut(&t).unwrap();
            let entry = info.alts.iter().find(|a| a.tname == k).map(|a| a.snapshot.clone());
            let status = match entry {
                Some(Snapshot::Run(())) => {
                    alt_rollback(&mut info.alts, k);
                    Status::Running
                }
                Some(Snapshot::Dormant) => {
                    alt_rollback(&mut info.alts, k);
                    Status::Dormant
                }
                _ => {
                    alt_discard(&mut info.alts, k);
                    Status::Dormant
                }
            };
            let signal = if status == Status::Running || entry == Some(Snapshot::Dormant) {
                Signal::Rollback(k)
            } else {
                Signal::Discard(k)
            };
            info.status = status.clone();
            info.blocked = None;
            info.expr = None;
            let home = info.alts.first().map(|a| a.tname).unwrap_or(ROOT);
            let revivable = alt_revivable(&info.alts);
            self.signal(t, signal);
            // Re-place the thread; its node was removed with the subtree.
            self.trie.threads.get_mut(&t).unwrap().node = home;
            match self.trie.nodes.get_mut(&home) {
                Some(n) => {
                    n.threads.insert(t);
                }
                None => panic!("{t} restored into missing node {home}"),
            }
            if status == Status::Running {
                restored.push(t.0);
            } else if !revivable {
                self.remove_thread(t);
                killed.push(t.0);
            } else {
                dormant.push(t.0);
            }
        }
        self.metrics.aborts += 1;
        self.touch(parent);
        self.emit(
            EventKind::Abort,
            None,
            Some(k),
            parent,
            json!({ "restored": restored, "killed": killed, "dormant": dormant, "restoredNodes": restored_nodes }),
        );
        true
    }

    /// No runnable thread, no transaction and no rendezvous left.
    pub fn quiescent(&self) -> bool {
        !self.trie.has_txns() && !self.trie.any_running() && self.trie.match_syncs().is_empty()
    }

    /// Final expressions of the threads at the root.
    pub fn residue(&self) -> Vec<Expr> {
        self.trie
            .root()
            .threads
            .iter()
            .filter_map(|t| self.trie.threads[t].expr.clone())
            .collect()
    }
}
