//! Offline checks of scheduler invariants over a recorded trace.
//!
//! The checker rebuilds the transaction tree from the events alone and
//! verifies:
//! - (a) a transaction commits only when its co-token has reached its own
//!   level, i.e. every inner transaction holding it has resolved first;
//! - (b) every embed is justified by two threads blocked on the same channel
//!   in opposite directions (communication-driven policies);
//! - (c) no transaction is aborted before it has been idle for the timeout
//!   (delayed abort).
//!
//! Paths recorded in the events are also compared against the rebuilt tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use serde_json::Value as Json;

use crate::runtime::{EventKind, TraceEvent};

const ROOT: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckConfig {
    /// Require a justification on every embed.
    pub justified_embeds: bool,
    /// Minimum idle time before an abort, in nanoseconds.
    pub abort_timeout_ns: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    CommitOrder,
    JustifiedEmbed,
    AbortTimer,
    Consistency,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Check::CommitOrder => "commit-order",
            Check::JustifiedEmbed => "justified-embed",
            Check::AbortTimer => "abort-timer",
            Check::Consistency => "consistency",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub seq: u64,
    pub check: Check,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceStats {
    pub events: usize,
    pub counts: BTreeMap<String, usize>,
    /// Sum of the `ops` recorded on commits.
    pub ops: u64,
    pub violations: Vec<Violation>,
}

impl TraceStats {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations_of(&self, check: Check) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }
}

impl fmt::Display for TraceStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} events, {} ops", self.events, self.ops)?;
        for (k, n) in &self.counts {
            writeln!(f, "  {k:<10} {n}")?;
        }
        for c in [Check::CommitOrder, Check::JustifiedEmbed, Check::AbortTimer, Check::Consistency] {
            writeln!(f, "{c}: {} violations", self.violations_of(c))?;
        }
        for v in self.violations.iter().take(20) {
            writeln!(f, "  #{} {}: {}", v.seq, v.check, v.message)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Record {
    id: u64,
    cos: Vec<u64>,
    children: Vec<Record>,
    restores: Vec<Record>,
}

#[derive(Clone, Debug)]
struct Node {
    parent: u64,
    children: BTreeSet<u64>,
    cos: Vec<u64>,
    restores: Vec<Record>,
    last_activity: u64,
}

impl Node {
    fn new(parent: u64, now: u64) -> Self {
        Node { parent, children: BTreeSet::new(), cos: Vec::new(), restores: Vec::new(), last_activity: now }
    }
}

struct Mirror {
    nodes: BTreeMap<u64, Node>,
    blocked: BTreeMap<u64, (u64, bool)>,
    cfg: CheckConfig,
    stats: TraceStats,
}

fn ids(v: &Json, key: &str) -> Vec<u64> {
    v.get(key).and_then(Json::as_array).map(|a| a.iter().filter_map(Json::as_u64).collect()).unwrap_or_default()
}

impl Mirror {
    fn flag(&mut self, e: &TraceEvent, check: Check, message: String) {
        self.stats.violations.push(Violation { seq: e.seq, check, message });
    }

    fn path(&self, mut k: u64) -> Vec<u64> {
        let mut p = Vec::new();
        while k != ROOT {
            p.push(k);
            k = self.nodes.get(&k).map(|n| n.parent).unwrap_or(ROOT);
        }
        p.reverse();
        p
    }

    fn at(e: &TraceEvent) -> u64 {
        e.path.last().copied().unwrap_or(ROOT)
    }

    fn subtree(&self, k: u64) -> Vec<u64> {
        let mut out = vec![k];
        let mut i = 0;
        while i < out.len() {
            if let Some(n) = self.nodes.get(&out[i]) {
                out.extend(n.children.iter().copied());
            }
            i += 1;
        }
        out
    }

    fn record(&self, k: u64) -> Record {
        let n = &self.nodes[&k];
        Record {
            id: k,
            cos: n.cos.clone(),
            children: n.children.iter().map(|c| self.record(*c)).collect(),
            restores: n.restores.clone(),
        }
    }

    fn graft(&mut self, r: &Record, parent: u64, now: u64, out: &mut Vec<u64>) {
        let mut n = Node::new(parent, now);
        n.cos = r.cos.clone();
        n.restores = r.restores.clone();
        self.nodes.insert(r.id, n);
        self.nodes.get_mut(&parent).unwrap().children.insert(r.id);
        out.push(r.id);
        for c in &r.children {
            self.graft(c, r.id, now, out);
        }
    }

    fn event(&mut self, e: &TraceEvent) {
        *self.stats.counts.entry(format!("{:?}", e.kind)).or_default() += 1;
        let k = e.txn.unwrap_or(ROOT);
        if e.kind == EventKind::TxnStart {
            let parent = if e.path.len() >= 2 { e.path[e.path.len() - 2] } else { ROOT };
            if !self.nodes.contains_key(&parent) || self.nodes.contains_key(&k) {
                self.flag(e, Check::Consistency, format!("txn_start of {k} under unknown {parent}"));
                return;
            }
            self.nodes.insert(k, Node::new(parent, e.wall_nanos));
            self.nodes.get_mut(&parent).unwrap().children.insert(k);
        }
        let at = Self::at(e);
        if !self.nodes.contains_key(&at) || self.path(at) != e.path {
            self.flag(e, Check::Consistency, format!("recorded path {:?} does not match the tree", e.path));
            return;
        }
        if matches!(
            e.kind,
            EventKind::TxnStart
                | EventKind::Co
                | EventKind::Sync
                | EventKind::Embed
                | EventKind::Commit
                | EventKind::Abort
        ) {
            for n in &e.path {
                self.nodes.get_mut(n).unwrap().last_activity = e.wall_nanos;
            }
        }
        match e.kind {
            EventKind::Co => self.nodes.get_mut(&at).unwrap().cos.push(k),
            EventKind::Block => {
                let c = e.extra.get("channel").and_then(Json::as_u64).unwrap_or_default();
                let send = e.extra.get("send").and_then(Json::as_bool).unwrap_or_default();
                self.blocked.insert(e.thread.unwrap_or_default(), (c, send));
            }
            EventKind::Sync => {
                self.blocked.remove(&e.thread.unwrap_or_default());
                if let Some(s) = e.extra.get("sender").and_then(Json::as_u64) {
                    self.blocked.remove(&s);
                }
            }
            EventKind::Finish | EventKind::Kill => {
                self.blocked.remove(&e.thread.unwrap_or_default());
            }
            EventKind::Embed => self.embed(e, k),
            EventKind::Commit => self.commit(e, k, at),
            EventKind::Abort => self.abort(e, k, at),
            _ => {}
        }
    }

    fn embed(&mut self, e: &TraceEvent, k: u64) {
        if self.cfg.justified_embeds {
            self.check_justified(e);
        }
        if let Some(m) = e.extra.get("movedTxn").and_then(Json::as_u64) {
            let Some(old) = self.nodes.get(&m).map(|n| n.parent) else {
                self.flag(e, Check::Consistency, format!("embed of unknown transaction {m}"));
                return;
            };
            let rec = self.record(m);
            self.nodes.get_mut(&old).unwrap().children.remove(&m);
            let target = self.nodes.get_mut(&k).unwrap();
            target.restores.push(rec);
            target.children.insert(m);
            self.nodes.get_mut(&m).unwrap().parent = k;
        }
    }

    fn check_justified(&mut self, e: &TraceEvent) {
        let j = e.extra.get("justification").cloned().unwrap_or(Json::Null);
        if j.is_null() {
            self.flag(e, Check::JustifiedEmbed, "embed without justification".into());
            return;
        }
        let num = |key: &str| j.get(key).and_then(Json::as_u64);
        let (Some(c), Some(b), Some(p), Some(send)) =
            (num("channel"), num("blocked"), num("partner"), j.get("send").and_then(Json::as_bool))
        else {
            self.flag(e, Check::JustifiedEmbed, format!("malformed justification {j}"));
            return;
        };
        if e.thread.is_some_and(|t| t != b) {
            self.flag(e, Check::JustifiedEmbed, format!("justification names t{b}, embed moves t{}", e.thread.unwrap()));
        }
        if self.blocked.get(&b) != Some(&(c, send)) {
            self.flag(e, Check::JustifiedEmbed, format!("t{b} is not blocked on #c{c}"));
        }
        if self.blocked.get(&p) != Some(&(c, !send)) {
            self.flag(e, Check::JustifiedEmbed, format!("partner t{p} is not blocked on #c{c} the other way"));
        }
    }

    fn commit(&mut self, e: &TraceEvent, k: u64, parent: u64) {
        let Some(node) = self.nodes.get(&k) else {
            self.flag(e, Check::Consistency, format!("commit of unknown transaction {k}"));
            return;
        };
        if node.parent != parent {
            self.flag(e, Check::Consistency, format!("commit of {k} into {parent}, but its parent is {}", node.parent));
            return;
        }
        if !node.cos.contains(&k) {
            let holder = self.subtree(k).into_iter().find(|n| self.nodes[n].cos.contains(&k));
            let msg = match holder {
                Some(h) => format!("commit of {k} while its co-token is inside unresolved {h}"),
                None => format!("commit of {k} without a co-token"),
            };
            self.flag(e, Check::CommitOrder, msg);
        }
        let mut node = self.nodes.remove(&k).unwrap();
        if let Some(i) = node.cos.iter().position(|c| *c == k) {
            node.cos.remove(i);
        }
        for c in &node.children {
            self.nodes.get_mut(c).unwrap().parent = parent;
        }
        let p = self.nodes.get_mut(&parent).unwrap();
        p.children.remove(&k);
        p.children.extend(node.children);
        p.cos.extend(node.cos);
        self.stats.ops += e.extra.get("ops").and_then(Json::as_u64).unwrap_or_default();
    }

    fn abort(&mut self, e: &TraceEvent, k: u64, parent: u64) {
        if self.nodes.get(&k).map(|n| n.parent) != Some(parent) {
            self.flag(e, Check::Consistency, format!("abort of {k} not under {parent}"));
            return;
        }
        if let Some(timeout) = self.cfg.abort_timeout_ns {
            let idle = e.wall_nanos.saturating_sub(self.nodes[&k].last_activity);
            if idle < timeout {
                self.flag(e, Check::AbortTimer, format!("abort of {k} after {:.3} ms idle", idle as f64 / 1e6));
            }
        }
        let restores = self.nodes[&k].restores.clone();
        for n in self.subtree(k) {
            self.nodes.remove(&n);
        }
        self.nodes.get_mut(&parent).unwrap().children.remove(&k);
        let mut grafted = Vec::new();
        for r in &restores {
            self.graft(r, parent, e.wall_nanos, &mut grafted);
        }
        if grafted != ids(&e.extra, "restoredNodes") {
            self.flag(e, Check::Consistency, format!("abort of {k} restored {grafted:?}, trace says {}", e.extra["restoredNodes"]));
        }
        for key in ["restored", "killed", "dormant"] {
            for t in ids(&e.extra, key) {
                self.blocked.remove(&t);
            }
        }
    }
}

pub fn check_trace(events: &[TraceEvent], cfg: CheckConfig) -> TraceStats {
    let mut m = Mirror { nodes: BTreeMap::new(), blocked: BTreeMap::new(), cfg, stats: TraceStats::default() };
    m.nodes.insert(ROOT, Node::new(ROOT, 0));
    for e in events {
        m.event(e);
    }
    m.stats.events = events.len();
    m.stats
}
