//! The gatherer's global view: transactional nesting, thread placement and
//! what each thread is waiting for.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{ChannelId, Expr, TxnId, Value};

use super::thread::{alt_names, AltStack, Direction, Status, ThreadId};

/// Key of the root node. Transaction ids come from a counter and never get
/// this high.
pub const ROOT: TxnId = TxnId(u64::MAX);

#[derive(Clone, Debug)]
pub struct TrieNode {
    pub id: TxnId,
    pub parent: Option<TxnId>,
    pub children: BTreeSet<TxnId>,
    pub threads: BTreeSet<ThreadId>,
    /// Multiset of co-tokens sitting at this level.
    pub co_tokens: Vec<TxnId>,
    /// Nanoseconds (wall or virtual) of the last activity in the subtree.
    pub last_activity: u64,
    /// Started by a thread at the root.
    pub outermost: bool,
    /// Outermost transactions already committed into this one.
    pub carried_ops: u64,
    /// Nodes embedded into this transaction, as they were at embedding time.
    pub restores: Vec<RestoreRecord>,
}

impl TrieNode {
    pub fn new(id: TxnId, parent: Option<TxnId>, now: u64) -> Self {
        TrieNode {
            id,
            parent,
            children: BTreeSet::new(),
            threads: BTreeSet::new(),
            co_tokens: Vec::new(),
            last_activity: now,
            outermost: false,
            carried_ops: 0,
            restores: Vec::new(),
        }
    }
}

/// A transaction node without its threads. Threads come back through their
/// own alternatives stacks.
#[derive(Clone, Debug)]
pub struct RestoreRecord {
    pub id: TxnId,
    pub co_tokens: Vec<TxnId>,
    pub outermost: bool,
    pub carried_ops: u64,
    pub children: Vec<RestoreRecord>,
    pub restores: Vec<RestoreRecord>,
}

#[derive(Clone, Debug)]
pub struct ThreadInfo {
    pub id: ThreadId,
    pub node: TxnId,
    pub status: Status,
    pub blocked: Option<(ChannelId, Direction)>,
    /// Last reported expression (blocked redex in context, or final value).
    pub expr: Option<Expr>,
    pub alts: AltStack<()>,
    /// Signals sent so far.
    pub sent: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Embeddable {
    Thread(ThreadId),
    Txn(TxnId),
}

/// Why a communication-driven embed was issued.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Justification {
    pub channel: ChannelId,
    /// Direction of the embedded side.
    pub send: bool,
    pub blocked: ThreadId,
    pub partner: ThreadId,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Directive {
    Sync { sender: ThreadId, receiver: ThreadId, channel: ChannelId },
    Embed { target: TxnId, what: Embeddable, why: Option<Justification> },
    Commit(TxnId),
    Abort(TxnId),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SyncCandidate {
    pub sender: ThreadId,
    pub receiver: ThreadId,
    pub channel: ChannelId,
    pub value: Value,
}

#[derive(Clone, Debug)]
pub struct Trie {
    pub nodes: BTreeMap<TxnId, TrieNode>,
    pub threads: BTreeMap<ThreadId, ThreadInfo>,
    pub version: u64,
}

impl Default for Trie {
    fn default() -> Self {
        Self::new()
    }
}

impl Trie {
    pub fn new() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(ROOT, TrieNode::new(ROOT, None, 0));
        Trie { nodes, threads: BTreeMap::new(), version: 0 }
    }

    pub fn node(&self, k: TxnId) -> Option<&TrieNode> {
        self.nodes.get(&k)
    }

    pub fn thread(&self, t: ThreadId) -> Option<&ThreadInfo> {
        self.threads.get(&t)
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[&ROOT]
    }

    /// Live transactions, in id order.
    pub fn txns(&self) -> impl Iterator<Item = &TrieNode> {
        self.nodes.values().filter(|n| n.id != ROOT)
    }

    pub fn has_txns(&self) -> bool {
        self.nodes.len() > 1
    }

    /// Transaction names from the root down to `k` (root excluded).
    pub fn path(&self, mut k: TxnId) -> Vec<TxnId> {
        let mut out = Vec::new();
        while k != ROOT {
            out.push(k);
            k = self.nodes[&k].parent.expect("non-root node has a parent");
        }
        out.reverse();
        out
    }

    pub fn depth(&self, k: TxnId) -> usize {
        self.path(k).len()
    }

    pub fn subtree(&self, k: TxnId) -> Vec<TxnId> {
        let mut out = vec![k];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[&out[i]].children.iter().copied());
            i += 1;
        }
        out
    }

    pub fn subtree_threads(&self, k: TxnId) -> Vec<ThreadId> {
        self.subtree(k).iter().flat_map(|n| self.nodes[n].threads.iter().copied()).collect()
    }

    pub fn is_ancestor_or_self(&self, anc: TxnId, mut k: TxnId) -> bool {
        loop {
            if k == anc {
                return true;
            }
            match self.nodes.get(&k).and_then(|n| n.parent) {
                Some(p) => k = p,
                None => return false,
            }
        }
    }

    pub fn any_running(&self) -> bool {
        self.threads.values().any(|t| t.status == Status::Running)
    }

    /// Threads of `node` blocked on a channel, with direction.
    pub fn blocked_in(&self, node: TxnId) -> Vec<(ThreadId, ChannelId, &Direction)> {
        self.nodes[&node]
            .threads
            .iter()
            .filter_map(|t| {
                let info = &self.threads[t];
                match (&info.status, &info.blocked) {
                    (Status::Blocked, Some((c, d))) => Some((*t, *c, d)),
                    _ => None,
                }
            })
            .collect()
    }

    /// Every enabled rendezvous: same node, same channel, opposite directions.
    pub fn match_syncs(&self) -> Vec<SyncCandidate> {
        let mut out = Vec::new();
        for n in self.nodes.keys() {
            let blocked = self.blocked_in(*n);
            for (s, c, d) in &blocked {
                let Direction::Send(v) = d else { continue };
                for (r, c2, d2) in &blocked {
                    if c == c2 && !d2.is_send() {
                        out.push(SyncCandidate { sender: *s, receiver: *r, channel: *c, value: v.clone() });
                    }
                }
            }
        }
        out
    }

    pub fn commit_enabled(&self, k: TxnId) -> bool {
        self.nodes.get(&k).is_some_and(|n| n.co_tokens.contains(&k))
    }

    /// Siblings of `k` that may be embedded into it. Finished and dormant
    /// threads are left out: moving them changes nothing observable.
    pub fn embed_candidates(&self, k: TxnId) -> Vec<Embeddable> {
        let Some(parent) = self.nodes.get(&k).and_then(|n| n.parent) else { return Vec::new() };
        let p = &self.nodes[&parent];
        let threads = p
            .threads
            .iter()
            .filter(|t| matches!(self.threads[t].status, Status::Running | Status::Blocked))
            .map(|t| Embeddable::Thread(*t));
        let txns = p.children.iter().filter(|c| **c != k).map(|c| Embeddable::Txn(*c));
        threads.chain(txns).collect()
    }

    /// Every directive enabled in this state.
    pub fn enabled_directives(&self) -> Vec<Directive> {
        let mut out: Vec<Directive> = self
            .match_syncs()
            .into_iter()
            .map(|s| Directive::Sync { sender: s.sender, receiver: s.receiver, channel: s.channel })
            .collect();
        for n in self.txns() {
            if self.commit_enabled(n.id) {
                out.push(Directive::Commit(n.id));
            }
            out.push(Directive::Abort(n.id));
            for what in self.embed_candidates(n.id) {
                out.push(Directive::Embed { target: n.id, what, why: None });
            }
        }
        out
    }

    /// Structural invariants: unique placement, mirror of alternatives
    /// stacks, parent/child agreement.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (id, n) in &self.nodes {
            for c in &n.children {
                let child = self.nodes.get(c).ok_or(format!("missing child {c}"))?;
                if child.parent != Some(*id) {
                    return Err(format!("{c} has the wrong parent"));
                }
            }
            if let Some(p) = n.parent {
                if !self.nodes.get(&p).is_some_and(|pn| pn.children.contains(id)) {
                    return Err(format!("{id} not listed by its parent"));
                }
            }
            for t in &n.threads {
                if !seen.insert(*t) {
                    return Err(format!("{t} appears twice"));
                }
                let info = self.threads.get(t).ok_or(format!("{t} unregistered"))?;
                if info.node != *id {
                    return Err(format!("{t} placed in {id} but records {}", info.node));
                }
            }
        }
        for (t, info) in &self.threads {
            if !seen.contains(t) {
                return Err(format!("{t} is in no node"));
            }
            let mut names = alt_names(&info.alts);
            names.reverse();
            if names != self.path(info.node) {
                return Err(format!("{t}: stack {names:?} does not mirror path {:?}", self.path(info.node)));
            }
            if info.status == Status::Blocked && info.blocked.is_none() {
                return Err(format!("{t} blocked without a channel"));
            }
        }
        Ok(())
    }
}
