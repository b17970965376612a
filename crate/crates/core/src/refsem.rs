//! Exhaustive reference semantics.
//!
//! States are kept in a canonical form: parallel composition is flattened into
//! sorted multisets, restrictions are hoisted into one top-level set, dead
//! co-tokens are dropped and restricted channels and transaction names are
//! renumbered by first occurrence. Two states that are equal up to reordering
//! and renaming of bound names therefore usually compare equal, which is what
//! makes memoised search over restarting transactions terminate.
//!
//! [`enumerate_steps`] returns the exact one-step successor set of the
//! reduction relation. [`outcomes`] explores it breadth-first.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{DefaultHasher, Hasher};

use serde::{Deserialize, Serialize};

use crate::ast::{
    decompose, expr_channels, map_ids, reduce_pure, substitute_txn, visit_ids, AstError,
    ChannelId, Decomposed, EvalContext, Expr, Id, Name, Process, Redex, TxnId, Value,
};
use crate::pretty::print_expr;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TxnNode {
    pub name: TxnId,
    pub default: Node,
    pub alternative: Node,
}

/// One parallel level: threads, co-tokens and nested transactions.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Node {
    pub threads: Vec<Expr>,
    pub cos: Vec<TxnId>,
    pub txns: Vec<TxnNode>,
}

impl Node {
    fn splice(&mut self, other: Node) {
        self.threads.extend(other.threads);
        self.cos.extend(other.cos);
        self.txns.extend(other.txns);
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty() && self.cos.is_empty() && self.txns.is_empty()
    }

    fn visit_ids(&self, f: &mut impl FnMut(Id)) {
        for t in &self.threads {
            visit_ids(t, f);
        }
        for k in &self.cos {
            f(Id::Txn(*k));
        }
        for t in &self.txns {
            f(Id::Txn(t.name));
            t.default.visit_ids(f);
            t.alternative.visit_ids(f);
        }
    }

    fn map_ids(
        &self,
        chan: &mut impl FnMut(ChannelId) -> ChannelId,
        txn: &mut impl FnMut(TxnId) -> TxnId,
    ) -> Node {
        Node {
            threads: self.threads.iter().map(|e| map_ids(e, chan, txn)).collect(),
            cos: self.cos.iter().map(|k| txn(*k)).collect(),
            txns: self
                .txns
                .iter()
                .map(|t| TxnNode {
                    name: txn(t.name),
                    default: t.default.map_ids(chan, txn),
                    alternative: t.alternative.map_ids(chan, txn),
                })
                .collect(),
        }
    }

    fn sort(&mut self) {
        self.threads.sort();
        self.cos.sort();
        for t in &mut self.txns {
            t.default.sort();
            t.alternative.sort();
        }
        self.txns.sort();
    }

    /// Sorts by structure with every identifier erased, so that the order does
    /// not depend on the names in play. Returns the erased hash of the node.
    fn sort_erased(&mut self) -> u64 {
        let mut txns: Vec<(u64, TxnNode)> = self
            .txns
            .drain(..)
            .map(|mut t| {
                let mut h = DefaultHasher::new();
                h.write_u64(t.default.sort_erased());
                h.write_u64(t.alternative.sort_erased());
                (h.finish(), t)
            })
            .collect();
        txns.sort_by_key(|p| p.0);
        self.threads.sort_by_key(|e| e.erased_hash());
        let mut h = DefaultHasher::new();
        for t in &self.threads {
            h.write_u64(t.erased_hash());
        }
        h.write_usize(self.cos.len());
        for (k, _) in &txns {
            h.write_u64(*k);
        }
        self.txns = txns.into_iter().map(|p| p.1).collect();
        h.finish()
    }

    /// Drops co-tokens naming no enclosing transaction; they can never fire.
    fn drop_dead_cos(&mut self, scope: &mut Vec<TxnId>) {
        self.cos.retain(|k| scope.contains(k));
        for t in &mut self.txns {
            t.alternative.drop_dead_cos(scope);
            scope.push(t.name);
            t.default.drop_dead_cos(scope);
            scope.pop();
        }
    }

    fn has_txns(&self) -> bool {
        !self.txns.is_empty()
    }

    fn node_at(&self, path: &[usize]) -> &Node {
        path.iter().fold(self, |n, &i| &n.txns[i].default)
    }

    fn node_at_mut(&mut self, path: &[usize]) -> &mut Node {
        path.iter().fold(self, |n, &i| &mut n.txns[i].default)
    }

    fn to_process(&self) -> Process {
        let mut parts: Vec<Process> = self.threads.iter().cloned().map(Process::Expr).collect();
        parts.extend(self.cos.iter().map(|k| Process::Co(*k)));
        parts.extend(self.txns.iter().map(|t| {
            Process::trans(t.name, t.default.to_process(), t.alternative.to_process())
        }));
        Process::par_all(parts)
    }
}

/// A process in canonical form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct CanonicalState {
    pub restricted: BTreeSet<ChannelId>,
    pub root: Node,
}

impl CanonicalState {
    pub fn is_transaction_free(&self) -> bool {
        !self.root.has_txns()
    }

    pub fn to_process(&self) -> Process {
        self.restricted
            .iter()
            .rev()
            .fold(self.root.to_process(), |p, c| Process::nu(*c, p))
    }

    fn max_ids(&self) -> (u64, u64) {
        let (mut c, mut k) = (0, 0);
        for r in &self.restricted {
            c = c.max(r.0 + 1);
        }
        self.root.visit_ids(&mut |id| match id {
            Id::Chan(x) => c = c.max(x.0 + 1),
            Id::Txn(x) => k = k.max(x.0 + 1),
        });
        (c, k)
    }

    /// Puts a state into canonical form.
    pub fn normalize(mut self) -> CanonicalState {
        self.root.drop_dead_cos(&mut Vec::new());
        for _ in 0..3 {
            let next = self.rename_once();
            if next == self {
                break;
            }
            self = next;
        }
        self
    }

    fn rename_once(&self) -> CanonicalState {
        let mut occurring = BTreeSet::new();
        self.root.visit_ids(&mut |id| {
            if let Id::Chan(c) = id {
                occurring.insert(c);
            }
        });
        let free: BTreeSet<ChannelId> =
            occurring.iter().filter(|c| !self.restricted.contains(c)).copied().collect();
        let offset = free.iter().map(|c| c.0 + 1).max().unwrap_or(0);

        let mut root = self.root.clone();
        root.sort_erased();

        let mut chans: BTreeMap<ChannelId, ChannelId> = BTreeMap::new();
        let mut txns: BTreeMap<TxnId, TxnId> = BTreeMap::new();
        root.visit_ids(&mut |id| match id {
            Id::Chan(c) if !free.contains(&c) => {
                let n = chans.len() as u64;
                chans.entry(c).or_insert(ChannelId(offset + n));
            }
            Id::Chan(_) => {}
            Id::Txn(k) => {
                let n = txns.len() as u64;
                txns.entry(k).or_insert(TxnId(n));
            }
        });
        let mut root = root.map_ids(
            &mut |c| chans.get(&c).copied().unwrap_or(c),
            &mut |k| txns.get(&k).copied().unwrap_or(k),
        );
        root.sort();
        let restricted = chans.values().copied().collect();
        CanonicalState { restricted, root }
    }
}

fn flatten(p: &Process, node: &mut Node, restricted: &mut BTreeSet<ChannelId>) {
    match p {
        Process::Expr(e) => node.threads.push(e.clone()),
        Process::Par(a, b) => {
            flatten(a, node, restricted);
            flatten(b, node, restricted);
        }
        Process::Nu(c, q) => {
            restricted.insert(*c);
            flatten(q, node, restricted);
        }
        Process::Trans(k, d, a) => {
            let mut default = Node::default();
            let mut alternative = Node::default();
            flatten(d, &mut default, restricted);
            flatten(a, &mut alternative, restricted);
            node.txns.push(TxnNode { name: *k, default, alternative });
        }
        Process::Co(k) => node.cos.push(*k),
    }
}

/// Canonical form of a closed process. Channel identifiers are assumed to be
/// globally unique, so every `ν` can be hoisted to the top.
pub fn canonicalize(p: &Process) -> CanonicalState {
    let mut root = Node::default();
    let mut restricted = BTreeSet::new();
    flatten(p, &mut root, &mut restricted);
    CanonicalState { restricted, root }.normalize()
}

/// A thread position: the chain of transaction indices (through defaults)
/// leading to its node, and its index in that node.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ThreadRef {
    pub path: Vec<usize>,
    pub index: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum SeqRule {
    IfTrue,
    IfFalse,
    Let,
    Op,
    App,
}

/// The process embedded by a `TrEmb` step.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum EmbeddedRef {
    Thread(ThreadRef),
    Co(TxnId),
    Txn(TxnId),
}

/// Which rule fired, and where. Transaction names refer to the source state.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum StepLabel {
    Seq(ThreadRef, SeqRule),
    Flip(ThreadRef, bool),
    Sync { channel: ChannelId, sender: ThreadRef, receiver: ThreadRef },
    Spawn(ThreadRef),
    NewChan(ThreadRef),
    Atomic(ThreadRef, Name),
    CommitSpawn(ThreadRef, TxnId),
    Embed { txn: TxnId, process: EmbeddedRef },
    CoCommit(TxnId),
    Abort(TxnId),
}

impl StepLabel {
    pub fn is_abort(&self) -> bool {
        matches!(self, StepLabel::Abort(_))
    }
}

/// Result of a single sequential step on an expression.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SeqStep {
    Value(Value),
    Stepped(Expr),
    /// Waiting on a communication partner.
    Blocked,
    /// A process-level effect: spawn, newchan, atomic, commit or flip.
    Effect(EvalContext, Redex),
}

pub fn step_seq(e: &Expr) -> Result<SeqStep, AstError> {
    match decompose(e)? {
        Decomposed::Value(v) => Ok(SeqStep::Value(v)),
        Decomposed::Split(ctx, redex) => {
            let r = crate::ast::classify(&redex)?;
            if let Some(next) = reduce_pure(&r) {
                return Ok(SeqStep::Stepped(ctx.plug(next?)));
            }
            Ok(match r {
                Redex::Send(..) | Redex::Recv(_) => SeqStep::Blocked,
                _ => SeqStep::Effect(ctx, r),
            })
        }
    }
}

fn seq_rule(r: &Redex) -> SeqRule {
    match r {
        Redex::IfTrue(_) => SeqRule::IfTrue,
        Redex::IfFalse(_) => SeqRule::IfFalse,
        Redex::Let(..) => SeqRule::Let,
        Redex::Op(..) => SeqRule::Op,
        _ => SeqRule::App,
    }
}

struct Fresh {
    chan: u64,
    txn: u64,
}

impl Fresh {
    fn for_state(s: &CanonicalState) -> Fresh {
        let (chan, txn) = s.max_ids();
        Fresh { chan, txn }
    }

    fn chan(&mut self) -> ChannelId {
        self.chan += 1;
        ChannelId(self.chan - 1)
    }

    fn txn(&mut self) -> TxnId {
        self.txn += 1;
        TxnId(self.txn - 1)
    }
}

enum Comm {
    Send(ChannelId, Value, EvalContext),
    Recv(ChannelId, EvalContext),
}

fn comm_of(e: &Expr) -> Option<Comm> {
    match decompose(e).ok()? {
        Decomposed::Split(ctx, redex) => match crate::ast::classify(&redex).ok()? {
            Redex::Send(c, v) => Some(Comm::Send(c, v, ctx)),
            Redex::Recv(c) => Some(Comm::Recv(c, ctx)),
            _ => None,
        },
        Decomposed::Value(_) => None,
    }
}

/// All one-step successors of a canonical state.
pub fn enumerate_steps(s: &CanonicalState) -> Vec<(StepLabel, CanonicalState)> {
    let mut fresh = Fresh::for_state(s);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    steps_at(s, &mut Vec::new(), &mut fresh, &mut |label, next| {
        let next = next.normalize();
        if seen.insert((label.clone(), next.clone())) {
            out.push((label, next));
        }
    });
    out
}

fn with_node(
    s: &CanonicalState,
    path: &[usize],
    f: impl FnOnce(&mut Node, &mut BTreeSet<ChannelId>),
) -> CanonicalState {
    let mut next = s.clone();
    let CanonicalState { restricted, root } = &mut next;
    f(root.node_at_mut(path), restricted);
    next
}

fn steps_at(
    s: &CanonicalState,
    path: &mut Vec<usize>,
    fresh: &mut Fresh,
    emit: &mut impl FnMut(StepLabel, CanonicalState),
) {
    let node = s.root.node_at(path).clone();
    let tref = |i: usize, path: &Vec<usize>| ThreadRef { path: path.clone(), index: i };

    for (i, e) in node.threads.iter().enumerate() {
        let Ok(Decomposed::Split(ctx, redex)) = decompose(e) else { continue };
        let Ok(r) = crate::ast::classify(&redex) else { continue };
        if let Some(Ok(next)) = reduce_pure(&r) {
            let next = ctx.plug(next);
            emit(
                StepLabel::Seq(tref(i, path), seq_rule(&r)),
                with_node(s, path, |n, _| n.threads[i] = next),
            );
            continue;
        }
        match r {
            Redex::Flip => {
                for b in [true, false] {
                    let next = ctx.plug(Expr::bool(b));
                    emit(
                        StepLabel::Flip(tref(i, path), b),
                        with_node(s, path, |n, _| n.threads[i] = next),
                    );
                }
            }
            Redex::Spawn(v) => {
                let cont = ctx.plug(Expr::unit());
                let child = Expr::app(Expr::val(v), Expr::unit());
                emit(
                    StepLabel::Spawn(tref(i, path)),
                    with_node(s, path, |n, _| {
                        n.threads[i] = cont;
                        n.threads.push(child);
                    }),
                );
            }
            Redex::NewChan(_) => {
                let c = fresh.chan();
                let next = ctx.plug(Expr::chan(c));
                emit(
                    StepLabel::NewChan(tref(i, path)),
                    with_node(s, path, |n, restricted| {
                        n.threads[i] = next;
                        restricted.insert(c);
                    }),
                );
            }
            Redex::Atomic(k, e1, e2) => {
                let id = fresh.txn();
                let default = ctx.plug(substitute_txn(&e1, &k, id));
                let alternative = ctx.plug(e2);
                emit(
                    StepLabel::Atomic(tref(i, path), k),
                    with_node(s, path, |n, _| {
                        n.threads.remove(i);
                        n.txns.push(TxnNode {
                            name: id,
                            default: Node { threads: vec![default], ..Node::default() },
                            alternative: Node { threads: vec![alternative], ..Node::default() },
                        });
                    }),
                );
            }
            Redex::Commit(k) => {
                let cont = ctx.plug(Expr::unit());
                emit(
                    StepLabel::CommitSpawn(tref(i, path), k),
                    with_node(s, path, |n, _| {
                        n.threads[i] = cont;
                        n.cos.push(k);
                    }),
                );
            }
            _ => {}
        }
    }

    // CSync: a sender and a receiver at the same level.
    let comms: Vec<Option<Comm>> = node.threads.iter().map(comm_of).collect();
    for (i, ci) in comms.iter().enumerate() {
        let Some(Comm::Send(c, v, sctx)) = ci else { continue };
        for (j, cj) in comms.iter().enumerate() {
            let Some(Comm::Recv(d, rctx)) = cj else { continue };
            if c != d || i == j {
                continue;
            }
            let sent = sctx.plug(Expr::unit());
            let received = rctx.plug(Expr::val(v.clone()));
            emit(
                StepLabel::Sync { channel: *c, sender: tref(i, path), receiver: tref(j, path) },
                with_node(s, path, |n, _| {
                    n.threads[i] = sent;
                    n.threads[j] = received;
                }),
            );
        }
    }

    for (j, t) in node.txns.iter().enumerate() {
        // TrEmb: any sibling process moves into the default and is copied
        // into the alternative.
        for (i, _) in node.threads.iter().enumerate() {
            emit(
                StepLabel::Embed { txn: t.name, process: EmbeddedRef::Thread(tref(i, path)) },
                with_node(s, path, |n, _| {
                    let p = n.threads.remove(i);
                    n.txns[j].default.threads.push(p.clone());
                    n.txns[j].alternative.threads.push(p);
                }),
            );
        }
        for (i, co) in node.cos.iter().enumerate() {
            emit(
                StepLabel::Embed { txn: t.name, process: EmbeddedRef::Co(*co) },
                with_node(s, path, |n, _| {
                    let k = n.cos.remove(i);
                    n.txns[j].default.cos.push(k);
                    n.txns[j].alternative.cos.push(k);
                }),
            );
        }
        for (i, other) in node.txns.iter().enumerate() {
            if i == j {
                continue;
            }
            emit(
                StepLabel::Embed { txn: t.name, process: EmbeddedRef::Txn(other.name) },
                with_node(s, path, |n, _| {
                    let moved = n.txns[i].clone();
                    let target = if i < j { j - 1 } else { j };
                    n.txns.remove(i);
                    n.txns[target].default.txns.push(moved.clone());
                    n.txns[target].alternative.txns.push(moved);
                }),
            );
        }

        // TrCo: a co-token at the transaction's own level.
        if t.default.cos.contains(&t.name) {
            emit(
                StepLabel::CoCommit(t.name),
                with_node(s, path, |n, _| {
                    let mut done = n.txns.remove(j);
                    done.default.cos.retain(|k| *k != done.name);
                    n.splice(done.default);
                }),
            );
        }

        // TrAbort
        emit(
            StepLabel::Abort(t.name),
            with_node(s, path, |n, _| {
                let done = n.txns.remove(j);
                n.splice(done.alternative);
            }),
        );

        // TrStep
        path.push(j);
        steps_at(s, path, fresh, emit);
        path.pop();
    }
}

/// An observable result of a resolved program.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Outcome {
    /// Values of terminated threads.
    pub values: Vec<String>,
    /// Threads blocked on `send c v`, rendered as `c <- v`.
    pub sends: Vec<String>,
    /// Threads blocked on `recv c`, rendered as the channel.
    pub recvs: Vec<String>,
}

impl Outcome {
    /// Projects a transaction-free state. Channels are renumbered by first
    /// occurrence in the projection.
    pub fn of_state(s: &CanonicalState) -> Outcome {
        debug_assert!(s.is_transaction_free());
        let mut free = BTreeSet::new();
        for t in &s.root.threads {
            free.extend(expr_channels(t).into_iter().filter(|c| !s.restricted.contains(c)));
        }
        outcome_of_threads(&s.root.threads, &free)
    }

    pub fn values_only<I: IntoIterator<Item = S>, S: Into<String>>(values: I) -> Outcome {
        let mut values: Vec<String> = values.into_iter().map(Into::into).collect();
        values.sort();
        Outcome { values, sends: Vec::new(), recvs: Vec::new() }
    }
}

/// Projects terminal thread expressions to an outcome. Channels outside
/// `free` are treated as restricted and renamed canonically.
pub fn outcome_of_threads(threads: &[Expr], free: &BTreeSet<ChannelId>) -> Outcome {
    let mut node = Node { threads: threads.to_vec(), ..Node::default() };
    let mut restricted = BTreeSet::new();
    for t in threads {
        restricted.extend(expr_channels(t).into_iter().filter(|c| !free.contains(c)));
    }
    node.sort();
    let state = CanonicalState { restricted, root: node }.normalize();
    let mut out = Outcome { values: Vec::new(), sends: Vec::new(), recvs: Vec::new() };
    for t in &state.root.threads {
        match t.as_value() {
            Some(_) => out.values.push(print_expr(t)),
            None => match comm_of(t) {
                Some(Comm::Send(c, v, _)) => {
                    out.sends.push(format!("#c{} <- {}", c.0, crate::pretty::print_value(&v)))
                }
                Some(Comm::Recv(c, _)) => out.recvs.push(format!("#c{}", c.0)),
                None => out.values.push(format!("stuck {}", print_expr(t))),
            },
        }
    }
    out.values.sort();
    out.sends.sort();
    out.recvs.sort();
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SearchConfig {
    /// Maximum BFS depth.
    pub fuel: usize,
    /// Exclude `TrAbort` edges.
    pub abort_free: bool,
    /// Take deterministic thread-local steps (functional steps, spawn,
    /// newchan, atomic, commit) eagerly, one at a time. These steps commute
    /// with every other transition, so the outcome set is unchanged while
    /// the explored state space shrinks considerably.
    pub eager_pure: bool,
    /// Never embed a finished thread. A value cannot interact, and it ends
    /// up at top level whether the transaction commits or aborts, so the
    /// outcome set is unchanged.
    pub skip_value_embeds: bool,
    /// Hard cap on visited states; exceeding it sets `truncated`.
    pub max_states: usize,
}

impl SearchConfig {
    pub fn new(fuel: usize) -> Self {
        SearchConfig { fuel, abort_free: false, eager_pure: true, skip_value_embeds: true, max_states: 2_000_000 }
    }

    pub fn abort_free(mut self) -> Self {
        self.abort_free = true;
        self
    }

    pub fn exhaustive(mut self) -> Self {
        self.eager_pure = false;
        self.skip_value_embeds = false;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Exploration {
    pub outcomes: BTreeSet<Outcome>,
    pub truncated: bool,
    pub visited: HashSet<CanonicalState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSet {
    pub outcomes: Vec<Outcome>,
    pub truncated: bool,
    pub states: usize,
}

fn eager_step(s: &CanonicalState) -> Option<CanonicalState> {
    fn find(node: &Node, path: &mut Vec<usize>) -> Option<(Vec<usize>, usize, Expr)> {
        for (i, e) in node.threads.iter().enumerate() {
            if let Ok(SeqStep::Stepped(next)) = step_seq(e) {
                return Some((path.clone(), i, next));
            }
        }
        for (j, t) in node.txns.iter().enumerate() {
            path.push(j);
            let r = find(&t.default, path);
            path.pop();
            if r.is_some() {
                return r;
            }
        }
        None
    }
    let (path, i, next) = find(&s.root, &mut Vec::new())?;
    Some(with_node(s, &path, |n, _| n.threads[i] = next).normalize())
}

pub fn successors(s: &CanonicalState, cfg: &SearchConfig) -> Vec<CanonicalState> {
    if cfg.eager_pure {
        if let Some(next) = eager_step(s) {
            return vec![next];
        }
    }
    let steps = enumerate_steps(s);
    if cfg.eager_pure {
        // Spawning, channel creation, entering a transaction and issuing a
        // commit are deterministic and local to one thread; like functional
        // steps they commute with everything else.
        let local = |l: &StepLabel| {
            matches!(l, StepLabel::Spawn(_) | StepLabel::NewChan(_) | StepLabel::Atomic(..) | StepLabel::CommitSpawn(..))
        };
        if let Some((_, t)) = steps.iter().find(|(l, _)| local(l)) {
            return vec![t.clone()];
        }
    }
    let inert = |l: &StepLabel| match l {
        StepLabel::Embed { process: EmbeddedRef::Thread(r), .. } => {
            s.root.node_at(&r.path).threads[r.index].is_value()
        }
        _ => false,
    };
    steps
        .into_iter()
        .filter(|(l, _)| !(cfg.abort_free && l.is_abort()) && !(cfg.skip_value_embeds && inert(l)))
        .map(|(_, t)| t)
        .collect()
}

/// Breadth-first exploration from a canonical state.
pub fn explore(start: CanonicalState, cfg: &SearchConfig) -> Exploration {
    let mut visited = HashSet::new();
    let mut outcomes = BTreeSet::new();
    let mut truncated = false;
    visited.insert(start.clone());
    let mut frontier = vec![start];
    let mut depth = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for s in frontier {
            let succ = successors(&s, cfg);
            if succ.is_empty() {
                if s.is_transaction_free() {
                    outcomes.insert(Outcome::of_state(&s));
                }
                continue;
            }
            if depth >= cfg.fuel || visited.len() >= cfg.max_states {
                truncated = true;
                continue;
            }
            for t in succ {
                if visited.insert(t.clone()) {
                    next.push(t);
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    Exploration { outcomes, truncated, visited }
}

pub fn outcomes_with(p: &Process, cfg: &SearchConfig) -> OutcomeSet {
    let ex = explore(canonicalize(p), cfg);
    OutcomeSet {
        outcomes: ex.outcomes.into_iter().collect(),
        truncated: ex.truncated,
        states: ex.visited.len(),
    }
}

pub fn outcomes(p: &Process, fuel: usize) -> OutcomeSet {
    outcomes_with(p, &SearchConfig::new(fuel))
}

pub fn abortfree_outcomes(p: &Process, fuel: usize) -> OutcomeSet {
    outcomes_with(p, &SearchConfig::new(fuel).abort_free())
}

/// Outcomes of a source program, started as a single thread.
pub fn program_outcomes(e: &Expr, cfg: &SearchConfig) -> OutcomeSet {
    outcomes_with(&Process::Expr(e.clone()), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;

    fn thread(src: &str) -> Process {
        Process::Expr(parse_expr(src).unwrap())
    }

    fn chan_thread(e: Expr) -> Process {
        Process::Expr(e)
    }

    #[test]
    fn parallel_composition_is_associative() {
        let (a, b, c) = (thread("1"), thread("2"), thread("true"));
        let left = Process::par(a.clone(), Process::par(b.clone(), c.clone()));
        let right = Process::par(Process::par(a, b), c);
        assert_eq!(canonicalize(&left), canonicalize(&right));
    }

    #[test]
    fn restriction_is_hoisted() {
        let c = ChannelId(0);
        let d = ChannelId(5);
        let p = Process::par(
            chan_thread(Expr::recv(Expr::chan(c))),
            Process::nu(d, chan_thread(Expr::send(Expr::chan(d), Expr::int(1)))),
        );
        let s = canonicalize(&p);
        assert_eq!(s.restricted.len(), 1);
        let d2 = *s.restricted.iter().next().unwrap();
        assert_ne!(d2, c);
        let mut expected = vec![
            Expr::recv(Expr::chan(c)),
            Expr::send(Expr::chan(d2), Expr::int(1)),
        ];
        expected.sort();
        assert_eq!(s.root.threads, expected);
    }

    #[test]
    fn alpha_variants_coincide() {
        let mk = |c: u64, k: u64| {
            let c = ChannelId(c);
            let k = TxnId(k);
            Process::nu(
                c,
                Process::trans(
                    k,
                    Process::par(Process::Co(k), chan_thread(Expr::recv(Expr::chan(c)))),
                    thread("()"),
                ),
            )
        };
        assert_eq!(canonicalize(&mk(3, 9)), canonicalize(&mk(11, 2)));
    }

    #[test]
    fn transaction_default_is_flattened() {
        let k = TxnId(0);
        let p = Process::trans(k, Process::par(thread("1"), thread("2")), thread("3"));
        let s = canonicalize(&p);
        assert_eq!(s.root.txns.len(), 1);
        assert_eq!(s.root.txns[0].default.threads, vec![Expr::int(1), Expr::int(2)]);
        assert_eq!(s.root.txns[0].alternative.threads, vec![Expr::int(3)]);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let e = parse_expr(
            "let c = newchan[int] in spawn (fun f() -> send c 1); atomic k { recv c; commit k } else { 0 }",
        )
        .unwrap();
        let ex = explore(canonicalize(&Process::Expr(e)), &SearchConfig::new(30).exhaustive());
        for s in ex.visited.iter().take(200) {
            assert_eq!(&s.clone().normalize(), s);
            assert_eq!(&canonicalize(&s.to_process()), s);
        }
    }

    #[test]
    fn step_seq_examples() {
        assert_eq!(step_seq(&parse_expr("let x = 5 in x").unwrap()).unwrap(), SeqStep::Stepped(Expr::int(5)));
        let e = parse_expr("(fun f(x) -> if x <= 0 then 0 else f (x - 1)) 1").unwrap();
        let SeqStep::Stepped(next) = step_seq(&e).unwrap() else { panic!() };
        let expected = parse_expr("if 1 <= 0 then 0 else (fun f(x) -> if x <= 0 then 0 else f (x - 1)) (1 - 1)").unwrap();
        assert_eq!(next, expected);
        let recv = Expr::recv(Expr::chan(ChannelId(0)));
        assert_eq!(step_seq(&recv).unwrap(), SeqStep::Blocked);
        assert_eq!(step_seq(&Expr::int(5)).unwrap(), SeqStep::Value(Value::Int(5)));
    }

    #[test]
    fn ready_transaction_commits_or_aborts() {
        let k = TxnId(0);
        let s = canonicalize(&Process::trans(k, Process::Co(k), thread("7")));
        let steps = enumerate_steps(&s);
        assert_eq!(steps.len(), 2);
        let commit = steps.iter().find(|(l, _)| *l == StepLabel::CoCommit(TxnId(0))).unwrap();
        assert!(commit.1.root.is_empty());
        let abort = steps.iter().find(|(l, _)| *l == StepLabel::Abort(TxnId(0))).unwrap();
        assert_eq!(abort.1, canonicalize(&thread("7")));
    }

    #[test]
    fn single_value_outcome() {
        let out = outcomes(&thread("1"), 10);
        assert_eq!(out.outcomes, vec![Outcome::values_only(["1"])]);
        assert!(!out.truncated);
    }

    #[test]
    fn lonely_transaction_can_only_abort() {
        let e = parse_expr("let c = newchan[unit] in atomic k { recv c; commit k } else { () }").unwrap();
        let out = program_outcomes(&e, &SearchConfig::new(50));
        assert_eq!(out.outcomes, vec![Outcome::values_only(["()"])]);
        assert!(!out.truncated);
    }
}
