//! Scheduling policies: random (R), staged (S), communication-driven (CD)
//! and delayed-abort (DA).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::TxnId;
use crate::runtime::{Directive, Embeddable, Justification, Policy, Status, ThreadId, Trie};

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub run_probability: f64,
    pub abort_probability: f64,
    pub da_timeout_ms: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { run_probability: 0.95, abort_probability: 0.05, da_timeout_ms: 50.0, seed: 0 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.run_probability) || !ok(self.abort_probability) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if (self.run_probability + self.abort_probability - 1.0).abs() > 1e-9 {
            return Err("run and abort probabilities must sum to 1".into());
        }
        if self.da_timeout_ms < 0.0 {
            return Err("timeout must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "r")]
    Random,
    #[serde(rename = "s")]
    Staged,
    #[serde(rename = "cd")]
    CommunicationDriven,
    #[serde(rename = "da")]
    DelayedAbort,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Random, PolicyKind::Staged, PolicyKind::CommunicationDriven, PolicyKind::DelayedAbort];

    pub fn short(self) -> &'static str {
        match self {
            PolicyKind::Random => "r",
            PolicyKind::Staged => "s",
            PolicyKind::CommunicationDriven => "cd",
            PolicyKind::DelayedAbort => "da",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "random" => Ok(PolicyKind::Random),
            "s" | "staged" => Ok(PolicyKind::Staged),
            "cd" => Ok(PolicyKind::CommunicationDriven),
            "da" => Ok(PolicyKind::DelayedAbort),
            _ => Err(format!("unknown scheduler `{s}` (expected r, s, cd or da)")),
        }
    }
}

pub fn make_policy(kind: PolicyKind, cfg: PolicyConfig) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(cfg.seed)),
        _ => Box::new(StagedPolicy::new(kind, cfg)),
    }
}

/// Picks uniformly among every enabled choice. Letting a running thread
/// take its next step is one of the choices, so a transaction is not aborted
/// the instant it starts.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "r"
    }

    fn decide(&mut self, trie: &Trie, _now: u64) -> Option<Directive> {
        let enabled = trie.enabled_directives();
        let running = trie.threads.values().filter(|t| t.status == Status::Running).count();
        if enabled.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..enabled.len() + running);
        enabled.get(i).cloned()
    }
}

/// Counts of the run-or-abort coin flips.
#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct StageStats {
    pub runs: u64,
    pub aborts: u64,
}

/// S, CD and DA. Rendezvous come first; then each transaction, in random
/// order, gets commit if it can, else an embed, else a coin flip between
/// letting it run and aborting it. CD only embeds to enable a rendezvous; DA
/// additionally waits for the transaction to be idle before aborting.
pub struct StagedPolicy {
    kind: PolicyKind,
    cfg: PolicyConfig,
    rng: ChaCha8Rng,
    pub stats: StageStats,
}

impl StagedPolicy {
    pub fn new(kind: PolicyKind, cfg: PolicyConfig) -> Self {
        StagedPolicy { kind, cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), stats: StageStats::default() }
    }

    fn may_abort(&self, trie: &Trie, k: TxnId, now: u64) -> bool {
        if self.kind != PolicyKind::DelayedAbort {
            return true;
        }
        let idle = now.saturating_sub(trie.nodes[&k].last_activity);
        idle as f64 >= self.cfg.da_timeout_ms * 1e6
    }
}

/// Communication-driven embeds into `k`: a sibling (a thread, or a
/// transaction through its own threads) blocked on a channel where a thread
/// of `k`, or of a transaction directly inside `k`, waits in the other
/// direction.
pub fn justified_embeds(trie: &Trie, k: TxnId) -> Vec<(Embeddable, Justification)> {
    let Some(node) = trie.node(k) else { return Vec::new() };
    let mut partners = trie.blocked_in(k);
    for c in &node.children {
        partners.extend(trie.blocked_in(*c));
    }
    let mut out = Vec::new();
    let mut consider = |what: Embeddable, t: ThreadId| {
        let info = &trie.threads[&t];
        let (Status::Blocked, Some((c, d))) = (&info.status, &info.blocked) else { return };
        for (p, pc, pd) in &partners {
            if pc == c && pd.is_send() != d.is_send() {
                let why = Justification { channel: *c, send: d.is_send(), blocked: t, partner: *p };
                out.push((what, why));
            }
        }
    };
    for what in trie.embed_candidates(k) {
        match what {
            Embeddable::Thread(t) => consider(what, t),
            Embeddable::Txn(m) => {
                for t in &trie.nodes[&m].threads {
                    consider(what, *t);
                }
            }
        }
    }
    out
}

impl Policy for StagedPolicy {
    fn name(&self) -> &'static str {
        self.kind.short()
    }

    fn decide(&mut self, trie: &Trie, now: u64) -> Option<Directive> {
        let syncs = trie.match_syncs();
        if let Some(s) = syncs.choose(&mut self.rng) {
            return Some(Directive::Sync { sender: s.sender, receiver: s.receiver, channel: s.channel });
        }
        let mut txns: Vec<TxnId> = trie.txns().map(|n| n.id).collect();
        txns.shuffle(&mut self.rng);
        for k in txns {
            if trie.commit_enabled(k) {
                return Some(Directive::Commit(k));
            }
            let embed = if self.kind == PolicyKind::Staged {
                trie.embed_candidates(k).choose(&mut self.rng).map(|w| (*w, None))
            } else {
                justified_embeds(trie, k).choose(&mut self.rng).map(|(w, j)| (*w, Some(j.clone())))
            };
            if let Some((what, why)) = embed {
                return Some(Directive::Embed { target: k, what, why });
            }
            if !self.may_abort(trie, k, now) {
                continue;
            }
            if self.rng.gen::<f64>() < self.cfg.abort_probability {
                self.stats.aborts += 1;
                return Some(Directive::Abort(k));
            }
            self.stats.runs += 1;
        }
        None
    }
}
