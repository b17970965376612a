//! Benchmark programs (three-way rendezvous and Saturday night out), their
//! transaction-free baselines, and throughput measurement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ast::{ChannelId, Expr};
use crate::parser::parse_expr;
use crate::runtime::{run_program, Metrics, RunConfig, TraceEvent};
use crate::schedulers::{make_policy, PolicyConfig, PolicyKind};

/// `restart_k e`: a recursive function that enters `atomic k { e }` and
/// calls itself again from the alternative, applied to unit.
pub fn expand_restart(k: &str, body: Expr) -> Expr {
    let r = format!("restart_{k}");
    let again = Expr::app(Expr::var(&r), Expr::unit());
    Expr::app(Expr::fun(&r, None, Expr::atomic(k, body, again)), Expr::unit())
}

fn restart_src(k: &str, body: &str) -> String {
    format!("(fun restart_{k}() -> atomic {k} {{ {body} }} else {{ restart_{k} () }}) ()")
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "3wr")]
    ThreeWay,
    #[serde(rename = "sno")]
    Sno,
    #[serde(rename = "3wr-ideal")]
    ThreeWayIdeal,
    #[serde(rename = "sno-ideal")]
    SnoIdeal,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::ThreeWay => "3wr",
            Benchmark::Sno => "sno",
            Benchmark::ThreeWayIdeal => "3wr-ideal",
            Benchmark::SnoIdeal => "sno-ideal",
        }
    }

    pub fn is_ideal(self) -> bool {
        matches!(self, Benchmark::ThreeWayIdeal | Benchmark::SnoIdeal)
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "3wr" => Ok(Benchmark::ThreeWay),
            "sno" => Ok(Benchmark::Sno),
            "3wr-ideal" => Ok(Benchmark::ThreeWayIdeal),
            "sno-ideal" => Ok(Benchmark::SnoIdeal),
            _ => Err(format!("unknown benchmark `{s}` (expected 3wr, sno, 3wr-ideal or sno-ideal)")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct RoleCounts {
    pub alice: usize,
    pub bob: usize,
    pub carol: usize,
    pub david: usize,
}

impl RoleCounts {
    pub fn each(n: usize) -> Self {
        RoleCounts { alice: n, bob: n, carol: n, david: n }
    }

    pub fn total(&self) -> usize {
        self.alice + self.bob + self.carol + self.david
    }
}

/// Whether each process performs one operation or loops forever.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    OneShot,
    Loop,
}

fn looping(mode: Mode, name: &str, body: &str) -> String {
    match mode {
        Mode::OneShot => format!("fun {name}() -> {body}"),
        Mode::Loop => format!("fun {name}() -> {body}; {name} ()"),
    }
}

const SNO_ROLES: [(&str, &str); 4] = [
    ("alice", "sync dinner; sync movie"),
    ("bob", "sync dinner; sync dancing"),
    ("carol", "sync dancing"),
    ("david", "sync dancing; sync movie"),
];

/// Saturday night out. `sync c` picks a side of the rendezvous by coin flip;
/// wrong guesses deadlock and are undone by an abort.
pub fn sno_source(counts: RoleCounts, mode: Mode) -> String {
    let mut s = String::from(
        "let dinner = newchan[unit] in\n\
         let dancing = newchan[unit] in\n\
         let movie = newchan[unit] in\n\
         let sync = fun sync(c) -> if flip () then send c () else recv c in\n",
    );
    for (role, body) in SNO_ROLES {
        let txn = restart_src("k", &format!("{body}; commit k"));
        s += &format!("let {role} = {} in\n", looping(mode, role, &txn));
    }
    s += &spawns(&[
        ("alice", counts.alice),
        ("bob", counts.bob),
        ("carol", counts.carol),
        ("david", counts.david),
    ]);
    s
}

/// Without carol and without transactions: the sides of each rendezvous are
/// fixed so that alice, bob and david go round a cycle that never blocks.
pub fn sno_ideal_source(counts: RoleCounts, mode: Mode) -> String {
    let mut s = String::from(
        "let dinner = newchan[unit] in\n\
         let dancing = newchan[unit] in\n\
         let movie = newchan[unit] in\n",
    );
    for (role, body) in [
        ("alice", "send dinner (); recv movie"),
        ("bob", "recv dinner; send dancing ()"),
        ("david", "recv dancing; send movie ()"),
    ] {
        s += &format!("let {role} = {} in\n", looping(mode, role, body));
    }
    s += &spawns(&[("alice", counts.alice), ("bob", counts.bob), ("david", counts.david)]);
    s
}

fn spawns(roles: &[(&str, usize)]) -> String {
    let mut parts = Vec::new();
    for (role, n) in roles {
        for _ in 0..*n {
            parts.push(format!("spawn {role}"));
        }
    }
    if parts.is_empty() {
        return "()".into();
    }
    parts.join(";\n")
}

const LEADER: &str = "\
let a = recv rv in
    let b = recv rv in
    send (snd a) (me, fst b);
    send (snd b) (me, fst a);
    commit k;
    (fst a, fst b)";

const FOLLOWER: &str = "\
let reply = newchan[int * int] in
    send rv (me, reply);
    let got = recv reply in
    commit k;
    got";

const THREE_WAY_HEADER: &str = "let rv = newchan[int * (int * int) chan] in\n";

/// Three-way rendezvous: every process flips between leading (collect two
/// offers, answer each with the other's value) and following (offer a value
/// with a reply channel). Groups that do not add up deadlock and abort.
/// Each process returns the two values it received.
pub fn three_way_source(n: usize, mode: Mode) -> String {
    let txn = restart_src("k", &format!("if flip () then\n    {LEADER}\n  else\n    {FOLLOWER}"));
    let body = match mode {
        Mode::OneShot => format!("fun proc(me) ->\n  {txn}"),
        Mode::Loop => format!("fun proc(me) ->\n  {txn};\n  proc me"),
    };
    let mut s = format!("{THREE_WAY_HEADER}let proc = {body} in\n");
    let spawns: Vec<String> = (1..=n).map(|i| format!("spawn (fun p{i}() -> proc {i})")).collect();
    s += &spawns.join(";\n");
    s
}

/// One-shot three-way rendezvous with the roles fixed: `leaders[i]` says
/// whether process `i + 1` leads.
pub fn three_way_fixed_source(leaders: &[bool]) -> String {
    let lead = restart_src("k", LEADER);
    let follow = restart_src("k", FOLLOWER);
    let mut s = format!(
        "{THREE_WAY_HEADER}let lead = fun lead(me) ->\n  {lead} in\nlet follow = fun follow(me) ->\n  {follow} in\n"
    );
    let spawns: Vec<String> = leaders
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let f = if *l { "lead" } else { "follow" };
            format!("spawn (fun p{}() -> {f} {})", i + 1, i + 1)
        })
        .collect();
    s += &spawns.join(";\n");
    s
}

/// The same exchange without transactions: a matcher takes three offers at
/// a time on `join` and answers each one with the other two values.
pub fn three_way_ideal_source(n: usize, mode: Mode) -> String {
    let offer = "let reply = newchan[int * int] in send join (me, reply); recv reply";
    let body = match mode {
        Mode::OneShot => format!("fun proc(me) -> {offer}"),
        Mode::Loop => format!("fun proc(me) -> {offer}; proc me"),
    };
    let mut s = String::from(
        "let join = newchan[int * (int * int) chan] in\n\
         let matcher = fun matcher() ->\n  \
           let a = recv join in\n  \
           let b = recv join in\n  \
           let c = recv join in\n  \
           send (snd a) (fst b, fst c);\n  \
           send (snd b) (fst a, fst c);\n  \
           send (snd c) (fst a, fst b);\n  \
           matcher () in\n",
    );
    s += &format!("let proc = {body} in\nspawn matcher;\n");
    let spawns: Vec<String> = (1..=n).map(|i| format!("spawn (fun p{i}() -> proc {i})")).collect();
    s += &spawns.join(";\n");
    s
}

pub fn build_sno(counts: RoleCounts, mode: Mode) -> Expr {
    parse_expr(&sno_source(counts, mode)).expect("generated program parses")
}

pub fn build_3wr(n: usize, mode: Mode) -> Expr {
    parse_expr(&three_way_source(n, mode)).expect("generated program parses")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchSpec {
    pub benchmark: Benchmark,
    /// Process count for 3wr and 3wr-ideal.
    pub process_count: usize,
    /// Role counts for sno and sno-ideal.
    pub role_counts: RoleCounts,
    pub duration_millis: u64,
    pub scheduler: PolicyKind,
    pub seed: u64,
    pub repetitions: usize,
    /// Virtual time and a single OS thread instead of wall-clock time.
    pub deterministic: bool,
    #[serde(skip)]
    pub policy: PolicyConfig,
}

impl BenchSpec {
    pub fn new(benchmark: Benchmark, scheduler: PolicyKind) -> Self {
        BenchSpec {
            benchmark,
            process_count: 3,
            role_counts: RoleCounts::each(1),
            duration_millis: 10_000,
            scheduler,
            seed: 0,
            repetitions: 1,
            deterministic: false,
            policy: PolicyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.benchmark {
            Benchmark::ThreeWay | Benchmark::ThreeWayIdeal if self.process_count < 3 => {
                return Err(format!("3wr needs at least 3 processes, got {}", self.process_count));
            }
            Benchmark::Sno if self.role_counts.total() == 0 => {
                return Err("sno needs at least one process".into());
            }
            Benchmark::SnoIdeal
                if self.role_counts.alice + self.role_counts.bob + self.role_counts.david == 0 =>
            {
                return Err("sno-ideal needs at least one alice, bob or david".into());
            }
            _ => {}
        }
        if self.duration_millis == 0 {
            return Err("duration must be positive".into());
        }
        if self.repetitions == 0 {
            return Err("repetitions must be positive".into());
        }
        self.policy.validate()
    }

    pub fn source(&self) -> String {
        match self.benchmark {
            Benchmark::ThreeWay => three_way_source(self.process_count, Mode::Loop),
            Benchmark::ThreeWayIdeal => three_way_ideal_source(self.process_count, Mode::Loop),
            Benchmark::Sno => sno_source(self.role_counts, Mode::Loop),
            Benchmark::SnoIdeal => sno_ideal_source(self.role_counts, Mode::Loop),
        }
    }

    /// How completed operations are counted in the baselines: a rendezvous
    /// on `join` serves one process; on sno's dancing one, on movie two.
    fn op_channels(&self) -> Vec<(ChannelId, u64)> {
        match self.benchmark {
            Benchmark::ThreeWayIdeal => vec![(ChannelId(0), 1)],
            Benchmark::SnoIdeal => vec![(ChannelId(1), 1), (ChannelId(2), 2)],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Repetition {
    pub seed: u64,
    pub ops: u64,
    pub window_secs: f64,
    pub ops_per_sec: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThroughputReport {
    pub benchmark: Benchmark,
    pub scheduler: String,
    pub processes: usize,
    pub deterministic: bool,
    pub ops: u64,
    pub window_secs: f64,
    /// Mean over repetitions.
    pub ops_per_sec: f64,
    pub embeds: u64,
    pub aborts: u64,
    pub commits: u64,
    pub stale_drops: u64,
    pub repetitions: Vec<Repetition>,
}

impl fmt::Display for ThroughputReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let clock = if self.deterministic { "virtual" } else { "wall" };
        writeln!(f, "{} ({} processes), scheduler {}, {clock} time", self.benchmark, self.processes, self.scheduler)?;
        writeln!(f, "{:>4} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>6}", "rep", "ops", "window s", "ops/s", "embeds", "aborts", "commits", "stale")?;
        for (i, r) in self.repetitions.iter().enumerate() {
            let m = &r.metrics;
            writeln!(
                f,
                "{:>4} {:>10} {:>10.2} {:>10.2} {:>8} {:>8} {:>8} {:>6}",
                i + 1, r.ops, r.window_secs, r.ops_per_sec, m.embeds, m.aborts, m.commits, m.stale_drops
            )?;
        }
        write!(f, "mean {:.2} ops/s", self.ops_per_sec)
    }
}

/// Runs the benchmark once per repetition, seeds counting up from
/// `spec.seed`, and optionally hands back each repetition's trace.
pub fn run_bench_traced(spec: &BenchSpec, trace: bool) -> (ThroughputReport, Vec<Vec<TraceEvent>>) {
    let e = parse_expr(&spec.source()).expect("generated program parses");
    let mut reps = Vec::new();
    let mut traces = Vec::new();
    for i in 0..spec.repetitions {
        let seed = spec.seed.wrapping_add(i as u64);
        let mut policy = make_policy(spec.scheduler, PolicyConfig { seed, ..spec.policy });
        let mut cfg = RunConfig {
            seed,
            max_ms: spec.duration_millis,
            trace,
            op_channels: spec.op_channels(),
            check_invariants: false,
            ..RunConfig::default()
        };
        if !spec.deterministic {
            cfg = cfg.concurrent();
        }
        let r = run_program(&e, policy.as_mut(), &cfg);
        let window_secs = (r.elapsed_ns.max(1) as f64) / 1e9;
        reps.push(Repetition {
            seed,
            ops: r.metrics.ops,
            window_secs,
            ops_per_sec: r.metrics.ops as f64 / window_secs,
            metrics: r.metrics,
        });
        traces.push(r.trace);
    }
    let n = reps.len() as f64;
    let sum = |f: &dyn Fn(&Repetition) -> u64| reps.iter().map(f).sum::<u64>();
    let report = ThroughputReport {
        benchmark: spec.benchmark,
        scheduler: if spec.benchmark.is_ideal() { "none".into() } else { spec.scheduler.to_string() },
        processes: match spec.benchmark {
            Benchmark::ThreeWay | Benchmark::ThreeWayIdeal => spec.process_count,
            _ => spec.role_counts.total(),
        },
        deterministic: spec.deterministic,
        ops: sum(&|r| r.ops),
        window_secs: reps.iter().map(|r| r.window_secs).sum(),
        ops_per_sec: reps.iter().map(|r| r.ops_per_sec).sum::<f64>() / n,
        embeds: sum(&|r| r.metrics.embeds),
        aborts: sum(&|r| r.metrics.aborts),
        commits: sum(&|r| r.metrics.commits),
        stale_drops: sum(&|r| r.metrics.stale_drops),
        repetitions: reps,
    };
    (report, traces)
}

pub fn run_bench(spec: &BenchSpec) -> ThroughputReport {
    run_bench_traced(spec, false).0
}
