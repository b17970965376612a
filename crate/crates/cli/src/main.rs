use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcml::ast::Expr;
use tcml::bench::{run_bench_traced, BenchSpec, Benchmark, RoleCounts};
use tcml::parser::parse_program;
use tcml::refsem::{program_outcomes, SearchConfig};
use tcml::runtime::{read_ndjson, run_program, write_ndjson, RunConfig};
use tcml::schedulers::{make_policy, PolicyConfig, PolicyKind};
use tcml::tracestats::{check_trace, CheckConfig};
use tcml::typecheck::{check_program, describe, typecheck_with_spans, TypeEnv};

#[derive(Parser)]
#[command(name = "tcml", version, about = "Run, explore and benchmark TCML programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and typecheck a program.
    Check { file: PathBuf },
    /// Run a program on the transactional runtime.
    Run(RunArgs),
    /// Enumerate the outcomes of a program with the reference semantics.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 200)]
        fuel: usize,
        /// Only follow transitions that never abort.
        #[arg(long)]
        abort_free: bool,
        /// Disable the partial-order reductions.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = 2_000_000)]
        max_states: usize,
    },
    /// Measure throughput of a benchmark program.
    Bench(BenchArgs),
    /// Check a recorded trace against the scheduler invariants.
    TraceStats {
        file: PathBuf,
        /// Scheduler that produced the trace; cd and da also check embed
        /// justifications, da the abort timer.
        #[arg(long, default_value = "s")]
        scheduler: PolicyKind,
        #[arg(long, default_value_t = 50.0)]
        da_timeout_ms: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, default_value = "cd")]
    scheduler: PolicyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Staged policies: probability of letting a transaction run on.
    #[arg(long, default_value_t = 0.95)]
    run_prob: f64,
    #[arg(long, default_value_t = 0.05)]
    abort_prob: f64,
    #[arg(long, default_value_t = 50.0)]
    da_timeout_ms: f64,
    /// Single OS thread and virtual time, reproducible from the seed.
    #[arg(long)]
    deterministic: bool,
}

impl PolicyArgs {
    fn config(&self) -> PolicyConfig {
        PolicyConfig {
            run_probability: self.run_prob,
            abort_probability: self.abort_prob,
            da_timeout_ms: self.da_timeout_ms,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Time budget in milliseconds.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_ms: u64,
    /// Write the event trace as newline-delimited JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "3wr")]
    benchmark: Benchmark,
    /// Process count for 3wr and 3wr-ideal.
    #[arg(short = 'n', long, default_value_t = 3)]
    processes: usize,
    #[arg(long, default_value_t = 1)]
    alice: usize,
    #[arg(long, default_value_t = 1)]
    bob: usize,
    #[arg(long, default_value_t = 1)]
    carol: usize,
    #[arg(long, default_value_t = 1)]
    david: usize,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    duration_ms: u64,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long)]
    json: bool,
    /// Print the generated program and exit.
    #[arg(long)]
    emit_source: bool,
    /// Directory for one trace file per repetition.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

enum Failure {
    Program(String),
    Usage(String),
}

type Res = Result<(), Failure>;

fn load(path: &Path) -> Result<Expr, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let parsed = parse_program(&text).map_err(|e| Failure::Program(format!("{}: {e}", path.display())))?;
    typecheck_with_spans(&TypeEnv::new(), &parsed.expr, &parsed.spans)
        .map_err(|e| Failure::Program(format!("{}: {e}", path.display())))?;
    Ok(parsed.expr)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{}: {e}", path.display()))
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn check(file: &Path) -> Res {
    let e = load(file)?;
    let t = check_program(&e).map_err(|e| Failure::Program(e.to_string()))?;
    println!("ok: {}", describe(&t));
    Ok(())
}

fn run(a: &RunArgs) -> Res {
    let e = load(&a.file)?;
    let pc = a.policy.config();
    pc.validate().map_err(Failure::Usage)?;
    let mut cfg = RunConfig { seed: a.policy.seed, max_ms: a.max_ms, trace: a.trace.is_some(), ..RunConfig::default() };
    if !a.policy.deterministic {
        cfg = cfg.concurrent();
    }
    let mut policy = make_policy(a.policy.scheduler, pc);
    let r = run_program(&e, policy.as_mut(), &cfg);
    if let Some(path) = &a.trace {
        let f = File::create(path).map_err(io_err(path))?;
        write_ndjson(&r.trace, BufWriter::new(f)).map_err(io_err(path))?;
    }
    match &r.outcome {
        Some(o) => println!("{}", json(o)),
        None => println!("no outcome within {} ms", a.max_ms),
    }
    eprintln!("{}", json(&r.metrics));
    Ok(())
}

fn bench(a: &BenchArgs) -> Res {
    let mut spec = BenchSpec::new(a.benchmark, a.policy.scheduler);
    spec.process_count = a.processes;
    spec.role_counts = RoleCounts { alice: a.alice, bob: a.bob, carol: a.carol, david: a.david };
    spec.duration_millis = a.duration_ms;
    spec.seed = a.policy.seed;
    spec.repetitions = a.repetitions;
    spec.deterministic = a.policy.deterministic;
    spec.policy = a.policy.config();
    spec.validate().map_err(Failure::Usage)?;
    if a.emit_source {
        println!("{}", spec.source());
        return Ok(());
    }
    let (report, traces) = run_bench_traced(&spec, a.trace_dir.is_some());
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (i, t) in traces.iter().enumerate() {
            let path = dir.join(format!("trace-{}.ndjson", i + 1));
            let f = File::create(&path).map_err(io_err(&path))?;
            write_ndjson(t, BufWriter::new(f)).map_err(io_err(&path))?;
        }
    }
    if a.json {
        println!("{}", json(&report));
    } else {
        println!("{report}");
    }
    Ok(())
}

fn trace_stats(file: &Path, scheduler: PolicyKind, da_timeout_ms: f64, as_json: bool) -> Res {
    let f = File::open(file).map_err(io_err(file))?;
    let events = read_ndjson(BufReader::new(f)).map_err(|e| Failure::Program(format!("{}: {e}", file.display())))?;
    let cfg = CheckConfig {
        justified_embeds: matches!(scheduler, PolicyKind::CommunicationDriven | PolicyKind::DelayedAbort),
        abort_timeout_ns: (scheduler == PolicyKind::DelayedAbort).then_some((da_timeout_ms * 1e6) as u64),
    };
    let stats = check_trace(&events, cfg);
    if as_json {
        println!("{}", json(&stats));
    } else {
        print!("{stats}");
    }
    if stats.ok() {
        Ok(())
    } else {
        Err(Failure::Program(format!("{} violations", stats.violations.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Check { file } => check(file),
        Cmd::Run(a) => run(a),
        Cmd::Oracle { file, fuel, abort_free, exhaustive, max_states } => load(file).map(|e| {
            let mut cfg = SearchConfig::new(*fuel);
            if *abort_free {
                cfg = cfg.abort_free();
            }
            if *exhaustive {
                cfg = cfg.exhaustive();
            }
            cfg.max_states = *max_states;
            println!("{}", json(&program_outcomes(&e, &cfg)));
        }),
        Cmd::Bench(a) => bench(a),
        Cmd::TraceStats { file, scheduler, da_timeout_ms, json } => trace_stats(file, *scheduler, *da_timeout_ms, *json),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Program(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}
